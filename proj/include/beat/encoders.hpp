// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0
//
// Backbone adapters and the three multi-grained heads: global (max pool +
// FC), local (stripe split / word attention + max pool + FC) and non-local
// (cross-part attention). Forward passes record tapes; every head has a
// matching hand-written backward. No layer carries a bias term.

#pragma once

#include <vector>

#include "beat/core.hpp"

namespace beat {

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct ConvLayer {
    int in_c = 0, out_c = 0, stride = 1;
    Vec w;  // [out][in][3][3], padding 1

    ConvLayer() = default;
    ConvLayer(int in, int out, int s)
        : in_c(in), out_c(out), stride(s), w(static_cast<size_t>(in) * out * 9, 0.0) {}

    double& at(int o, int i, int ky, int kx) {
        return w[((static_cast<size_t>(o) * in_c + i) * 3 + ky) * 3 + kx];
    }
    double at(int o, int i, int ky, int kx) const {
        return w[((static_cast<size_t>(o) * in_c + i) * 3 + ky) * 3 + kx];
    }
};

struct VisualBackbone {
    ConvLayer conv1, conv2, conv3;  // strides 2, 2, 1; relu after 1 and 2
};

struct TextBackbone {
    Mat embed;             // [vocab x E]
    Mat wx_fwd, wh_fwd;    // [E x H], [H x H]
    Mat wx_bwd, wh_bwd;
    Mat proj;              // [2H x C]
};

struct NlmPartParams {
    Mat w_alpha, w_beta, w_gamma;  // [C_l x C_l]
    Mat w_delta;                   // [C_l x C_n]
};

struct NlmParams {
    std::vector<NlmPartParams> parts;  // one set per part
};

struct EncoderParams {
    VisualBackbone vis;
    TextBackbone txt;
    Mat w_global_vis, w_global_txt;  // [C x C_g]
    Mat w_local_vis, w_local_txt;    // [C x C_l]
    Mat wam_queries;                 // [K x C]
    NlmParams nlm_vis, nlm_txt;
};

// ---------------------------------------------------------------------------
// Backbones
// ---------------------------------------------------------------------------

struct ImageTape {
    Tensor3 input;
    Tensor3 a1, a2;  // post-relu stage outputs
};

// [H_img x W_img x 3] -> [H x W x C]; throws on shape mismatch.
Tensor3 encode_image(const Tensor3& pixels, const VisualBackbone& p, ImageTape* tape);
void encode_image_backward(const Tensor3& d_fmap, const ImageTape& tape,
                           const VisualBackbone& p, VisualBackbone& grads);

struct TextTape {
    std::vector<int> tokens;
    std::vector<Vec> h_fwd, h_bwd;  // len x [H]
};

// Token sequence -> [max_tokens x C] with padded rows zeroed; forward and
// backward recurrent states are concatenated then linearly mapped.
Mat encode_text(const std::vector<int>& tokens, int max_tokens, const TextBackbone& p,
                TextTape* tape);
void encode_text_backward(const Mat& d_seq, const TextTape& tape, const TextBackbone& p,
                          TextBackbone& grads);

// ---------------------------------------------------------------------------
// Heads
// ---------------------------------------------------------------------------

struct PoolTape {
    Vec pooled;               // [C] channel-wise max
    std::vector<int> argmax;  // winning position per channel (first wins ties)
};

// Channel-wise max over all spatial positions / the first `len` rows.
void gmp_map(const Tensor3& fmap, int y0, int y1, PoolTape& tape);
void gmp_rows(const Mat& seq, int len, PoolTape& tape);

Vec global_head_visual(const Tensor3& fmap, const Mat& w_g, PoolTape* tape = nullptr);
Vec global_head_text(const Mat& seq, int len, const Mat& w_g, PoolTape* tape = nullptr);

// Contiguous horizontal stripes, top to bottom; concatenation recovers the map.
std::vector<Tensor3> split_visual_parts(const Tensor3& fmap, int num_parts);

struct WamTape {
    Mat weights;  // [K x N]; rows sum to 1 over the valid positions
};

// Part-conditioned text maps: scaled-dot softmax of learned part queries over
// word positions, rows rescaled by the valid length so magnitudes stay
// comparable to the input. Padded rows remain zero.
std::vector<Mat> word_attention(const Mat& seq, int len, const Mat& queries,
                                WamTape* tape = nullptr);

Vec local_head_visual(const Tensor3& fmap, int y0, int y1, const Mat& w_l,
                      PoolTape* tape = nullptr);
Vec local_head_text(const Mat& wam_map, int len, const Mat& w_l, PoolTape* tape = nullptr);

struct NlmTape {
    std::vector<Vec> emb_a, emb_b;  // [K x C_l]: part embeddings for the two roles
    Vec norm_a, norm_b;             // [K]
    Mat scores;                     // [K x K] cosine, diagonal unused
    Mat weights;                    // [K x K] softmax over i != k
    std::vector<Vec> pooled;        // [K x C_l] attention-weighted sums
    std::vector<Vec> agg;           // [K x C_l]
    std::vector<Vec> summed;        // [K x C_l] local + agg
};

// Cross-part attention: requires K >= 2. Zero-norm embeddings score 0.
std::vector<Vec> nonlocal_head(const std::vector<Vec>& locals, const NlmParams& p,
                               NlmTape* tape = nullptr);
void nonlocal_head_backward(const std::vector<Vec>& d_out, const NlmTape& tape,
                            const std::vector<Vec>& locals, const NlmParams& p,
                            NlmParams& grads, std::vector<Vec>& d_locals);

// ---------------------------------------------------------------------------
// Multi-grained bundles
// ---------------------------------------------------------------------------

struct MultiGrainedFeatures {
    Vec global;                 // [C_g]
    std::vector<Vec> local;     // K x [C_l]
    std::vector<Vec> nonlocal;  // K x [C_n]
};

MultiGrainedFeatures zero_features(int num_parts, int c_global, int c_local, int c_nonlocal);

struct VisualHeadsTape {
    PoolTape pool_g;
    std::vector<PoolTape> pool_l;  // K
    NlmTape nlm;
};

struct TextHeadsTape {
    PoolTape pool_g;
    WamTape wam;
    std::vector<Mat> wam_maps;     // K x [N x C]
    std::vector<PoolTape> pool_l;  // K
    NlmTape nlm;
};

MultiGrainedFeatures extract_visual(const Tensor3& fmap, const EncoderParams& p,
                                    int num_parts, VisualHeadsTape* tape);
MultiGrainedFeatures extract_text(const Mat& seq, int len, const EncoderParams& p,
                                  int num_parts, TextHeadsTape* tape);

void extract_visual_backward(const MultiGrainedFeatures& d_feats,
                             const MultiGrainedFeatures& feats, const VisualHeadsTape& tape,
                             const Tensor3& fmap, const EncoderParams& p, int num_parts,
                             EncoderParams& grads, Tensor3& d_fmap);
void extract_text_backward(const MultiGrainedFeatures& d_feats,
                           const MultiGrainedFeatures& feats, const TextHeadsTape& tape,
                           const Mat& seq, int len, const EncoderParams& p, int num_parts,
                           EncoderParams& grads, Mat& d_seq);

}  // namespace beat
