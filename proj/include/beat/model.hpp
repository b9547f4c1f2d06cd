// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0
//
// The full model: encoders, the six direction x granularity projection
// groups, optional one-to-one shared-space projections (the baseline
// paradigm), and identity classifiers. Parameters live in one visitable
// container so the optimizer, checkpointing, finite-difference checks and
// per-sample gradient buffers all walk the same canonical order.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "beat/config.hpp"
#include "beat/core.hpp"
#include "beat/encoders.hpp"
#include "beat/remg.hpp"

namespace beat {

struct SharedSpaceParams {
    Mat vis_global, txt_global;      // [C_g x C_g]
    Mat vis_local, txt_local;        // [C_l x C_l]
    Mat vis_nonlocal, txt_nonlocal;  // [C_n x C_n]
};

struct IdClassifierParams {
    Mat global_vis, global_txt;      // [C_g x Q]
    Mat local_vis, local_txt;        // [C_l x Q]
    Mat nonlocal_vis, nonlocal_txt;  // [C_n x Q]
};

struct ModelParams {
    EncoderParams enc;
    RemGroupParams v2t_global, v2t_local, v2t_nonlocal;  // populated when text_space
    RemGroupParams t2v_global, t2v_local, t2v_nonlocal;  // populated when image_space
    std::vector<SharedSpaceParams> shared;
    IdClassifierParams id;
};

// Allocates every array at the shapes the config implies, zero-filled.
ModelParams allocate_params(const TrainConfig& cfg);

using ParamVisitor = std::function<void(const std::string& name, Vec& data,
                                        const std::vector<int>& shape)>;

// Walks every trainable array in canonical checkpoint order.
void visit_params(ModelParams& p, const TrainConfig& cfg, const ParamVisitor& fn);

// ---------------------------------------------------------------------------
// Per-sample encodings (features + projections + tapes for backward)
// ---------------------------------------------------------------------------

struct SharedVecs {
    Vec global;
    std::vector<Vec> local, nonlocal;  // K each
};

struct Projections {
    std::vector<Vec> global;                 // M
    std::vector<std::vector<Vec>> local;     // K x M
    std::vector<std::vector<Vec>> nonlocal;  // K x M
};

struct EncodedImage {
    MultiGrainedFeatures feats;
    Projections to_text;             // image features carried into text space
    std::vector<SharedVecs> shared;  // per shared space

    ImageTape btape;
    Tensor3 fmap;
    VisualHeadsTape htape;
    std::vector<RemTape> rem_g;
    std::vector<std::vector<RemTape>> rem_l, rem_n;  // K x M
};

struct EncodedText {
    MultiGrainedFeatures feats;
    Projections to_image;            // text features carried into image space
    std::vector<SharedVecs> shared;

    TextTape btape;
    Mat seq;
    int len = 0;
    TextHeadsTape htape;
    std::vector<RemTape> rem_g;
    std::vector<std::vector<RemTape>> rem_l, rem_n;
};

// Gradient slots the objectives write into; one per encoded sample.
struct FeatureGrads {
    MultiGrainedFeatures feats;
    Projections proj;
    std::vector<SharedVecs> shared;
};

class Model {
  public:
    explicit Model(const TrainConfig& cfg);

    const TrainConfig& config() const { return cfg_; }
    ModelParams params;

    // Seeded per-array initialization: fan-in uniform everywhere except the
    // second bottleneck matrices, which start at zero so every projection
    // begins as the identity map.
    void init_params(uint64_t seed);

    ModelParams make_grad_buffer() const { return allocate_params(cfg_); }
    size_t parameter_count() const;

    EncodedImage encode_image_sample(const Tensor3& pixels) const;
    EncodedText encode_text_sample(const std::vector<int>& tokens) const;

    FeatureGrads make_feature_grads_image() const;
    FeatureGrads make_feature_grads_text() const;

    // Consume the loss-side gradients and push them through projections,
    // heads and backbone into `grads` (same layout as params).
    void backward_image_sample(const EncodedImage& e, const FeatureGrads& g,
                               ModelParams& grads) const;
    void backward_text_sample(const EncodedText& e, const FeatureGrads& g,
                              ModelParams& grads) const;

    static void accumulate(ModelParams& dst, const ModelParams& src, const TrainConfig& cfg);
    static void zero(ModelParams& p, const TrainConfig& cfg);

  private:
    TrainConfig cfg_;
};

// Pairs the spec's bidirectional embedding contract with a standalone entry
// point: projects every granularity of both samples into the opposite space.
struct EmbeddedPair {
    Projections image_in_text;
    Projections text_in_image;
};
EmbeddedPair bidirectional_embed(const MultiGrainedFeatures& vis,
                                 const MultiGrainedFeatures& txt, const ModelParams& p);

}  // namespace beat
