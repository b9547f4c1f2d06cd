// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0

#include "beat/encoders.hpp"

#include <algorithm>
#include <cmath>

namespace beat {

namespace {

int conv_out_dim(int n, int stride) { return (n - 1) / stride + 1; }

// Gathers the 3x3 receptive field around output position (y, x) into a
// [in_c * 9] patch matching the per-output-channel weight block layout.
void gather_patch(const Tensor3& in, int y, int x, int stride, Vec& patch) {
    std::fill(patch.begin(), patch.end(), 0.0);
    for (int ky = 0; ky < 3; ++ky) {
        const int iy = y * stride + ky - 1;
        if (iy < 0 || iy >= in.h) continue;
        for (int kx = 0; kx < 3; ++kx) {
            const int ix = x * stride + kx - 1;
            if (ix < 0 || ix >= in.w) continue;
            const double* src = in.pos(iy, ix);
            for (int i = 0; i < in.c; ++i) patch[static_cast<size_t>(i) * 9 + ky * 3 + kx] = src[i];
        }
    }
}

void scatter_patch(Tensor3& d_in, int y, int x, int stride, const Vec& patch) {
    for (int ky = 0; ky < 3; ++ky) {
        const int iy = y * stride + ky - 1;
        if (iy < 0 || iy >= d_in.h) continue;
        for (int kx = 0; kx < 3; ++kx) {
            const int ix = x * stride + kx - 1;
            if (ix < 0 || ix >= d_in.w) continue;
            double* dst = d_in.pos(iy, ix);
            for (int i = 0; i < d_in.c; ++i)
                dst[i] += patch[static_cast<size_t>(i) * 9 + ky * 3 + kx];
        }
    }
}

Tensor3 conv_forward(const Tensor3& in, const ConvLayer& p) {
    Tensor3 out(conv_out_dim(in.h, p.stride), conv_out_dim(in.w, p.stride), p.out_c);
    const int plen = p.in_c * 9;
    Vec patch(static_cast<size_t>(plen));
    for (int y = 0; y < out.h; ++y) {
        for (int x = 0; x < out.w; ++x) {
            gather_patch(in, y, x, p.stride, patch);
            double* dst = out.pos(y, x);
            for (int o = 0; o < p.out_c; ++o)
                dst[o] = dot(patch.data(), p.w.data() + static_cast<size_t>(o) * plen, plen);
        }
    }
    return out;
}

void conv_backward(const Tensor3& d_out, const Tensor3& in, const ConvLayer& p,
                   ConvLayer& grads, Tensor3* d_in) {
    const int plen = p.in_c * 9;
    Vec patch(static_cast<size_t>(plen));
    Vec d_patch(static_cast<size_t>(plen));
    for (int y = 0; y < d_out.h; ++y) {
        for (int x = 0; x < d_out.w; ++x) {
            gather_patch(in, y, x, p.stride, patch);
            const double* g = d_out.pos(y, x);
            std::fill(d_patch.begin(), d_patch.end(), 0.0);
            for (int o = 0; o < p.out_c; ++o) {
                const double go = g[o];
                if (go == 0.0) continue;
                double* dwb = grads.w.data() + static_cast<size_t>(o) * plen;
                const double* wb = p.w.data() + static_cast<size_t>(o) * plen;
                for (int j = 0; j < plen; ++j) {
                    dwb[j] += go * patch[static_cast<size_t>(j)];
                    d_patch[static_cast<size_t>(j)] += go * wb[j];
                }
            }
            if (d_in) scatter_patch(*d_in, y, x, p.stride, d_patch);
        }
    }
}

void relu_inplace(Tensor3& t) {
    for (double& v : t.d) v = v > 0.0 ? v : 0.0;
}

// masks d where the post-relu activation is zero
void relu_backward_inplace(Tensor3& d, const Tensor3& act) {
    for (size_t i = 0; i < d.d.size(); ++i)
        if (act.d[i] <= 0.0) d.d[i] = 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Visual backbone
// ---------------------------------------------------------------------------

Tensor3 encode_image(const Tensor3& pixels, const VisualBackbone& p, ImageTape* tape) {
    if (pixels.c != p.conv1.in_c) throw std::invalid_argument("image channel count mismatch");
    Tensor3 a1 = conv_forward(pixels, p.conv1);
    relu_inplace(a1);
    Tensor3 a2 = conv_forward(a1, p.conv2);
    relu_inplace(a2);
    Tensor3 fmap = conv_forward(a2, p.conv3);
    if (tape) {
        tape->input = pixels;
        tape->a1 = std::move(a1);
        tape->a2 = std::move(a2);
    }
    return fmap;
}

void encode_image_backward(const Tensor3& d_fmap, const ImageTape& tape,
                           const VisualBackbone& p, VisualBackbone& grads) {
    Tensor3 d_a2(tape.a2.h, tape.a2.w, tape.a2.c);
    conv_backward(d_fmap, tape.a2, p.conv3, grads.conv3, &d_a2);
    relu_backward_inplace(d_a2, tape.a2);
    Tensor3 d_a1(tape.a1.h, tape.a1.w, tape.a1.c);
    conv_backward(d_a2, tape.a1, p.conv2, grads.conv2, &d_a1);
    relu_backward_inplace(d_a1, tape.a1);
    conv_backward(d_a1, tape.input, p.conv1, grads.conv1, nullptr);
}

// ---------------------------------------------------------------------------
// Text backbone
// ---------------------------------------------------------------------------

Mat encode_text(const std::vector<int>& tokens, int max_tokens, const TextBackbone& p,
                TextTape* tape) {
    const int len = static_cast<int>(tokens.size());
    if (len < 1 || len > max_tokens) throw std::invalid_argument("token count out of range");
    for (int t : tokens)
        if (t < 0 || t >= p.embed.rows) throw std::invalid_argument("token id out of range");

    const int hid = p.wh_fwd.rows;
    const int c_out = p.proj.cols;

    std::vector<Vec> h_fwd(static_cast<size_t>(len));
    std::vector<Vec> h_bwd(static_cast<size_t>(len));
    Vec u(static_cast<size_t>(hid));

    auto step = [&](const Mat& wx, const Mat& wh, const Vec* prev, int tok, Vec& out) {
        std::fill(u.begin(), u.end(), 0.0);
        const double* e = p.embed.row(tok);
        for (int r = 0; r < p.embed.cols; ++r) {
            const double ev = e[r];
            if (ev == 0.0) continue;
            const double* wr = wx.row(r);
            for (int c = 0; c < hid; ++c) u[static_cast<size_t>(c)] += ev * wr[c];
        }
        if (prev) {
            for (int r = 0; r < hid; ++r) {
                const double hv = (*prev)[static_cast<size_t>(r)];
                if (hv == 0.0) continue;
                const double* wr = wh.row(r);
                for (int c = 0; c < hid; ++c) u[static_cast<size_t>(c)] += hv * wr[c];
            }
        }
        out.resize(static_cast<size_t>(hid));
        for (int c = 0; c < hid; ++c) out[static_cast<size_t>(c)] = std::tanh(u[static_cast<size_t>(c)]);
    };

    for (int t = 0; t < len; ++t)
        step(p.wx_fwd, p.wh_fwd, t > 0 ? &h_fwd[static_cast<size_t>(t - 1)] : nullptr,
             tokens[static_cast<size_t>(t)], h_fwd[static_cast<size_t>(t)]);
    for (int t = len - 1; t >= 0; --t)
        step(p.wx_bwd, p.wh_bwd, t + 1 < len ? &h_bwd[static_cast<size_t>(t + 1)] : nullptr,
             tokens[static_cast<size_t>(t)], h_bwd[static_cast<size_t>(t)]);

    Mat seq(max_tokens, c_out);
    Vec cat(static_cast<size_t>(2 * hid));
    for (int t = 0; t < len; ++t) {
        std::copy(h_fwd[static_cast<size_t>(t)].begin(), h_fwd[static_cast<size_t>(t)].end(),
                  cat.begin());
        std::copy(h_bwd[static_cast<size_t>(t)].begin(), h_bwd[static_cast<size_t>(t)].end(),
                  cat.begin() + hid);
        double* dst = seq.row(t);
        for (int r = 0; r < 2 * hid; ++r) {
            const double cv = cat[static_cast<size_t>(r)];
            if (cv == 0.0) continue;
            const double* wr = p.proj.row(r);
            for (int c = 0; c < c_out; ++c) dst[c] += cv * wr[c];
        }
    }

    if (tape) {
        tape->tokens = tokens;
        tape->h_fwd = std::move(h_fwd);
        tape->h_bwd = std::move(h_bwd);
    }
    return seq;
}

void encode_text_backward(const Mat& d_seq, const TextTape& tape, const TextBackbone& p,
                          TextBackbone& grads) {
    const int len = static_cast<int>(tape.tokens.size());
    const int hid = p.wh_fwd.rows;

    std::vector<Vec> d_hf(static_cast<size_t>(len), Vec(static_cast<size_t>(hid), 0.0));
    std::vector<Vec> d_hb(static_cast<size_t>(len), Vec(static_cast<size_t>(hid), 0.0));

    // projection backward
    Vec cat(static_cast<size_t>(2 * hid));
    for (int t = 0; t < len; ++t) {
        const double* g = d_seq.row(t);
        std::copy(tape.h_fwd[static_cast<size_t>(t)].begin(),
                  tape.h_fwd[static_cast<size_t>(t)].end(), cat.begin());
        std::copy(tape.h_bwd[static_cast<size_t>(t)].begin(),
                  tape.h_bwd[static_cast<size_t>(t)].end(), cat.begin() + hid);
        for (int r = 0; r < 2 * hid; ++r) {
            const double gr = dot(p.proj.row(r), g, p.proj.cols);
            if (r < hid) d_hf[static_cast<size_t>(t)][static_cast<size_t>(r)] += gr;
            else d_hb[static_cast<size_t>(t)][static_cast<size_t>(r - hid)] += gr;
            const double cv = cat[static_cast<size_t>(r)];
            if (cv != 0.0) {
                double* dwr = grads.proj.row(r);
                for (int c = 0; c < p.proj.cols; ++c) dwr[c] += cv * g[c];
            }
        }
    }

    Vec d_u(static_cast<size_t>(hid));
    auto unroll = [&](bool forward) {
        const Mat& wx = forward ? p.wx_fwd : p.wx_bwd;
        const Mat& wh = forward ? p.wh_fwd : p.wh_bwd;
        Mat& d_wx = forward ? grads.wx_fwd : grads.wx_bwd;
        Mat& d_wh = forward ? grads.wh_fwd : grads.wh_bwd;
        auto& states = forward ? tape.h_fwd : tape.h_bwd;
        auto& d_states = forward ? d_hf : d_hb;

        for (int idx = 0; idx < len; ++idx) {
            // forward direction unrolls from the last step back to the first;
            // backward direction from the first step to the last
            const int t = forward ? len - 1 - idx : idx;
            const int prev = forward ? t - 1 : t + 1;
            const bool has_prev = forward ? prev >= 0 : prev < len;
            const Vec& h = states[static_cast<size_t>(t)];
            for (int c = 0; c < hid; ++c)
                d_u[static_cast<size_t>(c)] = d_states[static_cast<size_t>(t)][static_cast<size_t>(c)] *
                                              (1.0 - h[static_cast<size_t>(c)] * h[static_cast<size_t>(c)]);

            const int tok = tape.tokens[static_cast<size_t>(t)];
            const double* e = p.embed.row(tok);
            double* d_e = grads.embed.row(tok);
            for (int r = 0; r < p.embed.cols; ++r) {
                const double ev = e[r];
                double* dwr = d_wx.row(r);
                double acc = 0.0;
                const double* wr = wx.row(r);
                for (int c = 0; c < hid; ++c) {
                    dwr[c] += ev * d_u[static_cast<size_t>(c)];
                    acc += wr[c] * d_u[static_cast<size_t>(c)];
                }
                d_e[r] += acc;
            }
            if (has_prev) {
                const Vec& hp = states[static_cast<size_t>(prev)];
                Vec& d_hp = d_states[static_cast<size_t>(prev)];
                for (int r = 0; r < hid; ++r) {
                    const double hv = hp[static_cast<size_t>(r)];
                    double* dwr = d_wh.row(r);
                    double acc = 0.0;
                    const double* wr = wh.row(r);
                    for (int c = 0; c < hid; ++c) {
                        dwr[c] += hv * d_u[static_cast<size_t>(c)];
                        acc += wr[c] * d_u[static_cast<size_t>(c)];
                    }
                    d_hp[static_cast<size_t>(r)] += acc;
                }
            }
        }
    };
    unroll(true);
    unroll(false);
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

void gmp_map(const Tensor3& fmap, int y0, int y1, PoolTape& tape) {
    tape.pooled.assign(static_cast<size_t>(fmap.c), 0.0);
    tape.argmax.assign(static_cast<size_t>(fmap.c), -1);
    bool first = true;
    for (int y = y0; y < y1; ++y) {
        for (int x = 0; x < fmap.w; ++x) {
            const double* row = fmap.pos(y, x);
            const int pos = (y - y0) * fmap.w + x;
            for (int c = 0; c < fmap.c; ++c) {
                if (first || row[c] > tape.pooled[static_cast<size_t>(c)]) {
                    tape.pooled[static_cast<size_t>(c)] = row[c];
                    tape.argmax[static_cast<size_t>(c)] = pos;
                }
            }
            first = false;
        }
    }
}

void gmp_rows(const Mat& seq, int len, PoolTape& tape) {
    if (len < 1) throw std::invalid_argument("cannot pool over zero rows");
    tape.pooled.assign(static_cast<size_t>(seq.cols), 0.0);
    tape.argmax.assign(static_cast<size_t>(seq.cols), -1);
    for (int r = 0; r < len; ++r) {
        const double* row = seq.row(r);
        for (int c = 0; c < seq.cols; ++c) {
            if (r == 0 || row[c] > tape.pooled[static_cast<size_t>(c)]) {
                tape.pooled[static_cast<size_t>(c)] = row[c];
                tape.argmax[static_cast<size_t>(c)] = r;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Global / local heads
// ---------------------------------------------------------------------------

Vec global_head_visual(const Tensor3& fmap, const Mat& w_g, PoolTape* tape) {
    PoolTape local_tape;
    PoolTape& t = tape ? *tape : local_tape;
    gmp_map(fmap, 0, fmap.h, t);
    Vec out;
    matvec(t.pooled, w_g, out);
    return out;
}

Vec global_head_text(const Mat& seq, int len, const Mat& w_g, PoolTape* tape) {
    PoolTape local_tape;
    PoolTape& t = tape ? *tape : local_tape;
    gmp_rows(seq, len, t);
    Vec out;
    matvec(t.pooled, w_g, out);
    return out;
}

std::vector<Tensor3> split_visual_parts(const Tensor3& fmap, int num_parts) {
    if (num_parts < 1 || fmap.h % num_parts != 0)
        throw std::invalid_argument("feature map height not divisible by part count");
    const int ph = fmap.h / num_parts;
    std::vector<Tensor3> parts;
    parts.reserve(static_cast<size_t>(num_parts));
    for (int k = 0; k < num_parts; ++k) {
        Tensor3 part(ph, fmap.w, fmap.c);
        std::copy(fmap.d.begin() + static_cast<size_t>(k) * part.size(),
                  fmap.d.begin() + static_cast<size_t>(k + 1) * part.size(), part.d.begin());
        parts.push_back(std::move(part));
    }
    return parts;
}

std::vector<Mat> word_attention(const Mat& seq, int len, const Mat& queries, WamTape* tape) {
    if (len < 1) throw std::invalid_argument("word attention needs at least one valid row");
    const int num_parts = queries.rows;
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(queries.cols));

    Mat weights(num_parts, seq.rows);
    std::vector<Mat> maps;
    maps.reserve(static_cast<size_t>(num_parts));
    for (int k = 0; k < num_parts; ++k) {
        double* wrow = weights.row(k);
        double max_score = -HUGE_VAL;
        for (int i = 0; i < len; ++i) {
            wrow[i] = dot(seq.row(i), queries.row(k), queries.cols) * inv_sqrt_c;
            max_score = std::max(max_score, wrow[i]);
        }
        double denom = 0.0;
        for (int i = 0; i < len; ++i) {
            wrow[i] = std::exp(wrow[i] - max_score);
            denom += wrow[i];
        }
        for (int i = 0; i < len; ++i) wrow[i] /= denom;

        Mat map(seq.rows, seq.cols);
        for (int i = 0; i < len; ++i) {
            const double scale = static_cast<double>(len) * wrow[i];
            const double* src = seq.row(i);
            double* dst = map.row(i);
            for (int c = 0; c < seq.cols; ++c) dst[c] = scale * src[c];
        }
        maps.push_back(std::move(map));
    }
    if (tape) tape->weights = std::move(weights);
    return maps;
}

Vec local_head_visual(const Tensor3& fmap, int y0, int y1, const Mat& w_l, PoolTape* tape) {
    PoolTape local_tape;
    PoolTape& t = tape ? *tape : local_tape;
    gmp_map(fmap, y0, y1, t);
    Vec out;
    matvec(t.pooled, w_l, out);
    return out;
}

Vec local_head_text(const Mat& wam_map, int len, const Mat& w_l, PoolTape* tape) {
    PoolTape local_tape;
    PoolTape& t = tape ? *tape : local_tape;
    gmp_rows(wam_map, len, t);
    Vec out;
    matvec(t.pooled, w_l, out);
    return out;
}

// ---------------------------------------------------------------------------
// Non-local head
// ---------------------------------------------------------------------------

std::vector<Vec> nonlocal_head(const std::vector<Vec>& locals, const NlmParams& p,
                               NlmTape* tape) {
    const int num_parts = static_cast<int>(locals.size());
    if (num_parts < 2) throw std::invalid_argument("non-local head needs at least 2 parts");

    NlmTape local_tape;
    NlmTape& t = tape ? *tape : local_tape;
    t.emb_a.resize(static_cast<size_t>(num_parts));
    t.emb_b.resize(static_cast<size_t>(num_parts));
    t.norm_a.assign(static_cast<size_t>(num_parts), 0.0);
    t.norm_b.assign(static_cast<size_t>(num_parts), 0.0);
    t.scores = Mat(num_parts, num_parts);
    t.weights = Mat(num_parts, num_parts);
    t.pooled.resize(static_cast<size_t>(num_parts));
    t.agg.resize(static_cast<size_t>(num_parts));
    t.summed.resize(static_cast<size_t>(num_parts));

    for (int k = 0; k < num_parts; ++k) {
        matvec(locals[static_cast<size_t>(k)], p.parts[static_cast<size_t>(k)].w_alpha,
               t.emb_a[static_cast<size_t>(k)]);
        matvec(locals[static_cast<size_t>(k)], p.parts[static_cast<size_t>(k)].w_beta,
               t.emb_b[static_cast<size_t>(k)]);
        t.norm_a[static_cast<size_t>(k)] = norm2(t.emb_a[static_cast<size_t>(k)]);
        t.norm_b[static_cast<size_t>(k)] = norm2(t.emb_b[static_cast<size_t>(k)]);
    }

    for (int k = 0; k < num_parts; ++k) {
        for (int i = 0; i < num_parts; ++i) {
            if (i == k) continue;
            const double na = t.norm_a[static_cast<size_t>(k)];
            const double nb = t.norm_b[static_cast<size_t>(i)];
            t.scores.at(k, i) =
                (na == 0.0 || nb == 0.0)
                    ? 0.0
                    : dot(t.emb_a[static_cast<size_t>(k)], t.emb_b[static_cast<size_t>(i)]) / (na * nb);
        }
    }

    std::vector<Vec> out(static_cast<size_t>(num_parts));
    for (int k = 0; k < num_parts; ++k) {
        double denom = 0.0;
        for (int i = 0; i < num_parts; ++i)
            if (i != k) denom += std::exp(t.scores.at(k, i));
        Vec& pooled = t.pooled[static_cast<size_t>(k)];
        pooled.assign(t.emb_b[0].size(), 0.0);
        for (int i = 0; i < num_parts; ++i) {
            if (i == k) continue;
            const double w = std::exp(t.scores.at(k, i)) / denom;
            t.weights.at(k, i) = w;
            axpy(w, t.emb_b[static_cast<size_t>(i)], pooled);
        }
        matvec(pooled, p.parts[static_cast<size_t>(k)].w_gamma, t.agg[static_cast<size_t>(k)]);

        Vec& summed = t.summed[static_cast<size_t>(k)];
        summed = locals[static_cast<size_t>(k)];
        axpy(1.0, t.agg[static_cast<size_t>(k)], summed);
        matvec(summed, p.parts[static_cast<size_t>(k)].w_delta, out[static_cast<size_t>(k)]);
    }
    return out;
}

void nonlocal_head_backward(const std::vector<Vec>& d_out, const NlmTape& tape,
                            const std::vector<Vec>& locals, const NlmParams& p,
                            NlmParams& grads, std::vector<Vec>& d_locals) {
    const int num_parts = static_cast<int>(locals.size());
    const size_t c_l = locals[0].size();

    std::vector<Vec> d_emb_a(static_cast<size_t>(num_parts), Vec(c_l, 0.0));
    std::vector<Vec> d_emb_b(static_cast<size_t>(num_parts), Vec(c_l, 0.0));

    for (int k = 0; k < num_parts; ++k) {
        // delta projection
        Vec d_summed(c_l, 0.0);
        matvec_t_accum(d_out[static_cast<size_t>(k)], p.parts[static_cast<size_t>(k)].w_delta,
                       d_summed);
        outer_accum(tape.summed[static_cast<size_t>(k)], d_out[static_cast<size_t>(k)],
                    grads.parts[static_cast<size_t>(k)].w_delta);

        axpy(1.0, d_summed, d_locals[static_cast<size_t>(k)]);

        // gamma projection
        Vec d_pooled(c_l, 0.0);
        matvec_t_accum(d_summed, p.parts[static_cast<size_t>(k)].w_gamma, d_pooled);
        outer_accum(tape.pooled[static_cast<size_t>(k)], d_summed,
                    grads.parts[static_cast<size_t>(k)].w_gamma);

        // attention-weighted sum over the other parts
        Vec d_score(static_cast<size_t>(num_parts), 0.0);
        double inner = 0.0;  // sum_j w_kj * d_w_kj for the softmax jacobian
        for (int i = 0; i < num_parts; ++i) {
            if (i == k) continue;
            const double w = tape.weights.at(k, i);
            const double d_w = dot(d_pooled, tape.emb_b[static_cast<size_t>(i)]);
            axpy(w, d_pooled, d_emb_b[static_cast<size_t>(i)]);
            d_score[static_cast<size_t>(i)] = d_w;
            inner += w * d_w;
        }
        for (int i = 0; i < num_parts; ++i) {
            if (i == k) continue;
            const double g = tape.weights.at(k, i) * (d_score[static_cast<size_t>(i)] - inner);
            if (g == 0.0) continue;
            // cosine backward for score (k, i)
            const double na = tape.norm_a[static_cast<size_t>(k)];
            const double nb = tape.norm_b[static_cast<size_t>(i)];
            if (na == 0.0 || nb == 0.0) continue;
            const double inv = 1.0 / (na * nb);
            const double s = tape.scores.at(k, i);
            const Vec& ea = tape.emb_a[static_cast<size_t>(k)];
            const Vec& eb = tape.emb_b[static_cast<size_t>(i)];
            for (size_t c = 0; c < c_l; ++c) {
                d_emb_a[static_cast<size_t>(k)][c] += g * (eb[c] * inv - s * ea[c] / (na * na));
                d_emb_b[static_cast<size_t>(i)][c] += g * (ea[c] * inv - s * eb[c] / (nb * nb));
            }
        }
    }

    for (int k = 0; k < num_parts; ++k) {
        matvec_t_accum(d_emb_a[static_cast<size_t>(k)], p.parts[static_cast<size_t>(k)].w_alpha,
                       d_locals[static_cast<size_t>(k)]);
        outer_accum(locals[static_cast<size_t>(k)], d_emb_a[static_cast<size_t>(k)],
                    grads.parts[static_cast<size_t>(k)].w_alpha);
        matvec_t_accum(d_emb_b[static_cast<size_t>(k)], p.parts[static_cast<size_t>(k)].w_beta,
                       d_locals[static_cast<size_t>(k)]);
        outer_accum(locals[static_cast<size_t>(k)], d_emb_b[static_cast<size_t>(k)],
                    grads.parts[static_cast<size_t>(k)].w_beta);
    }
}

// ---------------------------------------------------------------------------
// Multi-grained extraction
// ---------------------------------------------------------------------------

MultiGrainedFeatures zero_features(int num_parts, int c_global, int c_local, int c_nonlocal) {
    MultiGrainedFeatures f;
    f.global.assign(static_cast<size_t>(c_global), 0.0);
    f.local.assign(static_cast<size_t>(num_parts), Vec(static_cast<size_t>(c_local), 0.0));
    f.nonlocal.assign(static_cast<size_t>(num_parts), Vec(static_cast<size_t>(c_nonlocal), 0.0));
    return f;
}

MultiGrainedFeatures extract_visual(const Tensor3& fmap, const EncoderParams& p,
                                    int num_parts, VisualHeadsTape* tape) {
    if (fmap.h % num_parts != 0)
        throw std::invalid_argument("feature map height not divisible by part count");
    const int ph = fmap.h / num_parts;

    VisualHeadsTape local_tape;
    VisualHeadsTape& t = tape ? *tape : local_tape;
    t.pool_l.resize(static_cast<size_t>(num_parts));

    MultiGrainedFeatures f;
    f.global = global_head_visual(fmap, p.w_global_vis, &t.pool_g);
    f.local.resize(static_cast<size_t>(num_parts));
    for (int k = 0; k < num_parts; ++k)
        f.local[static_cast<size_t>(k)] = local_head_visual(fmap, k * ph, (k + 1) * ph,
                                                            p.w_local_vis,
                                                            &t.pool_l[static_cast<size_t>(k)]);
    if (num_parts >= 2) {
        f.nonlocal = nonlocal_head(f.local, p.nlm_vis, &t.nlm);
    } else {
        f.nonlocal.assign(1, Vec(static_cast<size_t>(p.nlm_vis.parts[0].w_delta.cols), 0.0));
    }
    return f;
}

MultiGrainedFeatures extract_text(const Mat& seq, int len, const EncoderParams& p,
                                  int num_parts, TextHeadsTape* tape) {
    TextHeadsTape local_tape;
    TextHeadsTape& t = tape ? *tape : local_tape;
    t.pool_l.resize(static_cast<size_t>(num_parts));

    MultiGrainedFeatures f;
    f.global = global_head_text(seq, len, p.w_global_txt, &t.pool_g);
    t.wam_maps = word_attention(seq, len, p.wam_queries, &t.wam);
    f.local.resize(static_cast<size_t>(num_parts));
    for (int k = 0; k < num_parts; ++k)
        f.local[static_cast<size_t>(k)] =
            local_head_text(t.wam_maps[static_cast<size_t>(k)], len, p.w_local_txt,
                            &t.pool_l[static_cast<size_t>(k)]);
    if (num_parts >= 2) {
        f.nonlocal = nonlocal_head(f.local, p.nlm_txt, &t.nlm);
    } else {
        f.nonlocal.assign(1, Vec(static_cast<size_t>(p.nlm_txt.parts[0].w_delta.cols), 0.0));
    }
    return f;
}

void extract_visual_backward(const MultiGrainedFeatures& d_feats,
                             const MultiGrainedFeatures& feats, const VisualHeadsTape& tape,
                             const Tensor3& fmap, const EncoderParams& p, int num_parts,
                             EncoderParams& grads, Tensor3& d_fmap) {
    const int ph = fmap.h / num_parts;

    // locals pick up gradient both directly and through the non-local head
    std::vector<Vec> d_local = d_feats.local;
    if (num_parts >= 2) {
        nonlocal_head_backward(d_feats.nonlocal, tape.nlm, feats.local, p.nlm_vis,
                               grads.nlm_vis, d_local);
    }

    // local FC + pooling backward
    for (int k = 0; k < num_parts; ++k) {
        const PoolTape& pt = tape.pool_l[static_cast<size_t>(k)];
        Vec d_pooled(pt.pooled.size(), 0.0);
        matvec_t_accum(d_local[static_cast<size_t>(k)], p.w_local_vis, d_pooled);
        outer_accum(pt.pooled, d_local[static_cast<size_t>(k)], grads.w_local_vis);
        for (int c = 0; c < fmap.c; ++c) {
            const int pos = pt.argmax[static_cast<size_t>(c)];
            const int y = k * ph + pos / fmap.w;
            const int x = pos % fmap.w;
            d_fmap.at(y, x, c) += d_pooled[static_cast<size_t>(c)];
        }
    }

    // global FC + pooling backward
    {
        Vec d_pooled(tape.pool_g.pooled.size(), 0.0);
        matvec_t_accum(d_feats.global, p.w_global_vis, d_pooled);
        outer_accum(tape.pool_g.pooled, d_feats.global, grads.w_global_vis);
        for (int c = 0; c < fmap.c; ++c) {
            const int pos = tape.pool_g.argmax[static_cast<size_t>(c)];
            d_fmap.at(pos / fmap.w, pos % fmap.w, c) += d_pooled[static_cast<size_t>(c)];
        }
    }
}

void extract_text_backward(const MultiGrainedFeatures& d_feats,
                           const MultiGrainedFeatures& feats, const TextHeadsTape& tape,
                           const Mat& seq, int len, const EncoderParams& p, int num_parts,
                           EncoderParams& grads, Mat& d_seq) {
    std::vector<Vec> d_local = d_feats.local;
    if (num_parts >= 2) {
        nonlocal_head_backward(d_feats.nonlocal, tape.nlm, feats.local, p.nlm_txt,
                               grads.nlm_txt, d_local);
    }

    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(p.wam_queries.cols));

    for (int k = 0; k < num_parts; ++k) {
        const PoolTape& pt = tape.pool_l[static_cast<size_t>(k)];
        Vec d_pooled(pt.pooled.size(), 0.0);
        matvec_t_accum(d_local[static_cast<size_t>(k)], p.w_local_txt, d_pooled);
        outer_accum(pt.pooled, d_local[static_cast<size_t>(k)], grads.w_local_txt);

        // pooled -> attention map rows
        const double* attw = tape.wam.weights.row(k);
        Vec d_attw(static_cast<size_t>(len), 0.0);
        for (int c = 0; c < seq.cols; ++c) {
            const double g = d_pooled[static_cast<size_t>(c)];
            if (g == 0.0) continue;
            const int r = pt.argmax[static_cast<size_t>(c)];
            // map row r = len * a_kr * seq row r
            d_attw[static_cast<size_t>(r)] += g * static_cast<double>(len) * seq.at(r, c);
            d_seq.at(r, c) += g * static_cast<double>(len) * attw[r];
        }

        // softmax backward over valid positions
        double inner = 0.0;
        for (int i = 0; i < len; ++i) inner += attw[i] * d_attw[static_cast<size_t>(i)];
        for (int i = 0; i < len; ++i) {
            const double d_score = attw[i] * (d_attw[static_cast<size_t>(i)] - inner);
            if (d_score == 0.0) continue;
            const double* q = p.wam_queries.row(k);
            double* dq = grads.wam_queries.row(k);
            const double* srow = seq.row(i);
            double* drow = d_seq.row(i);
            for (int c = 0; c < seq.cols; ++c) {
                drow[c] += d_score * q[c] * inv_sqrt_c;
                dq[c] += d_score * srow[c] * inv_sqrt_c;
            }
        }
    }

    {
        Vec d_pooled(tape.pool_g.pooled.size(), 0.0);
        matvec_t_accum(d_feats.global, p.w_global_txt, d_pooled);
        outer_accum(tape.pool_g.pooled, d_feats.global, grads.w_global_txt);
        for (int c = 0; c < seq.cols; ++c)
            d_seq.at(tape.pool_g.argmax[static_cast<size_t>(c)], c) +=
                d_pooled[static_cast<size_t>(c)];
    }
}

}  // namespace beat
