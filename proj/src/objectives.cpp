// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0

#include "beat/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace beat {

namespace {

double part_average(double sum, size_t num_parts) {
    return sum / static_cast<double>(num_parts);
}

double softmax_ce(const Vec& feat, const Mat& w, int y, double coeff, Mat* dw, Vec* dfeat) {
    Vec logits;
    matvec(feat, w, logits);
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    const double loss = lse - logits[static_cast<size_t>(y)];
    if (dw || dfeat) {
        Vec dlog(logits.size());
        for (size_t j = 0; j < logits.size(); ++j) {
            const double p = std::exp(logits[j] - lse);
            dlog[j] = coeff * (p - (static_cast<int>(j) == y ? 1.0 : 0.0));
        }
        if (dw) outer_accum(feat, dlog, *dw);
        if (dfeat) matvec_t_accum(dlog, w, *dfeat);
    }
    return loss;
}

}  // namespace

// ---------------------------------------------------------------------------
// Similarities
// ---------------------------------------------------------------------------

GranScores training_scores(const TrainConfig& cfg, const EncodedImage& img,
                           const EncodedText& txt) {
    GranScores s;
    const size_t num_parts = img.feats.local.size();
    double local_sum = 0.0, nonlocal_sum = 0.0;

    if (cfg.text_space) {
        for (const Vec& cand : img.to_text.global) s.global += cosine(cand, txt.feats.global);
        for (size_t k = 0; k < num_parts; ++k) {
            for (const Vec& cand : img.to_text.local[k])
                local_sum += cosine(cand, txt.feats.local[k]);
            for (const Vec& cand : img.to_text.nonlocal[k])
                nonlocal_sum += cosine(cand, txt.feats.nonlocal[k]);
        }
    }
    if (cfg.image_space) {
        for (const Vec& cand : txt.to_image.global) s.global += cosine(img.feats.global, cand);
        for (size_t k = 0; k < num_parts; ++k) {
            for (const Vec& cand : txt.to_image.local[k])
                local_sum += cosine(img.feats.local[k], cand);
            for (const Vec& cand : txt.to_image.nonlocal[k])
                nonlocal_sum += cosine(img.feats.nonlocal[k], cand);
        }
    }
    for (size_t sp = 0; sp < img.shared.size(); ++sp) {
        s.global += cosine(img.shared[sp].global, txt.shared[sp].global);
        for (size_t k = 0; k < num_parts; ++k) {
            local_sum += cosine(img.shared[sp].local[k], txt.shared[sp].local[k]);
            nonlocal_sum += cosine(img.shared[sp].nonlocal[k], txt.shared[sp].nonlocal[k]);
        }
    }

    s.local = part_average(local_sum, num_parts);
    s.nonlocal = part_average(nonlocal_sum, num_parts);
    return s;
}

double combine_scores(const TrainConfig& cfg, const GranScores& s) {
    return cfg.eff_w_global() * s.global + cfg.eff_w_local() * s.local +
           cfg.eff_w_nonlocal() * s.nonlocal;
}

double training_similarity(const TrainConfig& cfg, const EncodedImage& img,
                           const EncodedText& txt) {
    return combine_scores(cfg, training_scores(cfg, img, txt));
}

void training_scores_backward(const TrainConfig& cfg, const EncodedImage& img,
                              const EncodedText& txt, const GranScores& d,
                              FeatureGrads& g_img, FeatureGrads& g_txt) {
    const size_t num_parts = img.feats.local.size();
    const double dl = d.local / static_cast<double>(num_parts);
    const double dn = d.nonlocal / static_cast<double>(num_parts);

    if (cfg.text_space) {
        if (d.global != 0.0)
            for (size_t m = 0; m < img.to_text.global.size(); ++m)
                cosine_backward(img.to_text.global[m], txt.feats.global, d.global,
                                g_img.proj.global[m], g_txt.feats.global);
        for (size_t k = 0; k < num_parts; ++k) {
            if (dl != 0.0)
                for (size_t m = 0; m < img.to_text.local[k].size(); ++m)
                    cosine_backward(img.to_text.local[k][m], txt.feats.local[k], dl,
                                    g_img.proj.local[k][m], g_txt.feats.local[k]);
            if (dn != 0.0)
                for (size_t m = 0; m < img.to_text.nonlocal[k].size(); ++m)
                    cosine_backward(img.to_text.nonlocal[k][m], txt.feats.nonlocal[k], dn,
                                    g_img.proj.nonlocal[k][m], g_txt.feats.nonlocal[k]);
        }
    }
    if (cfg.image_space) {
        if (d.global != 0.0)
            for (size_t m = 0; m < txt.to_image.global.size(); ++m)
                cosine_backward(img.feats.global, txt.to_image.global[m], d.global,
                                g_img.feats.global, g_txt.proj.global[m]);
        for (size_t k = 0; k < num_parts; ++k) {
            if (dl != 0.0)
                for (size_t m = 0; m < txt.to_image.local[k].size(); ++m)
                    cosine_backward(img.feats.local[k], txt.to_image.local[k][m], dl,
                                    g_img.feats.local[k], g_txt.proj.local[k][m]);
            if (dn != 0.0)
                for (size_t m = 0; m < txt.to_image.nonlocal[k].size(); ++m)
                    cosine_backward(img.feats.nonlocal[k], txt.to_image.nonlocal[k][m], dn,
                                    g_img.feats.nonlocal[k], g_txt.proj.nonlocal[k][m]);
        }
    }
    for (size_t sp = 0; sp < img.shared.size(); ++sp) {
        if (d.global != 0.0)
            cosine_backward(img.shared[sp].global, txt.shared[sp].global, d.global,
                            g_img.shared[sp].global, g_txt.shared[sp].global);
        for (size_t k = 0; k < num_parts; ++k) {
            if (dl != 0.0)
                cosine_backward(img.shared[sp].local[k], txt.shared[sp].local[k], dl,
                                g_img.shared[sp].local[k], g_txt.shared[sp].local[k]);
            if (dn != 0.0)
                cosine_backward(img.shared[sp].nonlocal[k], txt.shared[sp].nonlocal[k], dn,
                                g_img.shared[sp].nonlocal[k], g_txt.shared[sp].nonlocal[k]);
        }
    }
}

GranScores inference_scores(const TrainConfig& cfg, const EncodedImage& img,
                            const EncodedText& txt) {
    GranScores s;
    const size_t num_parts = img.feats.local.size();
    double local_sum = 0.0, nonlocal_sum = 0.0;

    auto best = [](const std::vector<Vec>& candidates, const Vec& target, bool flip) {
        double mx = -HUGE_VAL;
        for (const Vec& cand : candidates)
            mx = std::max(mx, flip ? cosine(target, cand) : cosine(cand, target));
        return mx;
    };

    if (cfg.text_space) {
        s.global += best(img.to_text.global, txt.feats.global, false);
        for (size_t k = 0; k < num_parts; ++k) {
            local_sum += best(img.to_text.local[k], txt.feats.local[k], false);
            nonlocal_sum += best(img.to_text.nonlocal[k], txt.feats.nonlocal[k], false);
        }
    }
    if (cfg.image_space) {
        s.global += best(txt.to_image.global, img.feats.global, true);
        for (size_t k = 0; k < num_parts; ++k) {
            local_sum += best(txt.to_image.local[k], img.feats.local[k], true);
            nonlocal_sum += best(txt.to_image.nonlocal[k], img.feats.nonlocal[k], true);
        }
    }
    for (size_t sp = 0; sp < img.shared.size(); ++sp) {
        s.global += cosine(img.shared[sp].global, txt.shared[sp].global);
        for (size_t k = 0; k < num_parts; ++k) {
            local_sum += cosine(img.shared[sp].local[k], txt.shared[sp].local[k]);
            nonlocal_sum += cosine(img.shared[sp].nonlocal[k], txt.shared[sp].nonlocal[k]);
        }
    }

    s.local = part_average(local_sum, num_parts);
    s.nonlocal = part_average(nonlocal_sum, num_parts);
    return s;
}

double inference_similarity(const TrainConfig& cfg, const EncodedImage& img,
                            const EncodedText& txt) {
    return combine_scores(cfg, inference_scores(cfg, img, txt));
}

double adaptive_margin(double s_strong, double s_weak, double alpha1) {
    const double ratio = s_strong <= 0.0 ? 1.0 : std::min(s_weak / s_strong, 1.0);
    return (ratio + 1.0) * alpha1 / 2.0;
}

// ---------------------------------------------------------------------------
// Identity loss
// ---------------------------------------------------------------------------

double id_loss_sample(const TrainConfig& cfg, const IdClassifierParams& id,
                      const MultiGrainedFeatures& vis, const MultiGrainedFeatures& txt, int y,
                      IdClassifierParams* grads, MultiGrainedFeatures* d_vis,
                      MultiGrainedFeatures* d_txt) {
    if (y < 0 || y >= id.global_vis.cols)
        throw std::invalid_argument("identity label out of range");

    const size_t num_parts = vis.local.size();
    double total = 0.0;

    const double wg = cfg.eff_w_global();
    if (wg != 0.0) {
        double v = softmax_ce(vis.global, id.global_vis, y, wg, grads ? &grads->global_vis : nullptr,
                              d_vis ? &d_vis->global : nullptr);
        v += softmax_ce(txt.global, id.global_txt, y, wg, grads ? &grads->global_txt : nullptr,
                        d_txt ? &d_txt->global : nullptr);
        total += wg * v;
    }
    const double wl = cfg.eff_w_local();
    if (wl != 0.0) {
        const double coeff = wl / static_cast<double>(num_parts);
        double v = 0.0;
        for (size_t k = 0; k < num_parts; ++k) {
            v += softmax_ce(vis.local[k], id.local_vis, y, coeff,
                            grads ? &grads->local_vis : nullptr,
                            d_vis ? &d_vis->local[k] : nullptr);
            v += softmax_ce(txt.local[k], id.local_txt, y, coeff,
                            grads ? &grads->local_txt : nullptr,
                            d_txt ? &d_txt->local[k] : nullptr);
        }
        total += coeff * v;
    }
    const double wn = cfg.eff_w_nonlocal();
    if (wn != 0.0) {
        const double coeff = wn / static_cast<double>(num_parts);
        double v = 0.0;
        for (size_t k = 0; k < num_parts; ++k) {
            v += softmax_ce(vis.nonlocal[k], id.nonlocal_vis, y, coeff,
                            grads ? &grads->nonlocal_vis : nullptr,
                            d_vis ? &d_vis->nonlocal[k] : nullptr);
            v += softmax_ce(txt.nonlocal[k], id.nonlocal_txt, y, coeff,
                            grads ? &grads->nonlocal_txt : nullptr,
                            d_txt ? &d_txt->nonlocal[k] : nullptr);
        }
        total += coeff * v;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Compound ranking loss
// ---------------------------------------------------------------------------

CrGranResult cr_loss_granularity(const TrainConfig& cfg, int batch, int num_alts,
                                 const std::vector<double>& s, const std::vector<double>& sw,
                                 const std::vector<int>& alt_slot,
                                 const std::vector<int>& identities, std::vector<double>* d_s,
                                 std::vector<double>* d_sw) {
    if (batch < 2) throw std::invalid_argument("ranking loss needs a batch of at least 2");

    const double alpha1 = cfg.margin;
    const double beta = cfg.weak_weight;
    const size_t stride = static_cast<size_t>(batch);
    const size_t wstride = static_cast<size_t>(num_alts);

    CrGranResult out;
    bool any_negative = false;

    for (int i = 0; i < batch; ++i) {
        std::vector<int> negatives;
        for (int j = 0; j < batch; ++j)
            if (identities[static_cast<size_t>(j)] != identities[static_cast<size_t>(i)])
                negatives.push_back(j);
        if (negatives.empty()) continue;
        any_negative = true;

        const double s_ii = s[static_cast<size_t>(i) * stride + static_cast<size_t>(i)];
        const int a = alt_slot[static_cast<size_t>(i)];
        const double s_w =
            a >= 0 ? sw[static_cast<size_t>(i) * wstride + static_cast<size_t>(a)] : 0.0;
        const double alpha2 = a >= 0 ? adaptive_margin(s_ii, s_w, alpha1) : 0.0;
        double d_alpha2 = 0.0;

        auto add_strong_t = [&](int j) {  // matched image vs negative text
            const double h = alpha1 - s_ii + s[static_cast<size_t>(i) * stride + static_cast<size_t>(j)];
            if (h > 0.0) {
                out.value += h;
                if (d_s) {
                    (*d_s)[static_cast<size_t>(i) * stride + static_cast<size_t>(i)] -= 1.0;
                    (*d_s)[static_cast<size_t>(i) * stride + static_cast<size_t>(j)] += 1.0;
                }
            }
        };
        auto add_strong_v = [&](int j) {  // matched text vs negative image
            const double h = alpha1 - s_ii + s[static_cast<size_t>(j) * stride + static_cast<size_t>(i)];
            if (h > 0.0) {
                out.value += h;
                if (d_s) {
                    (*d_s)[static_cast<size_t>(i) * stride + static_cast<size_t>(i)] -= 1.0;
                    (*d_s)[static_cast<size_t>(j) * stride + static_cast<size_t>(i)] += 1.0;
                }
            }
        };
        auto add_weak_t = [&](int j) {  // weak pair vs negative text
            const double h = alpha2 - s_w + s[static_cast<size_t>(i) * stride + static_cast<size_t>(j)];
            if (h > 0.0) {
                out.value += beta * h;
                d_alpha2 += beta;
                if (d_s && d_sw) {
                    (*d_sw)[static_cast<size_t>(i) * wstride + static_cast<size_t>(a)] -= beta;
                    (*d_s)[static_cast<size_t>(i) * stride + static_cast<size_t>(j)] += beta;
                }
            }
        };
        auto add_weak_v = [&](int j) {  // weak pair vs negative image
            const double h = alpha2 - s_w + sw[static_cast<size_t>(j) * wstride + static_cast<size_t>(a)];
            if (h > 0.0) {
                out.value += beta * h;
                d_alpha2 += beta;
                if (d_sw) {
                    (*d_sw)[static_cast<size_t>(i) * wstride + static_cast<size_t>(a)] -= beta;
                    (*d_sw)[static_cast<size_t>(j) * wstride + static_cast<size_t>(a)] += beta;
                }
            }
        };

        if (cfg.mining == Mining::hardest) {
            int nt = negatives[0], nv = negatives[0];
            for (int j : negatives) {
                if (s[static_cast<size_t>(i) * stride + static_cast<size_t>(j)] >
                    s[static_cast<size_t>(i) * stride + static_cast<size_t>(nt)])
                    nt = j;
                if (s[static_cast<size_t>(j) * stride + static_cast<size_t>(i)] >
                    s[static_cast<size_t>(nv) * stride + static_cast<size_t>(i)])
                    nv = j;
            }
            add_strong_t(nt);
            add_strong_v(nv);
            if (a >= 0) {
                add_weak_t(nt);
                add_weak_v(nv);
            }
        } else {
            for (int j : negatives) {
                add_strong_t(j);
                add_strong_v(j);
                if (a >= 0) {
                    add_weak_t(j);
                    add_weak_v(j);
                }
            }
        }

        // chain rule through the adaptive margin: alpha2 depends on the
        // matched and weak similarities except in its clamped regions
        if (d_alpha2 != 0.0 && d_s && d_sw && s_ii > 0.0 && s_w < s_ii) {
            (*d_sw)[static_cast<size_t>(i) * wstride + static_cast<size_t>(a)] +=
                d_alpha2 * alpha1 / (2.0 * s_ii);
            (*d_s)[static_cast<size_t>(i) * stride + static_cast<size_t>(i)] -=
                d_alpha2 * alpha1 * s_w / (2.0 * s_ii * s_ii);
        }
    }

    out.warned = !any_negative;
    return out;
}

}  // namespace beat
