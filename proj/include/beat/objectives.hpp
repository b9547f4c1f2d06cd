// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives and similarity rules. Similarities are cosine-based:
// during training every candidate projection contributes (sum over the M
// members, both spaces); at inference each space contributes its best
// candidate only. The compound ranking loss runs per granularity with an
// adaptive margin for the weak (same-identity alternate text) terms, and the
// identity loss is a per-granularity softmax cross entropy on pre-embedding
// features.

#pragma once

#include <vector>

#include "beat/config.hpp"
#include "beat/core.hpp"
#include "beat/model.hpp"

namespace beat {

struct GranScores {
    double global = 0, local = 0, nonlocal = 0;
};

// Per-granularity training similarity: sum over projection candidates in
// every enabled space, part scores averaged over K.
GranScores training_scores(const TrainConfig& cfg, const EncodedImage& img,
                           const EncodedText& txt);

// Weighted sum over granularities (the similarity used by the ranking loss).
double combine_scores(const TrainConfig& cfg, const GranScores& s);
double training_similarity(const TrainConfig& cfg, const EncodedImage& img,
                           const EncodedText& txt);

// Accumulates d(combined)/d(features and projections) of both samples for
// per-granularity upstream gradients d.
void training_scores_backward(const TrainConfig& cfg, const EncodedImage& img,
                              const EncodedText& txt, const GranScores& d,
                              FeatureGrads& g_img, FeatureGrads& g_txt);

// Inference rule: per space the best of the M candidates, spaces summed,
// granularities weighted as in training.
GranScores inference_scores(const TrainConfig& cfg, const EncodedImage& img,
                            const EncodedText& txt);
double inference_similarity(const TrainConfig& cfg, const EncodedImage& img,
                            const EncodedText& txt);

// alpha_2 = (min(s_weak/s_strong, 1) + 1) * alpha_1 / 2, with the ratio
// clamped to 1 when s_strong <= 0 (cosine sums can be non-positive early).
double adaptive_margin(double s_strong, double s_weak, double alpha1);

// ---------------------------------------------------------------------------
// Identity loss
// ---------------------------------------------------------------------------

// Returns the granularity-weighted cross entropy of both modalities; when the
// gradient outputs are non-null, accumulates into them as a side effect.
double id_loss_sample(const TrainConfig& cfg, const IdClassifierParams& id,
                      const MultiGrainedFeatures& vis, const MultiGrainedFeatures& txt, int y,
                      IdClassifierParams* grads, MultiGrainedFeatures* d_vis,
                      MultiGrainedFeatures* d_txt);

// ---------------------------------------------------------------------------
// Compound ranking loss (per-granularity scalar form)
// ---------------------------------------------------------------------------

struct CrGranResult {
    double value = 0;
    bool warned = false;  // no valid negatives anywhere in the batch
};

// Operates on one granularity's score matrices:
//   s[i*B + j]  = S(image_i, text_j)
//   sw[j*A + a] = S(image_j, alt_text_a)
// alt_slot[i] is the alt column for position i or -1. When d_s / d_sw are
// non-null the loss gradients are accumulated into them (same layouts).
CrGranResult cr_loss_granularity(const TrainConfig& cfg, int batch, int num_alts,
                                 const std::vector<double>& s, const std::vector<double>& sw,
                                 const std::vector<int>& alt_slot,
                                 const std::vector<int>& identities, std::vector<double>* d_s,
                                 std::vector<double>* d_sw);

}  // namespace beat
