// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0
//
// Training loop, recall evaluation and the ablation runner. A training step
// runs three phases: parallel per-position encoding, serial cross-sample
// loss assembly, and parallel per-position backward into per-position
// gradient buffers that are reduced in a fixed order — so results are
// bit-identical regardless of thread count.

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "beat/adam.hpp"
#include "beat/checkpoint.hpp"
#include "beat/config.hpp"
#include "beat/dataset.hpp"
#include "beat/model.hpp"
#include "beat/objectives.hpp"

namespace beat {

struct LossBreakdown {
    double id = 0, cr = 0, total = 0;
    bool cr_warned = false;  // a batch had no valid negatives
};

struct StepLog {
    int step = 0;
    double l_id = 0, l_cr = 0, l_total = 0;  // per-sample means
    double lr = 0;
};

struct History {
    std::vector<StepLog> steps;
    bool cr_warned_any = false;

    std::string csv_text() const;  // "step,L_id,L_cr,L_total,lr" lines
};

class Trainer {
  public:
    Trainer(const TrainConfig& cfg, const PairDataset& ds);
    Trainer(const Checkpoint& ckpt, const PairDataset& ds);

    Model& model() { return *model_; }
    const Model& model() const { return *model_; }

    StepLog train_step();
    History train();  // the configured number of epochs

    // Batch-summed loss; the gradient variant also fills `grads`.
    LossBreakdown compute_loss(const Batch& batch);
    LossBreakdown compute_loss_and_grads(const Batch& batch, ModelParams& grads);

    Batch next_batch();
    int steps_per_epoch() const;

    Checkpoint checkpoint() const;
    Rng& batch_rng() { return batch_rng_; }

  private:
    const PairDataset& ds_;
    std::unique_ptr<Model> model_;
    Adam adam_;
    Rng batch_rng_;
    int step_count_ = 0;
    int epochs_done_ = 0;
    bool cr_warned_ = false;
    std::vector<ModelParams> grad_pool_;  // per-position buffers, reduced in order

    struct BatchWork;
    void encode_batch(const Batch& batch, BatchWork& work) const;
    LossBreakdown assemble_loss(const Batch& batch, BatchWork& work, ModelParams* grads);
};

// Binds a dataset to a config: fills vocab_size and num_identities.
TrainConfig bind_dataset(TrainConfig cfg, const PairDataset& ds);

struct TrainResult {
    Checkpoint checkpoint;
    History history;
};
TrainResult train(const PairDataset& ds, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct RecallReport {
    std::vector<int> ks;
    std::vector<double> recall;  // percentage per k
    int num_queries = 0;
    int gallery_size = 0;
    std::vector<int> best_rank;  // 1-based rank of the first correct item per query

    double at(int k) const;  // recall for one of the configured ks
};

// Gallery order sorted by descending score; ties broken by ascending index.
std::vector<int> rank_gallery(const std::vector<double>& scores);

RecallReport evaluate_recall(const Model& model, const std::vector<TextSample>& queries,
                             const std::vector<ImageSample>& gallery,
                             const std::vector<int>& ks = {1, 5, 10});

// Text-to-image retrieval over a whole dataset (queries = texts, gallery = images).
RecallReport evaluate_dataset(const Model& model, const PairDataset& ds,
                              const std::vector<int>& ks = {1, 5, 10});

// ---------------------------------------------------------------------------
// Ablation harness
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string exp_id;
    std::string config_digest;
    RecallReport report;
};

struct AblationReport {
    std::string matrix;
    std::vector<AblationRow> rows;

    std::string table_text() const;
    std::string csv_text() const;  // exp_id,config_digest,R@1,R@5,R@10
};

// Returns the per-row configs for a named matrix without training.
std::vector<std::pair<std::string, TrainConfig>> ablation_matrix(const TrainConfig& base,
                                                                 const std::string& matrix);

AblationReport run_ablation(const PairDataset& ds, const TrainConfig& base,
                            const std::string& matrix);

// ---------------------------------------------------------------------------
// Export operations
// ---------------------------------------------------------------------------

// [H x W] grid of cosine similarities between each spatial feature (mapped
// through the global visual head) and the best text-to-image candidate of
// the query's global feature.
Mat similarity_heatmap(const Model& model, const ImageSample& image, const TextSample& text);
void write_heatmap(const Mat& grid, const std::string& path);

// One row per sample: sample_id, modality, identity, then the raw global
// feature values.
void export_embeddings(const Model& model, const PairDataset& ds, const std::string& path);

}  // namespace beat
