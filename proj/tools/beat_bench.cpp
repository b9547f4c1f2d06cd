// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0
//
// Times the serial reference path against the OpenMP path for the three
// data-parallel kernels (training step, score matrix via the loss, recall
// evaluation) and verifies both produce bit-identical results.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>

#include "beat/dataset.hpp"
#include "beat/engine.hpp"

using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

uint64_t params_digest(beat::Model& model) {
    uint64_t h = 0xcbf29ce484222325ull;
    beat::visit_params(model.params, model.config(),
                       [&](const std::string&, beat::Vec& d, const std::vector<int>&) {
                           const uint64_t part =
                               beat::fnv1a64(d.data(), d.size() * sizeof(double));
                           h ^= part;
                           h *= 0x100000001b3ull;
                       });
    return h;
}

struct RunResult {
    double train_ms = 0;
    double eval_ms = 0;
    uint64_t digest = 0;
    double final_loss = 0;
    std::vector<int> ranks;
};

RunResult run(const beat::PairDataset& ds, beat::TrainConfig cfg, int steps) {
    RunResult r;
    beat::Trainer trainer(cfg, ds);
    auto t0 = Clock::now();
    beat::StepLog log;
    for (int s = 0; s < steps; ++s) log = trainer.train_step();
    r.train_ms = ms_since(t0) / steps;
    r.final_loss = log.l_total;
    r.digest = params_digest(trainer.model());

    t0 = Clock::now();
    beat::RecallReport report = beat::evaluate_dataset(trainer.model(), ds);
    r.eval_ms = ms_since(t0);
    r.ranks = report.best_rank;
    return r;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"serial vs parallel benchmark"};
    int steps = 10;
    int q = 16;
    int per_id = 2;
    app.add_option("--steps", steps, "training steps per mode");
    app.add_option("--q", q, "identities in the synthetic set");
    app.add_option("--per-id", per_id, "images and texts per identity");
    CLI11_PARSE(app, argc, argv);

    beat::SyntheticSpec spec;
    spec.num_identities = q;
    spec.images_per_id = per_id;
    spec.texts_per_id = per_id;
    spec.noise_scale = 0.1;
    spec.seed = 7;
    const beat::PairDataset ds = beat::generate_synthetic(spec);

    beat::TrainConfig cfg = beat::TrainConfig::desk_profile();
    cfg.epochs = 1;
    cfg.batch_size = std::min(16, ds.num_pairs());

#ifdef _OPENMP
    std::printf("openmp: %d threads\n", omp_get_max_threads());
#else
    std::printf("openmp: not compiled in (parallel mode falls back to serial)\n");
#endif
    std::printf("dataset: %d pairs, %zu images, %zu texts\n\n", ds.num_pairs(),
                ds.images.size(), ds.texts.size());

    cfg.exec = beat::Exec::serial;
    RunResult serial = run(ds, cfg, steps);
    cfg.exec = beat::Exec::parallel;
    RunResult parallel = run(ds, cfg, steps);

    std::printf("%-22s %12s %12s %9s\n", "kernel", "serial", "openmp", "speedup");
    std::printf("%-22s %10.2fms %10.2fms %8.2fx\n", "train step", serial.train_ms,
                parallel.train_ms, serial.train_ms / parallel.train_ms);
    std::printf("%-22s %10.2fms %10.2fms %8.2fx\n", "recall evaluation", serial.eval_ms,
                parallel.eval_ms, serial.eval_ms / parallel.eval_ms);

    const bool same_params = serial.digest == parallel.digest;
    const bool same_ranks = serial.ranks == parallel.ranks;
    const bool same_loss = serial.final_loss == parallel.final_loss;
    std::printf("\nbit-identical: params %s, ranks %s, loss %s\n", same_params ? "yes" : "NO",
                same_ranks ? "yes" : "NO", same_loss ? "yes" : "NO");
    if (!same_params || !same_ranks || !same_loss) {
        std::fprintf(stderr, "serial and parallel paths disagree\n");
        return 1;
    }
    return 0;
}
