// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0
//
// Every knob of the model and training loop in one value type, with the two
// named profiles (desk, paper), a validator, and a canonical key=value text
// form used by config files, checkpoints and run manifests.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "beat/core.hpp"

namespace beat {

enum class Mining { hardest, sum_all };

struct TrainConfig {
    // --- data geometry ---
    int image_h = 48;
    int image_w = 16;
    int max_tokens = 24;

    // Bound to a concrete dataset before a model is built.
    int vocab_size = 0;
    int num_identities = 0;

    // --- backbone ---
    int conv_c1 = 16;
    int conv_c2 = 24;
    int c_backbone = 32;  // channel dim of the feature map and text sequence
    int embed_dim = 32;
    int rnn_hidden = 16;

    // --- heads ---
    int num_parts = 6;   // horizontal stripes / attention parts
    int c_global = 64;
    int c_local = 64;
    int c_nonlocal = 32;

    // --- embedding groups ---
    int num_rems = 4;    // projections per group
    int reduction = 8;   // bottleneck ratio

    // --- alignment spaces ---
    bool image_space = true;
    bool text_space = true;
    int shared_spaces = 0;  // one-to-one joint spaces (the baseline paradigm)

    // --- objectives ---
    bool use_id_loss = true;
    bool use_cr_loss = true;
    bool use_global = true;
    bool use_local = true;
    bool use_nonlocal = true;
    double w_global = 2.0;
    double w_local = 1.0;
    double w_nonlocal = 1.0;
    double margin = 0.2;       // alpha_1
    double weak_weight = 0.1;  // beta
    Mining mining = Mining::hardest;

    // --- optimization ---
    int batch_size = 16;
    double learning_rate = 0.001;
    int epochs = 30;
    uint64_t seed = 42;
    bool hflip = true;
    bool freeze_text = false;
    Exec exec = Exec::parallel;

    static TrainConfig desk_profile();
    static TrainConfig paper_profile();

    // Spatial size of the backbone output for the configured input.
    int feature_h() const;
    int feature_w() const;

    double eff_w_global() const { return use_global ? w_global : 0.0; }
    double eff_w_local() const { return use_local ? w_local : 0.0; }
    double eff_w_nonlocal() const { return use_nonlocal ? w_nonlocal : 0.0; }

    // True when the bottleneck groups carry exactly as many weights as the
    // plain one-to-one projection they replace (num_rems == reduction / 2).
    bool rem_parity_exact() const { return 2 * num_rems == reduction; }

    // Throws ConfigError with a one-line reason on any invariant violation.
    void validate() const;

    std::string to_kv_text() const;
    static TrainConfig from_kv_text(const std::string& text);

    // Applies a single "key=value" override.
    void set_field(const std::string& key, const std::string& value);

    std::string digest() const;  // FNV-1a of the canonical text, hex
};

}  // namespace beat
