// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0
//
// Single-archive checkpoint: a JSON manifest (config text, optimizer step,
// rng state, epoch counter) followed by shape-tagged little-endian float64
// arrays under their canonical names. save -> load -> save is byte-identical.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "beat/adam.hpp"
#include "beat/config.hpp"
#include "beat/model.hpp"

namespace beat {

struct Checkpoint {
    TrainConfig config;
    ModelParams params;
    std::vector<Vec> adam_m, adam_v;  // empty when no optimizer state
    int64_t adam_step = 0;
    std::string rng_state;
    int trained_epochs = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace beat
