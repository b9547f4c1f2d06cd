// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0
//
// Adaptive-moment optimizer with the standard moment defaults and no weight
// decay. State arrays are aligned with the model's canonical parameter order.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "beat/model.hpp"

namespace beat {

class Adam {
  public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    Adam() = default;
    Adam(const Model& model);

    // One update over every non-frozen parameter array.
    void step(Model& model, const ModelParams& grads, double lr);

    int64_t step_count() const { return t_; }

    // exposed for checkpointing; aligned with visit_params order
    std::vector<Vec>& moment1() { return m_; }
    std::vector<Vec>& moment2() { return v_; }
    const std::vector<Vec>& moment1() const { return m_; }
    const std::vector<Vec>& moment2() const { return v_; }
    void restore(std::vector<Vec> m, std::vector<Vec> v, int64_t t);

  private:
    std::vector<Vec> m_, v_;
    std::vector<bool> frozen_;
    int64_t t_ = 0;
};

}  // namespace beat
