// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0
//
// Residual embedding modules and their groups: each module maps
// x -> x + relu(x W1) W2 through a bottleneck of width C/r, and a group of M
// such modules projects one feature into M candidates in the opposite
// modality's space. With M = r/2 a group carries exactly the C^2 weights of
// the plain linear projection it replaces.

#pragma once

#include <vector>

#include "beat/core.hpp"

namespace beat {

struct RemParams {
    Mat w1;  // [C x C/r]
    Mat w2;  // [C/r x C]

    RemParams() = default;
    RemParams(int c_in, int reduction)
        : w1(c_in, c_in / reduction), w2(c_in / reduction, c_in) {}

    size_t weight_count() const { return w1.size() + w2.size(); }
};

struct RemGroupParams {
    std::vector<RemParams> rems;  // M members; empty when the group is unused

    int num_rems() const { return static_cast<int>(rems.size()); }
    int input_dim() const { return rems.empty() ? 0 : rems[0].w1.rows; }
    size_t weight_count() const {
        size_t n = 0;
        for (const auto& r : rems) n += r.weight_count();
        return n;
    }
};

RemGroupParams make_rem_group(int num_rems, int c_in, int reduction);

struct RemTape {
    Vec hidden;  // pre-activation x W1
};

// x + relu(x W1) W2; output dimension always equals the input dimension.
Vec rem_forward(const Vec& x, const RemParams& p, RemTape* tape = nullptr);
void rem_backward(const Vec& d_out, const Vec& x, const RemTape& tape, const RemParams& p,
                  RemParams& grads, Vec& d_x);

// All M projections of x, in member order.
std::vector<Vec> remg_embed(const Vec& x, const RemGroupParams& g,
                            std::vector<RemTape>* tapes = nullptr);

}  // namespace beat
