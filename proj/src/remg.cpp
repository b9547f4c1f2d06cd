// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0

#include "beat/remg.hpp"

namespace beat {

RemGroupParams make_rem_group(int num_rems, int c_in, int reduction) {
    if (num_rems < 1) throw std::invalid_argument("group needs at least one member");
    if (reduction < 1 || c_in % reduction != 0)
        throw std::invalid_argument("reduction must divide the input dimension");
    RemGroupParams g;
    g.rems.reserve(static_cast<size_t>(num_rems));
    for (int m = 0; m < num_rems; ++m) g.rems.emplace_back(c_in, reduction);
    return g;
}

Vec rem_forward(const Vec& x, const RemParams& p, RemTape* tape) {
    if (static_cast<int>(x.size()) != p.w1.rows)
        throw std::invalid_argument("rem input dimension mismatch");
    Vec hidden;
    matvec(x, p.w1, hidden);
    Vec act = hidden;
    for (double& v : act) v = v > 0.0 ? v : 0.0;
    Vec out = x;
    for (int r = 0; r < p.w2.rows; ++r) {
        const double a = act[static_cast<size_t>(r)];
        if (a == 0.0) continue;
        const double* wr = p.w2.row(r);
        for (int c = 0; c < p.w2.cols; ++c) out[static_cast<size_t>(c)] += a * wr[c];
    }
    if (tape) tape->hidden = std::move(hidden);
    return out;
}

void rem_backward(const Vec& d_out, const Vec& x, const RemTape& tape, const RemParams& p,
                  RemParams& grads, Vec& d_x) {
    const size_t bott = tape.hidden.size();

    // residual path
    for (size_t i = 0; i < x.size(); ++i) d_x[i] += d_out[i];

    // bottleneck path
    Vec act(bott);
    for (size_t i = 0; i < bott; ++i) act[i] = tape.hidden[i] > 0.0 ? tape.hidden[i] : 0.0;

    Vec d_act(bott, 0.0);
    matvec_t_accum(d_out, p.w2, d_act);
    outer_accum(act, d_out, grads.w2);

    for (size_t i = 0; i < bott; ++i)
        if (tape.hidden[i] <= 0.0) d_act[i] = 0.0;

    matvec_t_accum(d_act, p.w1, d_x);
    outer_accum(x, d_act, grads.w1);
}

std::vector<Vec> remg_embed(const Vec& x, const RemGroupParams& g,
                            std::vector<RemTape>* tapes) {
    if (g.rems.empty()) throw ConfigError("projection group has no members");
    std::vector<Vec> out;
    out.reserve(g.rems.size());
    if (tapes) tapes->resize(g.rems.size());
    for (size_t m = 0; m < g.rems.size(); ++m)
        out.push_back(rem_forward(x, g.rems[m], tapes ? &(*tapes)[m] : nullptr));
    return out;
}

}  // namespace beat
