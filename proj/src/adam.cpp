// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0

#include "beat/adam.hpp"

#include <cmath>

namespace beat {

namespace {

bool is_text_backbone(const std::string& name) {
    return name.rfind("enc.txt.embed", 0) == 0 || name.rfind("enc.txt.rnn", 0) == 0 ||
           name.rfind("enc.txt.proj", 0) == 0;
}

}  // namespace

Adam::Adam(const Model& model) {
    const bool freeze_text = model.config().freeze_text;
    visit_params(const_cast<ModelParams&>(model.params), model.config(),
                 [&](const std::string& name, Vec& data, const std::vector<int>&) {
                     m_.emplace_back(data.size(), 0.0);
                     v_.emplace_back(data.size(), 0.0);
                     frozen_.push_back(freeze_text && is_text_backbone(name));
                 });
}

void Adam::step(Model& model, const ModelParams& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));

    std::vector<Vec*> grad_arrays;
    visit_params(const_cast<ModelParams&>(grads), model.config(),
                 [&](const std::string&, Vec& g, const std::vector<int>&) {
                     grad_arrays.push_back(&g);
                 });

    size_t idx = 0;
    visit_params(model.params, model.config(),
                 [&](const std::string&, Vec& p, const std::vector<int>&) {
                     const size_t slot = idx++;
                     if (frozen_[slot]) return;
                     const Vec& g = *grad_arrays[slot];
                     Vec& m = m_[slot];
                     Vec& v = v_[slot];
                     for (size_t i = 0; i < p.size(); ++i) {
                         m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
                         v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
                         const double mhat = m[i] / bc1;
                         const double vhat = v[i] / bc2;
                         p[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
                     }
                 });
}

void Adam::restore(std::vector<Vec> m, std::vector<Vec> v, int64_t t) {
    if (m.size() != m_.size() || v.size() != v_.size())
        throw IoError("optimizer state does not match the model layout");
    for (size_t i = 0; i < m.size(); ++i)
        if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size())
            throw IoError("optimizer state array shape mismatch");
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
}

}  // namespace beat
