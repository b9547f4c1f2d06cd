// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0

#include "beat/model.hpp"

#include <cmath>

namespace beat {

namespace {

void project_shared(const MultiGrainedFeatures& f, const SharedSpaceParams& sp, bool visual,
                    SharedVecs& out) {
    const Mat& wg = visual ? sp.vis_global : sp.txt_global;
    const Mat& wl = visual ? sp.vis_local : sp.txt_local;
    const Mat& wn = visual ? sp.vis_nonlocal : sp.txt_nonlocal;
    matvec(f.global, wg, out.global);
    out.local.resize(f.local.size());
    out.nonlocal.resize(f.nonlocal.size());
    for (size_t k = 0; k < f.local.size(); ++k) matvec(f.local[k], wl, out.local[k]);
    for (size_t k = 0; k < f.nonlocal.size(); ++k) matvec(f.nonlocal[k], wn, out.nonlocal[k]);
}

void project_shared_backward(const MultiGrainedFeatures& f, const SharedVecs& d_out,
                             const SharedSpaceParams& sp, bool visual,
                             SharedSpaceParams& grads, MultiGrainedFeatures& d_f) {
    const Mat& wg = visual ? sp.vis_global : sp.txt_global;
    const Mat& wl = visual ? sp.vis_local : sp.txt_local;
    const Mat& wn = visual ? sp.vis_nonlocal : sp.txt_nonlocal;
    Mat& dwg = visual ? grads.vis_global : grads.txt_global;
    Mat& dwl = visual ? grads.vis_local : grads.txt_local;
    Mat& dwn = visual ? grads.vis_nonlocal : grads.txt_nonlocal;

    matvec_t_accum(d_out.global, wg, d_f.global);
    outer_accum(f.global, d_out.global, dwg);
    for (size_t k = 0; k < f.local.size(); ++k) {
        matvec_t_accum(d_out.local[k], wl, d_f.local[k]);
        outer_accum(f.local[k], d_out.local[k], dwl);
    }
    for (size_t k = 0; k < f.nonlocal.size(); ++k) {
        matvec_t_accum(d_out.nonlocal[k], wn, d_f.nonlocal[k]);
        outer_accum(f.nonlocal[k], d_out.nonlocal[k], dwn);
    }
}

void project_group(const Vec& x, const RemGroupParams& g, std::vector<Vec>& out,
                   std::vector<RemTape>& tapes) {
    out = remg_embed(x, g, &tapes);
}

}  // namespace

// ---------------------------------------------------------------------------
// Allocation and visitation
// ---------------------------------------------------------------------------

ModelParams allocate_params(const TrainConfig& cfg) {
    ModelParams p;
    p.enc.vis.conv1 = ConvLayer(3, cfg.conv_c1, 2);
    p.enc.vis.conv2 = ConvLayer(cfg.conv_c1, cfg.conv_c2, 2);
    p.enc.vis.conv3 = ConvLayer(cfg.conv_c2, cfg.c_backbone, 1);

    p.enc.txt.embed = Mat(cfg.vocab_size, cfg.embed_dim);
    p.enc.txt.wx_fwd = Mat(cfg.embed_dim, cfg.rnn_hidden);
    p.enc.txt.wh_fwd = Mat(cfg.rnn_hidden, cfg.rnn_hidden);
    p.enc.txt.wx_bwd = Mat(cfg.embed_dim, cfg.rnn_hidden);
    p.enc.txt.wh_bwd = Mat(cfg.rnn_hidden, cfg.rnn_hidden);
    p.enc.txt.proj = Mat(2 * cfg.rnn_hidden, cfg.c_backbone);

    p.enc.w_global_vis = Mat(cfg.c_backbone, cfg.c_global);
    p.enc.w_global_txt = Mat(cfg.c_backbone, cfg.c_global);
    p.enc.w_local_vis = Mat(cfg.c_backbone, cfg.c_local);
    p.enc.w_local_txt = Mat(cfg.c_backbone, cfg.c_local);
    p.enc.wam_queries = Mat(cfg.num_parts, cfg.c_backbone);

    auto make_nlm = [&]() {
        NlmParams n;
        n.parts.resize(static_cast<size_t>(cfg.num_parts));
        for (auto& part : n.parts) {
            part.w_alpha = Mat(cfg.c_local, cfg.c_local);
            part.w_beta = Mat(cfg.c_local, cfg.c_local);
            part.w_gamma = Mat(cfg.c_local, cfg.c_local);
            part.w_delta = Mat(cfg.c_local, cfg.c_nonlocal);
        }
        return n;
    };
    p.enc.nlm_vis = make_nlm();
    p.enc.nlm_txt = make_nlm();

    if (cfg.text_space) {
        p.v2t_global = make_rem_group(cfg.num_rems, cfg.c_global, cfg.reduction);
        p.v2t_local = make_rem_group(cfg.num_rems, cfg.c_local, cfg.reduction);
        p.v2t_nonlocal = make_rem_group(cfg.num_rems, cfg.c_nonlocal, cfg.reduction);
    }
    if (cfg.image_space) {
        p.t2v_global = make_rem_group(cfg.num_rems, cfg.c_global, cfg.reduction);
        p.t2v_local = make_rem_group(cfg.num_rems, cfg.c_local, cfg.reduction);
        p.t2v_nonlocal = make_rem_group(cfg.num_rems, cfg.c_nonlocal, cfg.reduction);
    }

    p.shared.resize(static_cast<size_t>(cfg.shared_spaces));
    for (auto& sp : p.shared) {
        sp.vis_global = Mat(cfg.c_global, cfg.c_global);
        sp.txt_global = Mat(cfg.c_global, cfg.c_global);
        sp.vis_local = Mat(cfg.c_local, cfg.c_local);
        sp.txt_local = Mat(cfg.c_local, cfg.c_local);
        sp.vis_nonlocal = Mat(cfg.c_nonlocal, cfg.c_nonlocal);
        sp.txt_nonlocal = Mat(cfg.c_nonlocal, cfg.c_nonlocal);
    }

    p.id.global_vis = Mat(cfg.c_global, cfg.num_identities);
    p.id.global_txt = Mat(cfg.c_global, cfg.num_identities);
    p.id.local_vis = Mat(cfg.c_local, cfg.num_identities);
    p.id.local_txt = Mat(cfg.c_local, cfg.num_identities);
    p.id.nonlocal_vis = Mat(cfg.c_nonlocal, cfg.num_identities);
    p.id.nonlocal_txt = Mat(cfg.c_nonlocal, cfg.num_identities);
    return p;
}

void visit_params(ModelParams& p, const TrainConfig& cfg, const ParamVisitor& fn) {
    auto mat = [&](const std::string& name, Mat& m) {
        fn(name, m.d, {m.rows, m.cols});
    };
    auto conv = [&](const std::string& name, ConvLayer& c) {
        fn(name, c.w, {c.out_c, c.in_c, 3, 3});
    };

    conv("enc.vis.conv1.W", p.enc.vis.conv1);
    conv("enc.vis.conv2.W", p.enc.vis.conv2);
    conv("enc.vis.conv3.W", p.enc.vis.conv3);

    mat("enc.txt.embed.W", p.enc.txt.embed);
    mat("enc.txt.rnn.fwd.Wx", p.enc.txt.wx_fwd);
    mat("enc.txt.rnn.fwd.Wh", p.enc.txt.wh_fwd);
    mat("enc.txt.rnn.bwd.Wx", p.enc.txt.wx_bwd);
    mat("enc.txt.rnn.bwd.Wh", p.enc.txt.wh_bwd);
    mat("enc.txt.proj.W", p.enc.txt.proj);

    mat("enc.vis.W_g", p.enc.w_global_vis);
    mat("enc.txt.W_g", p.enc.w_global_txt);
    mat("enc.vis.W_l", p.enc.w_local_vis);
    mat("enc.txt.W_l", p.enc.w_local_txt);
    mat("enc.txt.wam.queries", p.enc.wam_queries);

    for (int k = 0; k < cfg.num_parts; ++k) {
        const std::string kv = "enc.vis.nlm.k" + std::to_string(k);
        mat(kv + ".W_alpha", p.enc.nlm_vis.parts[static_cast<size_t>(k)].w_alpha);
        mat(kv + ".W_beta", p.enc.nlm_vis.parts[static_cast<size_t>(k)].w_beta);
        mat(kv + ".W_gamma", p.enc.nlm_vis.parts[static_cast<size_t>(k)].w_gamma);
        mat(kv + ".W_delta", p.enc.nlm_vis.parts[static_cast<size_t>(k)].w_delta);
    }
    for (int k = 0; k < cfg.num_parts; ++k) {
        const std::string kt = "enc.txt.nlm.k" + std::to_string(k);
        mat(kt + ".W_alpha", p.enc.nlm_txt.parts[static_cast<size_t>(k)].w_alpha);
        mat(kt + ".W_beta", p.enc.nlm_txt.parts[static_cast<size_t>(k)].w_beta);
        mat(kt + ".W_gamma", p.enc.nlm_txt.parts[static_cast<size_t>(k)].w_gamma);
        mat(kt + ".W_delta", p.enc.nlm_txt.parts[static_cast<size_t>(k)].w_delta);
    }

    auto group = [&](const std::string& prefix, RemGroupParams& g) {
        for (int m = 0; m < g.num_rems(); ++m) {
            mat(prefix + ".m" + std::to_string(m) + ".W1", g.rems[static_cast<size_t>(m)].w1);
            mat(prefix + ".m" + std::to_string(m) + ".W2", g.rems[static_cast<size_t>(m)].w2);
        }
    };
    group("remg.v2t.global", p.v2t_global);
    group("remg.v2t.local", p.v2t_local);
    group("remg.v2t.nonlocal", p.v2t_nonlocal);
    group("remg.t2v.global", p.t2v_global);
    group("remg.t2v.local", p.t2v_local);
    group("remg.t2v.nonlocal", p.t2v_nonlocal);

    for (size_t s = 0; s < p.shared.size(); ++s) {
        const std::string sp = "shared.s" + std::to_string(s);
        mat(sp + ".global.W_v", p.shared[s].vis_global);
        mat(sp + ".global.W_t", p.shared[s].txt_global);
        mat(sp + ".local.W_v", p.shared[s].vis_local);
        mat(sp + ".local.W_t", p.shared[s].txt_local);
        mat(sp + ".nonlocal.W_v", p.shared[s].vis_nonlocal);
        mat(sp + ".nonlocal.W_t", p.shared[s].txt_nonlocal);
    }

    mat("id.global.vis.W", p.id.global_vis);
    mat("id.global.txt.W", p.id.global_txt);
    mat("id.local.vis.W", p.id.local_vis);
    mat("id.local.txt.W", p.id.local_txt);
    mat("id.nonlocal.vis.W", p.id.nonlocal_vis);
    mat("id.nonlocal.txt.W", p.id.nonlocal_txt);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

Model::Model(const TrainConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    if (cfg_.vocab_size < 1) throw ConfigError("model requires vocab_size >= 1");
    if (cfg_.num_identities < 1) throw ConfigError("model requires num_identities >= 1");
    params = allocate_params(cfg_);
}

void Model::init_params(uint64_t seed) {
    visit_params(params, cfg_, [&](const std::string& name, Vec& data,
                                   const std::vector<int>& shape) {
        // Each array gets its own stream so init is independent of
        // visitation order.
        Rng rng(seed ^ fnv1a64(name));
        const bool is_w2 = name.size() >= 3 && name.compare(name.size() - 3, 3, ".W2") == 0;
        if (is_w2) {
            std::fill(data.begin(), data.end(), 0.0);
            return;
        }
        // fan-in is every dimension except the leading output one for conv
        // weights, and the row count for matrices
        size_t fan_in = 1;
        if (shape.size() == 4) {
            fan_in = static_cast<size_t>(shape[1]) * shape[2] * shape[3];
        } else {
            fan_in = static_cast<size_t>(shape[0]);
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : data) v = rng.uniform(-bound, bound);
    });
}

size_t Model::parameter_count() const {
    size_t n = 0;
    visit_params(const_cast<ModelParams&>(params), cfg_,
                 [&](const std::string&, Vec& data, const std::vector<int>&) {
                     n += data.size();
                 });
    return n;
}

void Model::accumulate(ModelParams& dst, const ModelParams& src, const TrainConfig& cfg) {
    std::vector<Vec*> dst_arrays;
    visit_params(dst, cfg, [&](const std::string&, Vec& d, const std::vector<int>&) {
        dst_arrays.push_back(&d);
    });
    size_t idx = 0;
    visit_params(const_cast<ModelParams&>(src), cfg,
                 [&](const std::string&, Vec& s, const std::vector<int>&) {
                     Vec& d = *dst_arrays[idx++];
                     for (size_t i = 0; i < s.size(); ++i) d[i] += s[i];
                 });
}

void Model::zero(ModelParams& p, const TrainConfig& cfg) {
    visit_params(p, cfg, [](const std::string&, Vec& d, const std::vector<int>&) {
        std::fill(d.begin(), d.end(), 0.0);
    });
}

EncodedImage Model::encode_image_sample(const Tensor3& pixels) const {
    if (pixels.h != cfg_.image_h || pixels.w != cfg_.image_w || pixels.c != 3)
        throw std::invalid_argument("image shape does not match config");

    EncodedImage e;
    e.fmap = encode_image(pixels, params.enc.vis, &e.btape);
    e.feats = extract_visual(e.fmap, params.enc, cfg_.num_parts, &e.htape);

    if (cfg_.text_space) {
        project_group(e.feats.global, params.v2t_global, e.to_text.global, e.rem_g);
        e.to_text.local.resize(e.feats.local.size());
        e.to_text.nonlocal.resize(e.feats.nonlocal.size());
        e.rem_l.resize(e.feats.local.size());
        e.rem_n.resize(e.feats.nonlocal.size());
        for (size_t k = 0; k < e.feats.local.size(); ++k)
            project_group(e.feats.local[k], params.v2t_local, e.to_text.local[k], e.rem_l[k]);
        for (size_t k = 0; k < e.feats.nonlocal.size(); ++k)
            project_group(e.feats.nonlocal[k], params.v2t_nonlocal, e.to_text.nonlocal[k],
                          e.rem_n[k]);
    }

    e.shared.resize(params.shared.size());
    for (size_t s = 0; s < params.shared.size(); ++s)
        project_shared(e.feats, params.shared[s], true, e.shared[s]);
    return e;
}

EncodedText Model::encode_text_sample(const std::vector<int>& tokens) const {
    EncodedText e;
    e.len = static_cast<int>(tokens.size());
    e.seq = encode_text(tokens, cfg_.max_tokens, params.enc.txt, &e.btape);
    e.feats = extract_text(e.seq, e.len, params.enc, cfg_.num_parts, &e.htape);

    if (cfg_.image_space) {
        project_group(e.feats.global, params.t2v_global, e.to_image.global, e.rem_g);
        e.to_image.local.resize(e.feats.local.size());
        e.to_image.nonlocal.resize(e.feats.nonlocal.size());
        e.rem_l.resize(e.feats.local.size());
        e.rem_n.resize(e.feats.nonlocal.size());
        for (size_t k = 0; k < e.feats.local.size(); ++k)
            project_group(e.feats.local[k], params.t2v_local, e.to_image.local[k], e.rem_l[k]);
        for (size_t k = 0; k < e.feats.nonlocal.size(); ++k)
            project_group(e.feats.nonlocal[k], params.t2v_nonlocal, e.to_image.nonlocal[k],
                          e.rem_n[k]);
    }

    e.shared.resize(params.shared.size());
    for (size_t s = 0; s < params.shared.size(); ++s)
        project_shared(e.feats, params.shared[s], false, e.shared[s]);
    return e;
}

namespace {

FeatureGrads make_feature_grads(const TrainConfig& cfg, bool project) {
    FeatureGrads g;
    g.feats = zero_features(cfg.num_parts, cfg.c_global, cfg.c_local, cfg.c_nonlocal);
    if (project) {
        g.proj.global.assign(static_cast<size_t>(cfg.num_rems),
                             Vec(static_cast<size_t>(cfg.c_global), 0.0));
        g.proj.local.assign(static_cast<size_t>(cfg.num_parts),
                            std::vector<Vec>(static_cast<size_t>(cfg.num_rems),
                                             Vec(static_cast<size_t>(cfg.c_local), 0.0)));
        g.proj.nonlocal.assign(static_cast<size_t>(cfg.num_parts),
                               std::vector<Vec>(static_cast<size_t>(cfg.num_rems),
                                                Vec(static_cast<size_t>(cfg.c_nonlocal), 0.0)));
    }
    g.shared.resize(static_cast<size_t>(cfg.shared_spaces));
    for (auto& s : g.shared) {
        s.global.assign(static_cast<size_t>(cfg.c_global), 0.0);
        s.local.assign(static_cast<size_t>(cfg.num_parts),
                       Vec(static_cast<size_t>(cfg.c_local), 0.0));
        s.nonlocal.assign(static_cast<size_t>(cfg.num_parts),
                          Vec(static_cast<size_t>(cfg.c_nonlocal), 0.0));
    }
    return g;
}

}  // namespace

FeatureGrads Model::make_feature_grads_image() const {
    return make_feature_grads(cfg_, cfg_.text_space);
}

FeatureGrads Model::make_feature_grads_text() const {
    return make_feature_grads(cfg_, cfg_.image_space);
}

void Model::backward_image_sample(const EncodedImage& e, const FeatureGrads& g,
                                  ModelParams& grads) const {
    MultiGrainedFeatures d_feats = g.feats;

    if (cfg_.text_space) {
        for (int m = 0; m < cfg_.num_rems; ++m)
            rem_backward(g.proj.global[static_cast<size_t>(m)], e.feats.global,
                         e.rem_g[static_cast<size_t>(m)],
                         params.v2t_global.rems[static_cast<size_t>(m)],
                         grads.v2t_global.rems[static_cast<size_t>(m)], d_feats.global);
        for (size_t k = 0; k < e.feats.local.size(); ++k)
            for (int m = 0; m < cfg_.num_rems; ++m)
                rem_backward(g.proj.local[k][static_cast<size_t>(m)], e.feats.local[k],
                             e.rem_l[k][static_cast<size_t>(m)],
                             params.v2t_local.rems[static_cast<size_t>(m)],
                             grads.v2t_local.rems[static_cast<size_t>(m)], d_feats.local[k]);
        for (size_t k = 0; k < e.feats.nonlocal.size(); ++k)
            for (int m = 0; m < cfg_.num_rems; ++m)
                rem_backward(g.proj.nonlocal[k][static_cast<size_t>(m)], e.feats.nonlocal[k],
                             e.rem_n[k][static_cast<size_t>(m)],
                             params.v2t_nonlocal.rems[static_cast<size_t>(m)],
                             grads.v2t_nonlocal.rems[static_cast<size_t>(m)],
                             d_feats.nonlocal[k]);
    }

    for (size_t s = 0; s < params.shared.size(); ++s)
        project_shared_backward(e.feats, g.shared[s], params.shared[s], true, grads.shared[s],
                                d_feats);

    Tensor3 d_fmap(e.fmap.h, e.fmap.w, e.fmap.c);
    extract_visual_backward(d_feats, e.feats, e.htape, e.fmap, params.enc, cfg_.num_parts,
                            grads.enc, d_fmap);
    encode_image_backward(d_fmap, e.btape, params.enc.vis, grads.enc.vis);
}

void Model::backward_text_sample(const EncodedText& e, const FeatureGrads& g,
                                 ModelParams& grads) const {
    MultiGrainedFeatures d_feats = g.feats;

    if (cfg_.image_space) {
        for (int m = 0; m < cfg_.num_rems; ++m)
            rem_backward(g.proj.global[static_cast<size_t>(m)], e.feats.global,
                         e.rem_g[static_cast<size_t>(m)],
                         params.t2v_global.rems[static_cast<size_t>(m)],
                         grads.t2v_global.rems[static_cast<size_t>(m)], d_feats.global);
        for (size_t k = 0; k < e.feats.local.size(); ++k)
            for (int m = 0; m < cfg_.num_rems; ++m)
                rem_backward(g.proj.local[k][static_cast<size_t>(m)], e.feats.local[k],
                             e.rem_l[k][static_cast<size_t>(m)],
                             params.t2v_local.rems[static_cast<size_t>(m)],
                             grads.t2v_local.rems[static_cast<size_t>(m)], d_feats.local[k]);
        for (size_t k = 0; k < e.feats.nonlocal.size(); ++k)
            for (int m = 0; m < cfg_.num_rems; ++m)
                rem_backward(g.proj.nonlocal[k][static_cast<size_t>(m)], e.feats.nonlocal[k],
                             e.rem_n[k][static_cast<size_t>(m)],
                             params.t2v_nonlocal.rems[static_cast<size_t>(m)],
                             grads.t2v_nonlocal.rems[static_cast<size_t>(m)],
                             d_feats.nonlocal[k]);
    }

    for (size_t s = 0; s < params.shared.size(); ++s)
        project_shared_backward(e.feats, g.shared[s], params.shared[s], false, grads.shared[s],
                                d_feats);

    Mat d_seq(e.seq.rows, e.seq.cols);
    extract_text_backward(d_feats, e.feats, e.htape, e.seq, e.len, params.enc, cfg_.num_parts,
                          grads.enc, d_seq);
    encode_text_backward(d_seq, e.btape, params.enc.txt, grads.enc.txt);
}

EmbeddedPair bidirectional_embed(const MultiGrainedFeatures& vis,
                                 const MultiGrainedFeatures& txt, const ModelParams& p) {
    if (p.v2t_global.rems.empty() || p.t2v_global.rems.empty())
        throw ConfigError("bidirectional embedding requires both direction groups");

    EmbeddedPair out;
    out.image_in_text.global = remg_embed(vis.global, p.v2t_global);
    out.text_in_image.global = remg_embed(txt.global, p.t2v_global);
    out.image_in_text.local.resize(vis.local.size());
    out.image_in_text.nonlocal.resize(vis.nonlocal.size());
    out.text_in_image.local.resize(txt.local.size());
    out.text_in_image.nonlocal.resize(txt.nonlocal.size());
    for (size_t k = 0; k < vis.local.size(); ++k)
        out.image_in_text.local[k] = remg_embed(vis.local[k], p.v2t_local);
    for (size_t k = 0; k < vis.nonlocal.size(); ++k)
        out.image_in_text.nonlocal[k] = remg_embed(vis.nonlocal[k], p.v2t_nonlocal);
    for (size_t k = 0; k < txt.local.size(); ++k)
        out.text_in_image.local[k] = remg_embed(txt.local[k], p.t2v_local);
    for (size_t k = 0; k < txt.nonlocal.size(); ++k)
        out.text_in_image.nonlocal[k] = remg_embed(txt.nonlocal[k], p.t2v_nonlocal);
    return out;
}

}  // namespace beat
