// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0

#include "beat/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace beat {

namespace {

Tensor3 materialize_pixels(const ImageSample& img, bool flip) {
    if (!flip) return img.pixels;
    Tensor3 out(img.pixels.h, img.pixels.w, img.pixels.c);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            for (int c = 0; c < out.c; ++c)
                out.at(y, x, c) = img.pixels.at(y, img.pixels.w - 1 - x, c);
    return out;
}

bool nonzero(const GranScores& g) {
    return g.global != 0.0 || g.local != 0.0 || g.nonlocal != 0.0;
}

std::string format_pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// History
// ---------------------------------------------------------------------------

std::string History::csv_text() const {
    std::ostringstream os;
    os << "step,L_id,L_cr,L_total,lr\n";
    char buf[160];
    for (const StepLog& s : steps) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", s.step, s.l_id, s.l_cr,
                      s.l_total, s.lr);
        os << buf;
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

TrainConfig bind_dataset(TrainConfig cfg, const PairDataset& ds) {
    cfg.vocab_size = ds.vocab.size();
    cfg.num_identities = ds.num_identities;
    return cfg;
}

struct Trainer::BatchWork {
    std::vector<EncodedImage> imgs;
    std::vector<EncodedText> txts;
    std::vector<EncodedText> alts;
    std::vector<int> alt_slot;  // per position
    int num_alts = 0;
    std::vector<GranScores> s;   // B x B
    std::vector<GranScores> sw;  // B x A
};

Trainer::Trainer(const TrainConfig& cfg, const PairDataset& ds)
    : ds_(ds), batch_rng_(cfg.seed ^ 0x9e3779b97f4a7c15ull) {
    TrainConfig bound = bind_dataset(cfg, ds);
    if (bound.batch_size > ds.num_pairs())
        throw ConfigError("batch_size exceeds the number of pairs in the dataset");
    model_ = std::make_unique<Model>(bound);
    model_->init_params(bound.seed);
    adam_ = Adam(*model_);
}

Trainer::Trainer(const Checkpoint& ckpt, const PairDataset& ds)
    : ds_(ds), batch_rng_(0) {
    if (ckpt.config.vocab_size != ds.vocab.size() ||
        ckpt.config.num_identities != ds.num_identities)
        throw ConfigError("checkpoint was trained on a differently shaped dataset");
    model_ = std::make_unique<Model>(ckpt.config);
    model_->params = ckpt.params;
    adam_ = Adam(*model_);
    if (!ckpt.adam_m.empty()) adam_.restore(ckpt.adam_m, ckpt.adam_v, ckpt.adam_step);
    batch_rng_.deserialize(ckpt.rng_state);
    step_count_ = static_cast<int>(ckpt.adam_step);
    epochs_done_ = ckpt.trained_epochs;
}

int Trainer::steps_per_epoch() const {
    return std::max(1, ds_.num_pairs() / model_->config().batch_size);
}

Batch Trainer::next_batch() {
    return sample_identity_batch(ds_, model_->config().batch_size, batch_rng_,
                                 model_->config().hflip);
}

void Trainer::encode_batch(const Batch& batch, BatchWork& work) const {
    const Model& m = *model_;
    const TrainConfig& cfg = m.config();
    const int batch_size = batch.size();

    work.imgs.resize(static_cast<size_t>(batch_size));
    work.txts.resize(static_cast<size_t>(batch_size));
    work.alt_slot.assign(static_cast<size_t>(batch_size), -1);
    work.num_alts = 0;
    for (int i = 0; i < batch_size; ++i)
        if (batch.alt_text_idx[static_cast<size_t>(i)] != kNoAltText)
            work.alt_slot[static_cast<size_t>(i)] = work.num_alts++;
    work.alts.resize(static_cast<size_t>(work.num_alts));

    parallel_for(batch_size, cfg.exec, [&](int i) {
        const auto& img = ds_.images[static_cast<size_t>(batch.image_idx[static_cast<size_t>(i)])];
        work.imgs[static_cast<size_t>(i)] =
            m.encode_image_sample(materialize_pixels(img, batch.flip[static_cast<size_t>(i)]));
        const auto& txt = ds_.texts[static_cast<size_t>(batch.text_idx[static_cast<size_t>(i)])];
        work.txts[static_cast<size_t>(i)] = m.encode_text_sample(txt.tokens);
        const int slot = work.alt_slot[static_cast<size_t>(i)];
        if (slot >= 0) {
            const auto& alt =
                ds_.texts[static_cast<size_t>(batch.alt_text_idx[static_cast<size_t>(i)])];
            work.alts[static_cast<size_t>(slot)] = m.encode_text_sample(alt.tokens);
        }
    });

    // pairwise similarity scores, one row per image
    work.s.assign(static_cast<size_t>(batch_size) * batch_size, GranScores{});
    work.sw.assign(static_cast<size_t>(batch_size) * work.num_alts, GranScores{});
    parallel_for(batch_size, cfg.exec, [&](int i) {
        for (int j = 0; j < batch_size; ++j)
            work.s[static_cast<size_t>(i) * batch_size + j] =
                training_scores(cfg, work.imgs[static_cast<size_t>(i)],
                                work.txts[static_cast<size_t>(j)]);
        for (int a = 0; a < work.num_alts; ++a)
            work.sw[static_cast<size_t>(i) * work.num_alts + a] =
                training_scores(cfg, work.imgs[static_cast<size_t>(i)],
                                work.alts[static_cast<size_t>(a)]);
    });
}

LossBreakdown Trainer::assemble_loss(const Batch& batch, BatchWork& work, ModelParams* grads) {
    const Model& m = *model_;
    const TrainConfig& cfg = m.config();
    const int batch_size = batch.size();
    const int num_alts = work.num_alts;

    LossBreakdown out;

    std::vector<GranScores> d_s, d_sw;
    if (grads) {
        d_s.assign(work.s.size(), GranScores{});
        d_sw.assign(work.sw.size(), GranScores{});
    }

    // -- compound ranking loss, one scalar system per granularity --
    if (cfg.use_cr_loss) {
        std::vector<double> sg(work.s.size()), swg(work.sw.size());
        std::vector<double> dsg, dswg;

        struct GranAccess {
            double weight;
            double GranScores::* field;
        };
        const GranAccess grans[3] = {{cfg.eff_w_global(), &GranScores::global},
                                     {cfg.eff_w_local(), &GranScores::local},
                                     {cfg.eff_w_nonlocal(), &GranScores::nonlocal}};
        for (const auto& g : grans) {
            if (g.weight == 0.0) continue;
            for (size_t i = 0; i < work.s.size(); ++i) sg[i] = work.s[i].*g.field;
            for (size_t i = 0; i < work.sw.size(); ++i) swg[i] = work.sw[i].*g.field;
            if (grads) {
                dsg.assign(work.s.size(), 0.0);
                dswg.assign(work.sw.size(), 0.0);
            }
            CrGranResult res = cr_loss_granularity(cfg, batch_size, num_alts, sg, swg,
                                                   work.alt_slot, batch.identities,
                                                   grads ? &dsg : nullptr,
                                                   grads ? &dswg : nullptr);
            out.cr += g.weight * res.value;
            out.cr_warned = out.cr_warned || res.warned;
            if (grads) {
                for (size_t i = 0; i < d_s.size(); ++i) d_s[i].*g.field += g.weight * dsg[i];
                for (size_t i = 0; i < d_sw.size(); ++i) d_sw[i].*g.field += g.weight * dswg[i];
            }
        }
    }

    // -- push similarity gradients into per-sample feature slots (serial:
    //    entries touch two samples each) --
    std::vector<FeatureGrads> fg_img, fg_txt, fg_alt;
    if (grads) {
        fg_img.reserve(static_cast<size_t>(batch_size));
        fg_txt.reserve(static_cast<size_t>(batch_size));
        fg_alt.reserve(static_cast<size_t>(num_alts));
        for (int i = 0; i < batch_size; ++i) {
            fg_img.push_back(m.make_feature_grads_image());
            fg_txt.push_back(m.make_feature_grads_text());
        }
        for (int a = 0; a < num_alts; ++a) fg_alt.push_back(m.make_feature_grads_text());

        for (int i = 0; i < batch_size; ++i) {
            for (int j = 0; j < batch_size; ++j) {
                const GranScores& d = d_s[static_cast<size_t>(i) * batch_size + j];
                if (nonzero(d))
                    training_scores_backward(cfg, work.imgs[static_cast<size_t>(i)],
                                             work.txts[static_cast<size_t>(j)], d,
                                             fg_img[static_cast<size_t>(i)],
                                             fg_txt[static_cast<size_t>(j)]);
            }
            for (int a = 0; a < num_alts; ++a) {
                const GranScores& d = d_sw[static_cast<size_t>(i) * num_alts + a];
                if (nonzero(d))
                    training_scores_backward(cfg, work.imgs[static_cast<size_t>(i)],
                                             work.alts[static_cast<size_t>(a)], d,
                                             fg_img[static_cast<size_t>(i)],
                                             fg_alt[static_cast<size_t>(a)]);
            }
        }
    }

    // -- identity loss and per-position backward --
    std::vector<double> id_vals(static_cast<size_t>(batch_size), 0.0);
    if (grads) {
        if (grad_pool_.size() < static_cast<size_t>(batch_size)) {
            grad_pool_.reserve(static_cast<size_t>(batch_size));
            while (grad_pool_.size() < static_cast<size_t>(batch_size))
                grad_pool_.push_back(m.make_grad_buffer());
        }
        parallel_for(batch_size, cfg.exec, [&](int i) {
            ModelParams& buf = grad_pool_[static_cast<size_t>(i)];
            Model::zero(buf, cfg);
            if (cfg.use_id_loss)
                id_vals[static_cast<size_t>(i)] = id_loss_sample(
                    cfg, m.params.id, work.imgs[static_cast<size_t>(i)].feats,
                    work.txts[static_cast<size_t>(i)].feats,
                    batch.identities[static_cast<size_t>(i)], &buf.id,
                    &fg_img[static_cast<size_t>(i)].feats, &fg_txt[static_cast<size_t>(i)].feats);
            m.backward_image_sample(work.imgs[static_cast<size_t>(i)],
                                    fg_img[static_cast<size_t>(i)], buf);
            m.backward_text_sample(work.txts[static_cast<size_t>(i)],
                                   fg_txt[static_cast<size_t>(i)], buf);
            const int slot = work.alt_slot[static_cast<size_t>(i)];
            if (slot >= 0)
                m.backward_text_sample(work.alts[static_cast<size_t>(slot)],
                                       fg_alt[static_cast<size_t>(slot)], buf);
        });
        for (int i = 0; i < batch_size; ++i)
            Model::accumulate(*grads, grad_pool_[static_cast<size_t>(i)], cfg);
    } else if (cfg.use_id_loss) {
        parallel_for(batch_size, cfg.exec, [&](int i) {
            id_vals[static_cast<size_t>(i)] = id_loss_sample(
                cfg, m.params.id, work.imgs[static_cast<size_t>(i)].feats,
                work.txts[static_cast<size_t>(i)].feats,
                batch.identities[static_cast<size_t>(i)], nullptr, nullptr, nullptr);
        });
    }
    for (double v : id_vals) out.id += v;

    out.total = out.id + out.cr;
    return out;
}

LossBreakdown Trainer::compute_loss(const Batch& batch) {
    BatchWork work;
    encode_batch(batch, work);
    return assemble_loss(batch, work, nullptr);
}

LossBreakdown Trainer::compute_loss_and_grads(const Batch& batch, ModelParams& grads) {
    BatchWork work;
    encode_batch(batch, work);
    return assemble_loss(batch, work, &grads);
}

StepLog Trainer::train_step() {
    const TrainConfig& cfg = model_->config();
    Batch batch = next_batch();
    ModelParams grads = model_->make_grad_buffer();
    LossBreakdown loss = compute_loss_and_grads(batch, grads);

    if (!std::isfinite(loss.total))
        throw DivergenceError("non-finite loss at step " + std::to_string(step_count_ + 1) +
                              " (id=" + std::to_string(loss.id) +
                              ", cr=" + std::to_string(loss.cr) + ")");

    adam_.step(*model_, grads, cfg.learning_rate);
    ++step_count_;

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    StepLog log;
    log.step = step_count_;
    log.l_id = loss.id * inv_b;
    log.l_cr = loss.cr * inv_b;
    log.l_total = loss.total * inv_b;
    log.lr = cfg.learning_rate;
    if (loss.cr_warned) cr_warned_ = true;
    return log;
}

History Trainer::train() {
    History hist;
    const int per_epoch = steps_per_epoch();
    for (int epoch = epochs_done_; epoch < model_->config().epochs; ++epoch) {
        for (int s = 0; s < per_epoch; ++s) hist.steps.push_back(train_step());
        epochs_done_ = epoch + 1;
    }
    hist.cr_warned_any = cr_warned_;
    return hist;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint ckpt;
    ckpt.config = model_->config();
    ckpt.params = model_->params;
    ckpt.adam_m = adam_.moment1();
    ckpt.adam_v = adam_.moment2();
    ckpt.adam_step = adam_.step_count();
    ckpt.rng_state = batch_rng_.serialize();
    ckpt.trained_epochs = epochs_done_;
    return ckpt;
}

TrainResult train(const PairDataset& ds, const TrainConfig& cfg) {
    Trainer trainer(cfg, ds);
    TrainResult result;
    result.history = trainer.train();
    result.checkpoint = trainer.checkpoint();
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

double RecallReport::at(int k) const {
    for (size_t i = 0; i < ks.size(); ++i)
        if (ks[i] == k) return recall[i];
    throw std::invalid_argument("recall@" + std::to_string(k) + " was not evaluated");
}

std::vector<int> rank_gallery(const std::vector<double>& scores) {
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
            return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
        return a < b;
    });
    return order;
}

RecallReport evaluate_recall(const Model& model, const std::vector<TextSample>& queries,
                             const std::vector<ImageSample>& gallery,
                             const std::vector<int>& ks) {
    if (queries.empty()) throw std::invalid_argument("query set is empty");
    if (gallery.empty()) throw std::invalid_argument("gallery is empty");

    const TrainConfig& cfg = model.config();
    const int nq = static_cast<int>(queries.size());
    const int ng = static_cast<int>(gallery.size());

    std::vector<EncodedImage> enc_gallery(static_cast<size_t>(ng));
    parallel_for(ng, cfg.exec, [&](int j) {
        enc_gallery[static_cast<size_t>(j)] =
            model.encode_image_sample(gallery[static_cast<size_t>(j)].pixels);
    });

    RecallReport report;
    report.ks = ks;
    report.num_queries = nq;
    report.gallery_size = ng;
    report.best_rank.assign(static_cast<size_t>(nq), ng + 1);

    parallel_for(nq, cfg.exec, [&](int qi) {
        const EncodedText enc_q =
            model.encode_text_sample(queries[static_cast<size_t>(qi)].tokens);
        std::vector<double> scores(static_cast<size_t>(ng));
        for (int j = 0; j < ng; ++j)
            scores[static_cast<size_t>(j)] =
                inference_similarity(cfg, enc_gallery[static_cast<size_t>(j)], enc_q);
        const std::vector<int> order = rank_gallery(scores);
        for (int r = 0; r < ng; ++r) {
            if (gallery[static_cast<size_t>(order[static_cast<size_t>(r)])].identity ==
                queries[static_cast<size_t>(qi)].identity) {
                report.best_rank[static_cast<size_t>(qi)] = r + 1;
                break;
            }
        }
    });

    for (int k : ks) {
        int hit = 0;
        for (int rank : report.best_rank)
            if (rank <= k) ++hit;
        report.recall.push_back(100.0 * hit / nq);
    }
    return report;
}

RecallReport evaluate_dataset(const Model& model, const PairDataset& ds,
                              const std::vector<int>& ks) {
    return evaluate_recall(model, ds.texts, ds.images, ks);
}

// ---------------------------------------------------------------------------
// Ablation harness
// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, TrainConfig>> ablation_matrix(const TrainConfig& base,
                                                                 const std::string& matrix) {
    std::vector<std::pair<std::string, TrainConfig>> rows;
    auto spaces = [&](int shared, bool img, bool txt) {
        TrainConfig c = base;
        c.shared_spaces = shared;
        c.image_space = img;
        c.text_space = txt;
        return c;
    };

    if (matrix == "spaces") {
        rows.emplace_back("Exp1", spaces(1, false, false));
        rows.emplace_back("Exp2", spaces(2, false, false));
        rows.emplace_back("Exp3", spaces(3, false, false));
        rows.emplace_back("Exp4", spaces(0, true, false));
        rows.emplace_back("Exp5", spaces(0, false, true));
        rows.emplace_back("Exp6", spaces(1, true, true));
        rows.emplace_back("Exp7", spaces(0, true, true));
    } else if (matrix == "losses") {
        TrainConfig id_only = base;
        id_only.use_cr_loss = false;
        TrainConfig cr_only = base;
        cr_only.use_id_loss = false;
        rows.emplace_back("id_only", id_only);
        rows.emplace_back("cr_only", cr_only);
        rows.emplace_back("id+cr", base);
    } else if (matrix == "granularities") {
        auto grans = [&](bool l, bool n, bool g, const std::string& name) {
            TrainConfig c = base;
            c.use_local = l;
            c.use_nonlocal = n;
            c.use_global = g;
            rows.emplace_back(name, c);
        };
        grans(true, false, false, "local");
        grans(false, true, false, "nonlocal");
        grans(false, false, true, "global");
        grans(true, true, false, "local+nonlocal");
        grans(true, false, true, "local+global");
        grans(false, true, true, "nonlocal+global");
        grans(true, true, true, "all");
    } else if (matrix == "m_sweep") {
        for (int m : {1, 2, 4, 8}) {
            TrainConfig c = base;
            c.num_rems = m;
            rows.emplace_back("M=" + std::to_string(m), c);
        }
    } else {
        throw std::invalid_argument("unknown ablation matrix: " + matrix);
    }
    return rows;
}

AblationReport run_ablation(const PairDataset& ds, const TrainConfig& base,
                            const std::string& matrix) {
    AblationReport report;
    report.matrix = matrix;
    for (auto& [exp_id, cfg] : ablation_matrix(base, matrix)) {
        TrainConfig bound = bind_dataset(cfg, ds);
        bound.validate();
        TrainResult result = train(ds, bound);
        Model model(result.checkpoint.config);
        model.params = result.checkpoint.params;
        AblationRow row;
        row.exp_id = exp_id;
        row.config_digest = bound.digest();
        row.report = evaluate_dataset(model, ds);
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string AblationReport::table_text() const {
    std::ostringstream os;
    os << "matrix: " << matrix << "\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-18s %-18s %8s %8s %8s\n", "exp_id", "config_digest",
                  "R@1", "R@5", "R@10");
    os << buf;
    for (const AblationRow& row : rows) {
        std::snprintf(buf, sizeof(buf), "%-18s %-18s %8.2f %8.2f %8.2f\n", row.exp_id.c_str(),
                      row.config_digest.c_str(), row.report.at(1), row.report.at(5),
                      row.report.at(10));
        os << buf;
    }
    return os.str();
}

std::string AblationReport::csv_text() const {
    std::ostringstream os;
    os << "exp_id,config_digest,R@1,R@5,R@10\n";
    for (const AblationRow& row : rows) {
        os << row.exp_id << ',' << row.config_digest << ',' << format_pct(row.report.at(1))
           << ',' << format_pct(row.report.at(5)) << ',' << format_pct(row.report.at(10))
           << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Export operations
// ---------------------------------------------------------------------------

Mat similarity_heatmap(const Model& model, const ImageSample& image, const TextSample& text) {
    const TrainConfig& cfg = model.config();
    if (!cfg.image_space)
        throw ConfigError("heatmap needs the text-to-image projection group");

    EncodedText enc_txt = model.encode_text_sample(text.tokens);
    const std::vector<Vec> candidates = enc_txt.to_image.global;

    ImageTape tape;
    Tensor3 fmap = encode_image(image.pixels, model.params.enc.vis, &tape);

    Mat grid(fmap.h, fmap.w);
    Vec cell(static_cast<size_t>(fmap.c));
    Vec projected;
    for (int y = 0; y < fmap.h; ++y) {
        for (int x = 0; x < fmap.w; ++x) {
            const double* src = fmap.pos(y, x);
            std::copy(src, src + fmap.c, cell.begin());
            matvec(cell, model.params.enc.w_global_vis, projected);
            double best = -HUGE_VAL;
            for (const Vec& cand : candidates) best = std::max(best, cosine(projected, cand));
            grid.at(y, x) = best;
        }
    }
    return grid;
}

void write_heatmap(const Mat& grid, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write heatmap: " + path);
    char buf[40];
    for (int y = 0; y < grid.rows; ++y) {
        for (int x = 0; x < grid.cols; ++x) {
            std::snprintf(buf, sizeof(buf), "%.17g", grid.at(y, x));
            os << (x ? " " : "") << buf;
        }
        os << '\n';
    }
    if (!os) throw IoError("write failed: " + path);
}

void export_embeddings(const Model& model, const PairDataset& ds, const std::string& path) {
    const TrainConfig& cfg = model.config();
    const int ni = static_cast<int>(ds.images.size());
    const int nt = static_cast<int>(ds.texts.size());

    std::vector<Vec> img_feats(static_cast<size_t>(ni));
    std::vector<Vec> txt_feats(static_cast<size_t>(nt));
    parallel_for(ni, cfg.exec, [&](int i) {
        img_feats[static_cast<size_t>(i)] =
            model.encode_image_sample(ds.images[static_cast<size_t>(i)].pixels).feats.global;
    });
    parallel_for(nt, cfg.exec, [&](int i) {
        txt_feats[static_cast<size_t>(i)] =
            model.encode_text_sample(ds.texts[static_cast<size_t>(i)].tokens).feats.global;
    });

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write embeddings: " + path);
    char buf[40];
    auto write_row = [&](int sample_id, const char* modality, int identity, const Vec& f) {
        os << sample_id << ',' << modality << ',' << identity;
        for (double v : f) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            os << ',' << buf;
        }
        os << '\n';
    };
    for (int i = 0; i < ni; ++i)
        write_row(ds.images[static_cast<size_t>(i)].sample_id, "image",
                  ds.images[static_cast<size_t>(i)].identity, img_feats[static_cast<size_t>(i)]);
    for (int i = 0; i < nt; ++i)
        write_row(ds.texts[static_cast<size_t>(i)].sample_id, "text",
                  ds.texts[static_cast<size_t>(i)].identity, txt_feats[static_cast<size_t>(i)]);
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace beat
