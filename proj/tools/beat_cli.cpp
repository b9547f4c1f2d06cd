// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front door: dataset synthesis, training, retrieval
// evaluation, ablation matrices, similarity heatmaps and embedding export.
// Every command validates its config up front, writes only under --out, and
// appends one record to the output directory's run manifest.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "beat/checkpoint.hpp"
#include "beat/config.hpp"
#include "beat/dataset.hpp"
#include "beat/engine.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

std::string timestamp_utc() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

void append_manifest(const fs::path& out_dir, const std::string& command,
                     const std::string& config_digest, uint64_t seed,
                     const std::vector<std::string>& artifacts,
                     const std::string& config_text = {}) {
    json rec;
    rec["command"] = command;
    rec["config_digest"] = config_digest;
    rec["seed"] = seed;
    rec["timestamp"] = timestamp_utc();
    rec["artifacts"] = artifacts;
    if (!config_text.empty()) rec["config"] = config_text;
    std::ofstream os(out_dir / "run_manifest.jsonl", std::ios::app | std::ios::binary);
    if (!os) throw beat::IoError("cannot append manifest in " + out_dir.string());
    os << rec.dump() << '\n';
}

fs::path prepare_out_dir(const std::string& out) {
    fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw beat::IoError("cannot create output directory: " + out);
    return dir;
}

beat::TrainConfig load_config(const std::string& config_path,
                              const std::vector<std::string>& overrides) {
    beat::TrainConfig cfg = beat::TrainConfig::desk_profile();
    if (!config_path.empty()) {
        std::ifstream is(config_path);
        if (!is) throw beat::IoError("cannot open config file: " + config_path);
        std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        cfg = beat::TrainConfig::from_kv_text(text);
    }
    for (const std::string& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw beat::ConfigError("--set expects key=value, got: " + kv);
        cfg.set_field(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

beat::PairDataset load_bound_dataset(const std::string& data, const std::string& vocab,
                                     const beat::TrainConfig& cfg) {
    beat::DatasetSchema schema;
    schema.vocab_path = vocab;
    schema.image_h = cfg.image_h;
    schema.image_w = cfg.image_w;
    schema.max_tokens = cfg.max_tokens;
    return beat::load_dataset(data, schema);
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw beat::IoError("cannot write " + path.string());
    os << text;
    if (!os) throw beat::IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& out, const beat::SyntheticSpec& spec) {
    const fs::path dir = prepare_out_dir(out);
    beat::PairDataset ds = beat::generate_synthetic(spec);
    beat::save_dataset(ds, (dir / "data.tsv").string(), (dir / "vocab.txt").string());
    std::cout << "wrote " << ds.num_pairs() << " pairs, " << ds.images.size() << " images, "
              << ds.texts.size() << " texts, " << ds.num_identities << " identities\n";
    append_manifest(dir, "synth", "-", spec.seed, {"data.tsv", "vocab.txt"});
    return 0;
}

int cmd_train(const std::string& data, const std::string& vocab, const std::string& out,
              beat::TrainConfig cfg) {
    cfg.validate();
    const fs::path dir = prepare_out_dir(out);
    beat::PairDataset ds = load_bound_dataset(data, vocab, cfg);
    cfg = beat::bind_dataset(cfg, ds);

    beat::TrainResult result = beat::train(ds, cfg);
    beat::save_checkpoint(result.checkpoint, (dir / "checkpoint.beat").string());
    write_text_file(dir / "history.csv", result.history.csv_text());

    if (!result.history.steps.empty()) {
        const auto& last = result.history.steps.back();
        std::cout << "trained " << cfg.epochs << " epochs, " << result.history.steps.size()
                  << " steps; final per-sample loss " << last.l_total << "\n";
    }
    if (result.history.cr_warned_any)
        std::cout << "warning: at least one batch had no valid negatives\n";
    append_manifest(dir, "train", cfg.digest(), cfg.seed, {"checkpoint.beat", "history.csv"},
                    cfg.to_kv_text());
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data, const std::string& vocab,
             const std::string& out) {
    const fs::path dir = prepare_out_dir(out);
    beat::Checkpoint ckpt = beat::load_checkpoint(ckpt_path);
    ckpt.config.validate();
    beat::PairDataset ds = load_bound_dataset(data, vocab, ckpt.config);

    beat::Model model(ckpt.config);
    model.params = ckpt.params;
    beat::RecallReport report = beat::evaluate_dataset(model, ds);

    std::ostringstream human;
    human << "queries: " << report.num_queries << "\ngallery: " << report.gallery_size << "\n";
    std::ostringstream csv;
    csv << "k,recall\n";
    for (size_t i = 0; i < report.ks.size(); ++i) {
        human << "R@" << report.ks[i] << ": " << report.recall[i] << "\n";
        csv << report.ks[i] << ',' << report.recall[i] << '\n';
    }
    write_text_file(dir / "recall.txt", human.str());
    write_text_file(dir / "recall.csv", csv.str());
    std::cout << human.str();
    append_manifest(dir, "eval", ckpt.config.digest(), ckpt.config.seed,
                    {"recall.txt", "recall.csv"});
    return 0;
}

int cmd_ablate(const std::string& matrix, const std::string& data, const std::string& vocab,
               const std::string& out, beat::TrainConfig cfg) {
    cfg.validate();
    const fs::path dir = prepare_out_dir(out);
    beat::PairDataset ds = load_bound_dataset(data, vocab, cfg);

    beat::AblationReport report = beat::run_ablation(ds, cfg, matrix);
    write_text_file(dir / "report.txt", report.table_text());
    write_text_file(dir / "report.csv", report.csv_text());
    std::cout << report.table_text();
    append_manifest(dir, "ablate " + matrix, cfg.digest(), cfg.seed,
                    {"report.txt", "report.csv"}, cfg.to_kv_text());
    return 0;
}

int cmd_heatmap(const std::string& ckpt_path, const std::string& data, const std::string& vocab,
                int image_index, int text_index, const std::string& out) {
    const fs::path dir = prepare_out_dir(out);
    beat::Checkpoint ckpt = beat::load_checkpoint(ckpt_path);
    ckpt.config.validate();
    beat::PairDataset ds = load_bound_dataset(data, vocab, ckpt.config);
    if (image_index < 0 || image_index >= static_cast<int>(ds.images.size()))
        throw std::invalid_argument("image index out of range");
    if (text_index < 0 || text_index >= static_cast<int>(ds.texts.size()))
        throw std::invalid_argument("text index out of range");

    beat::Model model(ckpt.config);
    model.params = ckpt.params;
    beat::Mat grid = beat::similarity_heatmap(model, ds.images[static_cast<size_t>(image_index)],
                                              ds.texts[static_cast<size_t>(text_index)]);
    beat::write_heatmap(grid, (dir / "heatmap.txt").string());
    std::cout << "wrote " << grid.rows << "x" << grid.cols << " grid\n";
    append_manifest(dir, "heatmap", ckpt.config.digest(), ckpt.config.seed, {"heatmap.txt"});
    return 0;
}

int cmd_export(const std::string& ckpt_path, const std::string& data, const std::string& vocab,
               const std::string& out) {
    const fs::path dir = prepare_out_dir(out);
    beat::Checkpoint ckpt = beat::load_checkpoint(ckpt_path);
    ckpt.config.validate();
    beat::PairDataset ds = load_bound_dataset(data, vocab, ckpt.config);

    beat::Model model(ckpt.config);
    model.params = ckpt.params;
    beat::export_embeddings(model, ds, (dir / "embeddings.csv").string());
    std::cout << "wrote " << ds.images.size() + ds.texts.size() << " rows\n";
    append_manifest(dir, "export-embeddings", ckpt.config.digest(), ckpt.config.seed,
                    {"embeddings.csv"});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bi-directional one-to-many embedding alignment for text-based person retrieval"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic identity-labeled dataset");
    beat::SyntheticSpec spec;
    spec.num_identities = 32;
    spec.images_per_id = 4;
    spec.texts_per_id = 4;
    spec.noise_scale = 0.1;
    spec.seed = 7;
    std::string synth_out;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--q", spec.num_identities, "identity count");
    synth->add_option("--images-per-id", spec.images_per_id);
    synth->add_option("--texts-per-id", spec.texts_per_id);
    synth->add_option("--noise", spec.noise_scale);
    synth->add_option("--seed", spec.seed);
    synth->add_option("--image-h", spec.image_h);
    synth->add_option("--image-w", spec.image_w);
    synth->add_option("--text-len", spec.text_len);

    // shared options for data-bound commands
    std::string data, vocab, out, config_path, ckpt_path, matrix;
    std::vector<std::string> overrides;
    int image_index = 0, text_index = 0;

    auto* trn = app.add_subcommand("train", "train a model");
    trn->add_option("--data", data, "dataset tsv")->required();
    trn->add_option("--vocab", vocab, "vocabulary file")->required();
    trn->add_option("--out", out, "output directory")->required();
    trn->add_option("--config", config_path, "key=value config file");
    trn->add_option("--set", overrides, "config override key=value");

    auto* evl = app.add_subcommand("eval", "evaluate text-to-image recall");
    evl->add_option("--ckpt", ckpt_path)->required();
    evl->add_option("--data", data)->required();
    evl->add_option("--vocab", vocab)->required();
    evl->add_option("--out", out)->required();

    auto* abl = app.add_subcommand("ablate", "run a named experiment matrix");
    abl->add_option("--matrix", matrix, "spaces | losses | granularities | m_sweep")->required();
    abl->add_option("--data", data)->required();
    abl->add_option("--vocab", vocab)->required();
    abl->add_option("--out", out)->required();
    abl->add_option("--config", config_path);
    abl->add_option("--set", overrides);

    auto* hmp = app.add_subcommand("heatmap", "export a text-vs-grid similarity heatmap");
    hmp->add_option("--ckpt", ckpt_path)->required();
    hmp->add_option("--data", data)->required();
    hmp->add_option("--vocab", vocab)->required();
    hmp->add_option("--image-index", image_index)->required();
    hmp->add_option("--text-index", text_index)->required();
    hmp->add_option("--out", out)->required();

    auto* exp = app.add_subcommand("export-embeddings", "dump global features per sample");
    exp->add_option("--ckpt", ckpt_path)->required();
    exp->add_option("--data", data)->required();
    exp->add_option("--vocab", vocab)->required();
    exp->add_option("--out", out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(synth_out, spec);
        if (trn->parsed()) return cmd_train(data, vocab, out, load_config(config_path, overrides));
        if (evl->parsed()) return cmd_eval(ckpt_path, data, vocab, out);
        if (abl->parsed())
            return cmd_ablate(matrix, data, vocab, out, load_config(config_path, overrides));
        if (hmp->parsed()) return cmd_heatmap(ckpt_path, data, vocab, image_index, text_index, out);
        if (exp->parsed()) return cmd_export(ckpt_path, data, vocab, out);
    } catch (const beat::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const beat::DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const beat::IngestError& e) {
        std::cerr << "ingest error: " << e.what() << "\n";
        return kExitIo;
    } catch (const beat::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
