// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0

#include "beat/config.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

namespace beat {

namespace {

int conv_out(int n, int stride) {
    // 3x3 kernel, padding 1.
    return (n + 2 - 3) / stride + 1;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("bad boolean for " + key + ": " + v);
}

}  // namespace

TrainConfig TrainConfig::desk_profile() { return TrainConfig{}; }

TrainConfig TrainConfig::paper_profile() {
    TrainConfig c;
    c.image_h = 384;
    c.image_w = 112;
    c.max_tokens = 100;
    c.conv_c1 = 256;
    c.conv_c2 = 1024;
    c.c_backbone = 2048;
    c.embed_dim = 512;
    c.rnn_hidden = 1024;
    c.num_parts = 6;
    c.c_global = 1024;
    c.c_local = 1024;
    c.c_nonlocal = 512;
    c.num_rems = 4;
    c.reduction = 8;
    c.batch_size = 64;
    c.learning_rate = 0.001;
    c.epochs = 80;
    return c;
}

int TrainConfig::feature_h() const {
    return conv_out(conv_out(image_h, 2), 2);  // third stage is stride 1
}

int TrainConfig::feature_w() const {
    return conv_out(conv_out(image_w, 2), 2);
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };

    if (image_h < 8 || image_w < 8) fail("image dimensions must be at least 8x8");
    if (max_tokens < 1) fail("max_tokens must be >= 1");
    if (conv_c1 < 1 || conv_c2 < 1 || c_backbone < 1) fail("backbone channels must be positive");
    if (embed_dim < 1 || rnn_hidden < 1) fail("text encoder dims must be positive");
    if (num_parts < 1) fail("num_parts must be >= 1");
    if (use_nonlocal && num_parts < 2) fail("non-local features need num_parts >= 2");
    if (c_global < 1 || c_local < 1 || c_nonlocal < 1) fail("head dims must be positive");
    if (feature_h() % num_parts != 0)
        fail("feature map height " + std::to_string(feature_h()) +
             " not divisible by num_parts " + std::to_string(num_parts));
    if (num_rems < 1) fail("num_rems must be >= 1");
    if (reduction < 1) fail("reduction must be >= 1");
    if (image_space || text_space) {
        if (c_global % reduction != 0 || c_local % reduction != 0 ||
            c_nonlocal % reduction != 0)
            fail("reduction must divide every head dim");
    }
    if (shared_spaces < 0) fail("shared_spaces must be >= 0");
    if (!image_space && !text_space && shared_spaces == 0)
        fail("no alignment space enabled");
    if (!use_id_loss && !use_cr_loss) fail("no objective enabled");
    if (w_global < 0 || w_local < 0 || w_nonlocal < 0) fail("loss weights must be non-negative");
    if (eff_w_global() == 0 && eff_w_local() == 0 && eff_w_nonlocal() == 0)
        fail("no granularity enabled");
    if (margin <= 0) fail("margin must be positive");
    if (weak_weight < 0) fail("weak_weight must be non-negative");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (learning_rate < 0) fail("learning_rate must be non-negative");
    if (epochs < 0) fail("epochs must be non-negative");
}

std::string TrainConfig::to_kv_text() const {
    std::ostringstream os;
    os << "image_h = " << image_h << "\n";
    os << "image_w = " << image_w << "\n";
    os << "max_tokens = " << max_tokens << "\n";
    os << "vocab_size = " << vocab_size << "\n";
    os << "num_identities = " << num_identities << "\n";
    os << "conv_c1 = " << conv_c1 << "\n";
    os << "conv_c2 = " << conv_c2 << "\n";
    os << "c_backbone = " << c_backbone << "\n";
    os << "embed_dim = " << embed_dim << "\n";
    os << "rnn_hidden = " << rnn_hidden << "\n";
    os << "num_parts = " << num_parts << "\n";
    os << "c_global = " << c_global << "\n";
    os << "c_local = " << c_local << "\n";
    os << "c_nonlocal = " << c_nonlocal << "\n";
    os << "num_rems = " << num_rems << "\n";
    os << "reduction = " << reduction << "\n";
    os << "image_space = " << (image_space ? "true" : "false") << "\n";
    os << "text_space = " << (text_space ? "true" : "false") << "\n";
    os << "shared_spaces = " << shared_spaces << "\n";
    os << "use_id_loss = " << (use_id_loss ? "true" : "false") << "\n";
    os << "use_cr_loss = " << (use_cr_loss ? "true" : "false") << "\n";
    os << "use_global = " << (use_global ? "true" : "false") << "\n";
    os << "use_local = " << (use_local ? "true" : "false") << "\n";
    os << "use_nonlocal = " << (use_nonlocal ? "true" : "false") << "\n";
    os << "w_global = " << fmt_double(w_global) << "\n";
    os << "w_local = " << fmt_double(w_local) << "\n";
    os << "w_nonlocal = " << fmt_double(w_nonlocal) << "\n";
    os << "margin = " << fmt_double(margin) << "\n";
    os << "weak_weight = " << fmt_double(weak_weight) << "\n";
    os << "mining = " << (mining == Mining::hardest ? "hardest" : "sum") << "\n";
    os << "batch_size = " << batch_size << "\n";
    os << "learning_rate = " << fmt_double(learning_rate) << "\n";
    os << "epochs = " << epochs << "\n";
    os << "seed = " << seed << "\n";
    os << "hflip = " << (hflip ? "true" : "false") << "\n";
    os << "freeze_text = " << (freeze_text ? "true" : "false") << "\n";
    os << "exec = " << (exec == Exec::parallel ? "parallel" : "serial") << "\n";
    return os.str();
}

void TrainConfig::set_field(const std::string& key, const std::string& value) {
    auto as_int = [&](const std::string& v) {
        size_t pos = 0;
        int out = std::stoi(v, &pos);
        if (pos != v.size()) throw ConfigError("bad integer for " + key + ": " + v);
        return out;
    };
    auto as_double = [&](const std::string& v) {
        size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw ConfigError("bad number for " + key + ": " + v);
        return out;
    };

    if (key == "image_h") image_h = as_int(value);
    else if (key == "image_w") image_w = as_int(value);
    else if (key == "max_tokens") max_tokens = as_int(value);
    else if (key == "vocab_size") vocab_size = as_int(value);
    else if (key == "num_identities") num_identities = as_int(value);
    else if (key == "conv_c1") conv_c1 = as_int(value);
    else if (key == "conv_c2") conv_c2 = as_int(value);
    else if (key == "c_backbone") c_backbone = as_int(value);
    else if (key == "embed_dim") embed_dim = as_int(value);
    else if (key == "rnn_hidden") rnn_hidden = as_int(value);
    else if (key == "num_parts") num_parts = as_int(value);
    else if (key == "c_global") c_global = as_int(value);
    else if (key == "c_local") c_local = as_int(value);
    else if (key == "c_nonlocal") c_nonlocal = as_int(value);
    else if (key == "num_rems") num_rems = as_int(value);
    else if (key == "reduction") reduction = as_int(value);
    else if (key == "image_space") image_space = parse_bool(value, key);
    else if (key == "text_space") text_space = parse_bool(value, key);
    else if (key == "shared_spaces") shared_spaces = as_int(value);
    else if (key == "use_id_loss") use_id_loss = parse_bool(value, key);
    else if (key == "use_cr_loss") use_cr_loss = parse_bool(value, key);
    else if (key == "use_global") use_global = parse_bool(value, key);
    else if (key == "use_local") use_local = parse_bool(value, key);
    else if (key == "use_nonlocal") use_nonlocal = parse_bool(value, key);
    else if (key == "w_global") w_global = as_double(value);
    else if (key == "w_local") w_local = as_double(value);
    else if (key == "w_nonlocal") w_nonlocal = as_double(value);
    else if (key == "margin") margin = as_double(value);
    else if (key == "weak_weight") weak_weight = as_double(value);
    else if (key == "mining") {
        if (value == "hardest") mining = Mining::hardest;
        else if (value == "sum") mining = Mining::sum_all;
        else throw ConfigError("mining must be 'hardest' or 'sum', got: " + value);
    }
    else if (key == "batch_size") batch_size = as_int(value);
    else if (key == "learning_rate") learning_rate = as_double(value);
    else if (key == "epochs") epochs = as_int(value);
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "hflip") hflip = parse_bool(value, key);
    else if (key == "freeze_text") freeze_text = parse_bool(value, key);
    else if (key == "exec") {
        if (value == "parallel") exec = Exec::parallel;
        else if (value == "serial") exec = Exec::serial;
        else throw ConfigError("exec must be 'parallel' or 'serial', got: " + value);
    }
    else throw ConfigError("unknown config key: " + key);
}

TrainConfig TrainConfig::from_kv_text(const std::string& text) {
    TrainConfig c;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        // strip comments and whitespace
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": missing '='");
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            return s.substr(b, e - b + 1);
        };
        c.set_field(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return c;
}

std::string TrainConfig::digest() const {
    uint64_t h = fnv1a64(to_kv_text());
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace beat
