// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0

#include "beat/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

namespace beat {

namespace {

constexpr char kMagic[8] = {'B', 'E', 'A', 'T', 'C', 'K', 'P', '1'};

void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& os, uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void write_entry(std::ostream& os, const std::string& name, const Vec& data,
                 const std::vector<int>& shape) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(shape.size()));
    for (int d : shape) write_u64(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(double)));
}

struct Entry {
    std::string name;
    std::vector<int> shape;
    Vec data;
};

Entry read_entry(std::istream& is) {
    Entry e;
    const uint32_t name_len = read_u32(is);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    const uint32_t ndim = read_u32(is);
    size_t total = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
        const uint64_t dim = read_u64(is);
        e.shape.push_back(static_cast<int>(dim));
        total *= dim;
    }
    e.data.resize(total);
    is.read(reinterpret_cast<char*>(e.data.data()),
            static_cast<std::streamsize>(total * sizeof(double)));
    if (!is) throw IoError("truncated checkpoint entry: " + e.name);
    return e;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint: " + path);

    nlohmann::json manifest;
    manifest["format"] = 1;
    manifest["config"] = ckpt.config.to_kv_text();
    manifest["adam_step"] = ckpt.adam_step;
    manifest["rng"] = ckpt.rng_state;
    manifest["trained_epochs"] = ckpt.trained_epochs;
    manifest["has_optimizer"] = !ckpt.adam_m.empty();
    const std::string mtext = manifest.dump();

    os.write(kMagic, sizeof(kMagic));
    write_u64(os, mtext.size());
    os.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));

    // count entries first
    uint64_t count = 0;
    visit_params(const_cast<ModelParams&>(ckpt.params), ckpt.config,
                 [&](const std::string&, Vec&, const std::vector<int>&) { ++count; });
    const uint64_t param_count = count;
    if (!ckpt.adam_m.empty()) count += 2 * param_count;
    write_u64(os, count);

    size_t idx = 0;
    visit_params(const_cast<ModelParams&>(ckpt.params), ckpt.config,
                 [&](const std::string& name, Vec& data, const std::vector<int>& shape) {
                     write_entry(os, name, data, shape);
                     if (!ckpt.adam_m.empty()) {
                         write_entry(os, "adam.m." + name, ckpt.adam_m[idx], shape);
                         write_entry(os, "adam.v." + name, ckpt.adam_v[idx], shape);
                     }
                     ++idx;
                 });
    if (!os) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);

    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("not a checkpoint file: " + path);

    const uint64_t mlen = read_u64(is);
    std::string mtext(mlen, '\0');
    is.read(mtext.data(), static_cast<std::streamsize>(mlen));
    if (!is) throw IoError("truncated checkpoint manifest: " + path);

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mtext);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("corrupt checkpoint manifest: ") + e.what());
    }

    Checkpoint ckpt;
    ckpt.config = TrainConfig::from_kv_text(manifest.at("config").get<std::string>());
    ckpt.adam_step = manifest.at("adam_step").get<int64_t>();
    ckpt.rng_state = manifest.at("rng").get<std::string>();
    ckpt.trained_epochs = manifest.at("trained_epochs").get<int>();
    const bool has_opt = manifest.at("has_optimizer").get<bool>();

    ckpt.params = allocate_params(ckpt.config);

    const uint64_t count = read_u64(is);
    std::unordered_map<std::string, Entry> entries;
    for (uint64_t i = 0; i < count; ++i) {
        Entry e = read_entry(is);
        entries[e.name] = std::move(e);
    }

    size_t param_count = 0;
    visit_params(ckpt.params, ckpt.config,
                 [&](const std::string& name, Vec& data, const std::vector<int>& shape) {
                     auto it = entries.find(name);
                     if (it == entries.end())
                         throw IoError("checkpoint missing parameter: " + name);
                     if (it->second.shape != shape || it->second.data.size() != data.size())
                         throw IoError("checkpoint shape mismatch for: " + name);
                     data = std::move(it->second.data);
                     ++param_count;
                 });

    if (has_opt) {
        ckpt.adam_m.reserve(param_count);
        ckpt.adam_v.reserve(param_count);
        visit_params(ckpt.params, ckpt.config,
                     [&](const std::string& name, Vec& data, const std::vector<int>&) {
                         auto m = entries.find("adam.m." + name);
                         auto v = entries.find("adam.v." + name);
                         if (m == entries.end() || v == entries.end())
                             throw IoError("checkpoint missing optimizer state for: " + name);
                         if (m->second.data.size() != data.size() ||
                             v->second.data.size() != data.size())
                             throw IoError("optimizer state size mismatch for: " + name);
                         ckpt.adam_m.push_back(std::move(m->second.data));
                         ckpt.adam_v.push_back(std::move(v->second.data));
                     });
    }
    return ckpt;
}

}  // namespace beat
