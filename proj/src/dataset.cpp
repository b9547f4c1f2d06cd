// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0

#include "beat/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace beat {

namespace {

std::string lowercase(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

int hex_nibble(char c, int lineno) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw IngestError("line " + std::to_string(lineno) + ": bad hex digit in inline pixels");
}

double quantize_byte(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return std::round(v * 255.0) / 255.0;
}

Tensor3 parse_inline_pixels(const std::string& hex, int h, int w, int lineno) {
    const size_t expect = static_cast<size_t>(h) * w * 3 * 2;
    if (hex.size() != expect)
        throw IngestError("line " + std::to_string(lineno) + ": inline pixel blob has " +
                          std::to_string(hex.size()) + " hex chars, expected " +
                          std::to_string(expect));
    Tensor3 t(h, w, 3);
    for (size_t i = 0; i < t.size(); ++i) {
        const int hi = hex_nibble(hex[2 * i], lineno);
        const int lo = hex_nibble(hex[2 * i + 1], lineno);
        t.d[i] = static_cast<double>(hi * 16 + lo) / 255.0;
    }
    return t;
}

Tensor3 load_ppm(const std::string& path, int h, int w, int lineno) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IngestError("line " + std::to_string(lineno) + ": cannot open image " + path);
    std::string magic;
    f >> magic;
    if (magic != "P6")
        throw IngestError("line " + std::to_string(lineno) + ": " + path + " is not binary PPM");
    auto next_int = [&]() {
        // skip whitespace and '#' comments
        for (;;) {
            int c = f.peek();
            if (c == '#') {
                std::string junk;
                std::getline(f, junk);
            } else if (std::isspace(c)) {
                f.get();
            } else {
                break;
            }
        }
        int v = -1;
        f >> v;
        return v;
    };
    const int pw = next_int();
    const int ph = next_int();
    const int maxval = next_int();
    f.get();  // single whitespace after header
    if (pw != w || ph != h)
        throw IngestError("line " + std::to_string(lineno) + ": " + path + " is " +
                          std::to_string(pw) + "x" + std::to_string(ph) + ", expected " +
                          std::to_string(w) + "x" + std::to_string(h));
    if (maxval != 255)
        throw IngestError("line " + std::to_string(lineno) + ": " + path +
                          " maxval must be 255");
    Tensor3 t(h, w, 3);
    std::vector<unsigned char> buf(t.size());
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IngestError("line " + std::to_string(lineno) + ": " + path + " truncated");
    for (size_t i = 0; i < t.size(); ++i) t.d[i] = static_cast<double>(buf[i]) / 255.0;
    return t;
}

std::string pixels_to_hex(const Tensor3& t) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(t.size() * 2);
    for (double v : t.d) {
        const int b = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 15]);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() {
    words_.push_back("<unk>");
    index_["<unk>"] = kOov;
}

int Vocabulary::add(const std::string& word) {
    auto it = index_.find(word);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(words_.size());
    words_.push_back(word);
    index_[word] = id;
    return id;
}

int Vocabulary::lookup(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kOov : it->second;
}

const std::string& Vocabulary::word(int id) const {
    if (id < 0 || id >= size()) throw std::invalid_argument("token id out of range");
    return words_[static_cast<size_t>(id)];
}

std::vector<int> Vocabulary::tokenize(const std::string& text, int max_tokens) const {
    std::istringstream is(lowercase(text));
    std::vector<int> out;
    std::string word;
    while (is >> word && static_cast<int>(out.size()) < max_tokens) {
        out.push_back(lookup(word));
    }
    return out;
}

std::string Vocabulary::detokenize(const std::vector<int>& tokens) const {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += word(tokens[i]);
    }
    return out;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write vocabulary file: " + path);
    for (const auto& w : words_) f << w << '\n';
    if (!f) throw IoError("write failed: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open vocabulary file: " + path);
    Vocabulary v;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 0) {
            if (line != "<unk>")
                throw IngestError("vocabulary line 0 must be the <unk> bucket");
        } else {
            if (line.empty()) throw IngestError("vocabulary line " + std::to_string(lineno) +
                                                " is empty");
            v.add(line);
        }
        ++lineno;
    }
    return v;
}

// ---------------------------------------------------------------------------
// PairDataset
// ---------------------------------------------------------------------------

void PairDataset::rebuild_indexes() {
    pairs_by_identity.assign(static_cast<size_t>(num_identities), {});
    for (int p = 0; p < num_pairs(); ++p) {
        const int img = pair_index[static_cast<size_t>(p)].first;
        pairs_by_identity[static_cast<size_t>(images[static_cast<size_t>(img)].identity)]
            .push_back(p);
    }
}

void PairDataset::validate() const {
    if (num_identities < 1) throw IngestError("dataset has no identities");
    std::vector<int> img_count(static_cast<size_t>(num_identities), 0);
    std::vector<int> txt_count(static_cast<size_t>(num_identities), 0);
    for (size_t i = 0; i < images.size(); ++i) {
        const auto& s = images[i];
        if (s.identity < 0 || s.identity >= num_identities)
            throw IngestError("image identity out of range");
        if (s.sample_id != static_cast<int>(i)) throw IngestError("image sample_id mismatch");
        for (double v : s.pixels.d)
            if (!(v >= 0.0 && v <= 1.0)) throw IngestError("pixel value outside [0,1]");
        ++img_count[static_cast<size_t>(s.identity)];
    }
    for (size_t i = 0; i < texts.size(); ++i) {
        const auto& s = texts[i];
        if (s.identity < 0 || s.identity >= num_identities)
            throw IngestError("text identity out of range");
        if (s.sample_id != static_cast<int>(i)) throw IngestError("text sample_id mismatch");
        if (s.tokens.empty()) throw IngestError("text sample has no tokens");
        for (int t : s.tokens)
            if (t < 0 || t >= vocab.size()) throw IngestError("token id outside vocabulary");
        ++txt_count[static_cast<size_t>(s.identity)];
    }
    for (int q = 0; q < num_identities; ++q) {
        if (img_count[static_cast<size_t>(q)] == 0 || txt_count[static_cast<size_t>(q)] == 0)
            throw IngestError("identity " + std::to_string(q) + " owns no image or no text");
    }
    for (const auto& [img, txt] : pair_index) {
        if (img < 0 || img >= static_cast<int>(images.size()) || txt < 0 ||
            txt >= static_cast<int>(texts.size()))
            throw IngestError("pair index out of range");
        if (images[static_cast<size_t>(img)].identity != texts[static_cast<size_t>(txt)].identity)
            throw IngestError("pair links samples with different identities");
    }
    if (static_cast<int>(pairs_by_identity.size()) != num_identities)
        throw IngestError("identity index out of date");
    for (int q = 0; q < num_identities; ++q)
        if (pairs_by_identity[static_cast<size_t>(q)].empty())
            throw IngestError("identity " + std::to_string(q) + " has no pairs");
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

namespace {

constexpr int kIdentityWords = 4;
constexpr int kDistractorWords = 8;
constexpr double kIdentityWordProb = 0.7;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

PairDataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.num_identities < 2) throw std::invalid_argument("num_identities must be >= 2");
    if (spec.images_per_id < 1) throw std::invalid_argument("images_per_id must be >= 1");
    if (spec.texts_per_id < 1) throw std::invalid_argument("texts_per_id must be >= 1");
    if (spec.noise_scale < 0) throw std::invalid_argument("noise_scale must be >= 0");
    if (spec.text_len < 1) throw std::invalid_argument("text_len must be >= 1");

    Rng rng(spec.seed);
    PairDataset ds;
    ds.num_identities = spec.num_identities;

    // shared vocabulary: identity-specific words first, distractors after
    for (int q = 0; q < spec.num_identities; ++q)
        for (int j = 0; j < kIdentityWords; ++j)
            ds.vocab.add("id" + std::to_string(q) + "w" + std::to_string(j));
    for (int j = 0; j < kDistractorWords; ++j) ds.vocab.add("filler" + std::to_string(j));

    const int lat_dim = 9;
    for (int q = 0; q < spec.num_identities; ++q) {
        Vec latent(lat_dim);
        for (double& z : latent) z = rng.normal();

        // per-channel sinusoid parameters derived from the latent
        double freq_y[3], freq_x[3], phase[3];
        for (int c = 0; c < 3; ++c) {
            freq_y[c] = 2.0 * M_PI * (0.5 + 1.5 * sigmoid(latent[static_cast<size_t>(3 * c)]));
            freq_x[c] = 2.0 * M_PI * (0.5 + 1.5 * sigmoid(latent[static_cast<size_t>(3 * c + 1)]));
            phase[c] = 2.0 * M_PI * latent[static_cast<size_t>(3 * c + 2)];
        }

        for (int i = 0; i < spec.images_per_id; ++i) {
            ImageSample img;
            img.identity = q;
            img.sample_id = static_cast<int>(ds.images.size());
            img.pixels = Tensor3(spec.image_h, spec.image_w, 3);
            for (int y = 0; y < spec.image_h; ++y) {
                for (int x = 0; x < spec.image_w; ++x) {
                    for (int c = 0; c < 3; ++c) {
                        const double base =
                            0.5 + 0.45 * std::sin(freq_y[c] * y / spec.image_h +
                                                  freq_x[c] * x / spec.image_w + phase[c]);
                        const double v = base + spec.noise_scale * rng.normal();
                        img.pixels.at(y, x, c) = quantize_byte(v);
                    }
                }
            }
            ds.images.push_back(std::move(img));
        }

        for (int i = 0; i < spec.texts_per_id; ++i) {
            TextSample txt;
            txt.identity = q;
            txt.sample_id = static_cast<int>(ds.texts.size());
            for (int t = 0; t < spec.text_len; ++t) {
                if (rng.uniform() < kIdentityWordProb) {
                    txt.tokens.push_back(1 + q * kIdentityWords + rng.uniform_int(kIdentityWords));
                } else {
                    txt.tokens.push_back(1 + spec.num_identities * kIdentityWords +
                                         rng.uniform_int(kDistractorWords));
                }
            }
            ds.texts.push_back(std::move(txt));
        }
    }

    // every same-identity combination becomes a pair
    int img_base = 0, txt_base = 0;
    for (int q = 0; q < spec.num_identities; ++q) {
        for (int i = 0; i < spec.images_per_id; ++i)
            for (int t = 0; t < spec.texts_per_id; ++t)
                ds.pair_index.emplace_back(img_base + i, txt_base + t);
        img_base += spec.images_per_id;
        txt_base += spec.texts_per_id;
    }

    ds.rebuild_indexes();
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// File ingestion / serialization
// ---------------------------------------------------------------------------

PairDataset load_dataset(const std::string& path, const DatasetSchema& schema) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open dataset file: " + path);

    PairDataset ds;
    ds.vocab = Vocabulary::load(schema.vocab_path);
    const std::filesystem::path dir = std::filesystem::path(path).parent_path();

    std::unordered_map<std::string, int> image_ids;  // (identity|ref) -> sample_id
    std::unordered_map<std::string, int> text_ids;   // (identity|raw) -> sample_id

    std::string line;
    int lineno = 0;
    int max_identity = -1;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        const auto tab1 = line.find('\t');
        const auto tab2 = tab1 == std::string::npos ? std::string::npos
                                                    : line.find('\t', tab1 + 1);
        if (tab1 == std::string::npos || tab2 == std::string::npos)
            throw IngestError("line " + std::to_string(lineno) +
                              ": expected identity<TAB>image_ref<TAB>text");

        const std::string id_str = line.substr(0, tab1);
        const std::string image_ref = line.substr(tab1 + 1, tab2 - tab1 - 1);
        const std::string text = line.substr(tab2 + 1);

        int identity = -1;
        try {
            size_t pos = 0;
            identity = std::stoi(id_str, &pos);
            if (pos != id_str.size()) identity = -1;
        } catch (...) {
            identity = -1;
        }
        if (identity < 0)
            throw IngestError("line " + std::to_string(lineno) + ": bad identity '" +
                              id_str + "'");
        max_identity = std::max(max_identity, identity);

        const std::string img_key = id_str + "|" + image_ref;
        int img_id;
        if (auto it = image_ids.find(img_key); it != image_ids.end()) {
            img_id = it->second;
        } else {
            ImageSample img;
            img.identity = identity;
            img.sample_id = static_cast<int>(ds.images.size());
            if (image_ref.rfind("inline:", 0) == 0) {
                img.pixels = parse_inline_pixels(image_ref.substr(7), schema.image_h,
                                                 schema.image_w, lineno);
            } else {
                img.pixels = load_ppm((dir / image_ref).string(), schema.image_h,
                                      schema.image_w, lineno);
            }
            img_id = img.sample_id;
            image_ids[img_key] = img_id;
            ds.images.push_back(std::move(img));
        }

        const std::string txt_key = id_str + "|" + text;
        int txt_id;
        if (auto it = text_ids.find(txt_key); it != text_ids.end()) {
            txt_id = it->second;
        } else {
            TextSample txt;
            txt.identity = identity;
            txt.sample_id = static_cast<int>(ds.texts.size());
            txt.tokens = ds.vocab.tokenize(text, schema.max_tokens);
            if (txt.tokens.empty())
                throw IngestError("line " + std::to_string(lineno) + ": empty caption");
            txt_id = txt.sample_id;
            text_ids[txt_key] = txt_id;
            ds.texts.push_back(std::move(txt));
        }

        ds.pair_index.emplace_back(img_id, txt_id);
    }

    if (max_identity < 0) throw IngestError("dataset file has no records");
    ds.num_identities = max_identity + 1;
    ds.rebuild_indexes();
    ds.validate();  // reports identity gaps among other violations
    return ds;
}

void save_dataset(const PairDataset& ds, const std::string& path,
                  const std::string& vocab_path) {
    ds.vocab.save(vocab_path);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write dataset file: " + path);
    for (const auto& [img_id, txt_id] : ds.pair_index) {
        const auto& img = ds.images[static_cast<size_t>(img_id)];
        const auto& txt = ds.texts[static_cast<size_t>(txt_id)];
        f << img.identity << '\t' << "inline:" << pixels_to_hex(img.pixels) << '\t'
          << ds.vocab.detokenize(txt.tokens) << '\n';
    }
    if (!f) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Batch sampling
// ---------------------------------------------------------------------------

Batch sample_identity_batch(const PairDataset& ds, int batch_size, Rng& rng, bool hflip) {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (batch_size > ds.num_pairs())
        throw std::invalid_argument("batch_size exceeds number of pairs");

    // texts -> set of paired images, for alt-text candidate checks
    std::vector<std::vector<int>> text_images(ds.texts.size());
    std::vector<std::vector<int>> texts_of_identity(static_cast<size_t>(ds.num_identities));
    for (const auto& [img, txt] : ds.pair_index)
        text_images[static_cast<size_t>(txt)].push_back(img);
    for (const auto& t : ds.texts)
        texts_of_identity[static_cast<size_t>(t.identity)].push_back(t.sample_id);

    // identities without replacement first; reshuffle per round when B > Q
    std::vector<int> chosen;
    chosen.reserve(static_cast<size_t>(batch_size));
    std::vector<int> ids(static_cast<size_t>(ds.num_identities));
    while (static_cast<int>(chosen.size()) < batch_size) {
        for (int q = 0; q < ds.num_identities; ++q) ids[static_cast<size_t>(q)] = q;
        rng.shuffle(ids);
        for (int q : ids) {
            if (static_cast<int>(chosen.size()) == batch_size) break;
            chosen.push_back(q);
        }
    }

    Batch batch;
    for (int q : chosen) {
        const auto& pairs = ds.pairs_by_identity[static_cast<size_t>(q)];
        const int p = pairs[static_cast<size_t>(rng.uniform_int(static_cast<int>(pairs.size())))];
        const auto [img, txt] = ds.pair_index[static_cast<size_t>(p)];

        batch.image_idx.push_back(img);
        batch.text_idx.push_back(txt);
        batch.identities.push_back(q);

        // a distinct text of the same identity tied to a different image
        std::vector<int> candidates;
        for (int other : texts_of_identity[static_cast<size_t>(q)]) {
            if (other == txt) continue;
            for (int partner : text_images[static_cast<size_t>(other)]) {
                if (partner != img) {
                    candidates.push_back(other);
                    break;
                }
            }
        }
        if (candidates.empty()) {
            batch.alt_text_idx.push_back(kNoAltText);
        } else {
            batch.alt_text_idx.push_back(
                candidates[static_cast<size_t>(rng.uniform_int(static_cast<int>(candidates.size())))]);
        }

        batch.flip.push_back(hflip && rng.uniform() < 0.5);
    }
    return batch;
}

}  // namespace beat
