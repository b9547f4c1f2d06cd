// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0
//
// Identity-labeled image/text pairs with one-to-many structure: file
// ingestion, synthetic generation, and identity-aware batch sampling.
// Dataset objects are immutable after construction and safe to share across
// threads; samplers take an explicit rng so draws are reproducible.

#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "beat/core.hpp"

namespace beat {

// Token id 0 is reserved for out-of-vocabulary words.
class Vocabulary {
  public:
    static constexpr int kOov = 0;

    Vocabulary();  // starts with the OOV entry only

    int add(const std::string& word);            // returns existing id if present
    int lookup(const std::string& word) const;   // kOov when absent
    const std::string& word(int id) const;
    int size() const { return static_cast<int>(words_.size()); }

    // Lowercase whitespace tokenizer; unknown words map to kOov.
    std::vector<int> tokenize(const std::string& text, int max_tokens) const;
    std::string detokenize(const std::vector<int>& tokens) const;

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

  private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

struct ImageSample {
    Tensor3 pixels;  // [H x W x 3], values in [0,1]
    int identity = 0;
    int sample_id = 0;
};

struct TextSample {
    std::vector<int> tokens;  // 1 <= size <= max_tokens
    int identity = 0;
    int sample_id = 0;
};

struct PairDataset {
    std::vector<ImageSample> images;
    std::vector<TextSample> texts;
    int num_identities = 0;                       // Q
    std::vector<std::pair<int, int>> pair_index;  // (image sample_id, text sample_id)
    Vocabulary vocab;

    int num_pairs() const { return static_cast<int>(pair_index.size()); }

    // pair indices grouped by identity, built on construction
    std::vector<std::vector<int>> pairs_by_identity;

    void rebuild_indexes();
    void validate() const;  // throws IngestError on any invariant violation
};

struct SyntheticSpec {
    int num_identities = 2;
    int images_per_id = 1;
    int texts_per_id = 1;
    double noise_scale = 0.0;
    uint64_t seed = 0;
    int image_h = 48;
    int image_w = 16;
    int text_len = 12;
};

// Pure function of the spec: identity latents drive both pixel rendering and
// identity-specific token distributions; every same-identity (image, text)
// combination is materialized as a pair.
PairDataset generate_synthetic(const SyntheticSpec& spec);

struct DatasetSchema {
    std::string vocab_path;
    int image_h = 48;
    int image_w = 16;
    int max_tokens = 24;
};

// One record per line: identity<TAB>image_ref<TAB>text. image_ref is either
// a path relative to the dataset file (binary PPM) or "inline:" + hex bytes.
PairDataset load_dataset(const std::string& path, const DatasetSchema& schema);
void save_dataset(const PairDataset& ds, const std::string& path,
                  const std::string& vocab_path);

constexpr int kNoAltText = -1;

struct Batch {
    std::vector<int> image_idx;     // into dataset.images
    std::vector<int> text_idx;      // into dataset.texts
    std::vector<int> identities;
    std::vector<int> alt_text_idx;  // kNoAltText when the identity has no
                                    // distinct text tied to a different image
    std::vector<bool> flip;         // horizontal-flip flag per position

    int size() const { return static_cast<int>(image_idx.size()); }
};

// Draws B matched pairs, sampling identities without replacement first so a
// batch covers as many distinct identities as availability allows.
Batch sample_identity_batch(const PairDataset& ds, int batch_size, Rng& rng,
                            bool hflip = false);

}  // namespace beat
