#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "paraphrase/autodiff.hpp"
#include "paraphrase/data.hpp"

namespace paraphrase {

// Synthetic paraphrase language: content words come in synonym pairs
// (xNN <-> yNN) and a paraphrase swaps every content word for its synonym
// while function words stay put. Word frequencies follow a Zipf law.
struct ToyConfig {
    int synonym_pairs = 22;
    int function_words = 6;
    int min_words = 5;
    int max_words = 12;
    double zipf_exponent = 1.0;
    double function_rate = 0.25;  // chance that a slot holds a function word

    void validate() const;
};

class ToyLanguage {
public:
    explicit ToyLanguage(const ToyConfig& config);

    const ToyConfig& config() const { return config_; }
    // All words, function words first.
    const std::vector<std::string>& words() const { return words_; }

    std::vector<std::string> sample_sentence(Rng& rng) const;
    std::vector<std::string> paraphrase(const std::vector<std::string>& sentence) const;
    std::string synonym(const std::string& word) const;

private:
    ToyConfig config_;
    std::vector<std::string> words_;
    std::vector<std::string> content_;
    std::vector<std::string> function_;
    std::vector<double> content_weights_;
};

// n (source, paraphrase) sentence pairs.
std::vector<std::pair<std::string, std::string>> make_toy_corpus(const ToyLanguage& language, int n, std::uint64_t seed);

// Tokenised pairs under a vocabulary built from the whole language.
struct ToyDataset {
    Vocab vocab;
    std::vector<ParallelPair> pairs;
};

ToyDataset make_toy_dataset(const ToyConfig& config, int n, std::uint64_t seed, int max_len = 20);

}  // namespace paraphrase
