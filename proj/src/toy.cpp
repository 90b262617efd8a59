#include "paraphrase/toy.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

namespace paraphrase {

namespace {

std::string numbered(char prefix, int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%c%02d", prefix, i);
    return buf;
}

}  // namespace

void ToyConfig::validate() const {
    if (synonym_pairs < 1) throw std::invalid_argument("toy: synonym_pairs must be >= 1");
    if (function_words < 0) throw std::invalid_argument("toy: function_words must be >= 0");
    if (min_words < 1 || max_words < min_words) throw std::invalid_argument("toy: need 1 <= min_words <= max_words");
    if (!(function_rate >= 0.0 && function_rate < 1.0)) throw std::invalid_argument("toy: function_rate must be in [0, 1)");
    if (function_words == 0 && function_rate > 0.0) throw std::invalid_argument("toy: function_rate needs function words");
}

ToyLanguage::ToyLanguage(const ToyConfig& config) : config_(config) {
    config_.validate();
    for (int i = 0; i < config_.function_words; ++i) function_.push_back(numbered('f', i));
    for (int i = 0; i < config_.synonym_pairs; ++i) {
        content_.push_back(numbered('x', i));
        content_.push_back(numbered('y', i));
    }
    // Both members of a pair share the pair's Zipf weight.
    for (int i = 0; i < config_.synonym_pairs; ++i) {
        const double w = 1.0 / std::pow(i + 1.0, config_.zipf_exponent);
        content_weights_.push_back(w);
        content_weights_.push_back(w);
    }
    words_ = function_;
    words_.insert(words_.end(), content_.begin(), content_.end());
}

std::vector<std::string> ToyLanguage::sample_sentence(Rng& rng) const {
    std::uniform_int_distribution<int> len(config_.min_words, config_.max_words);
    std::bernoulli_distribution is_function(config_.function_rate);
    std::discrete_distribution<std::size_t> content(content_weights_.begin(), content_weights_.end());
    std::vector<std::string> out;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
        if (!function_.empty() && is_function(rng)) {
            std::uniform_int_distribution<std::size_t> f(0, function_.size() - 1);
            out.push_back(function_[f(rng)]);
        } else {
            out.push_back(content_[content(rng)]);
        }
    }
    return out;
}

std::string ToyLanguage::synonym(const std::string& word) const {
    if (word.size() == 3 && (word[0] == 'x' || word[0] == 'y')) return (word[0] == 'x' ? "y" : "x") + word.substr(1);
    return word;
}

std::vector<std::string> ToyLanguage::paraphrase(const std::vector<std::string>& sentence) const {
    std::vector<std::string> out;
    out.reserve(sentence.size());
    for (const auto& w : sentence) out.push_back(synonym(w));
    return out;
}

std::vector<std::pair<std::string, std::string>> make_toy_corpus(const ToyLanguage& language, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto s = language.sample_sentence(rng);
        out.emplace_back(join_words(s), join_words(language.paraphrase(s)));
    }
    return out;
}

ToyDataset make_toy_dataset(const ToyConfig& config, int n, std::uint64_t seed, int max_len) {
    ToyLanguage language(config);
    ToyDataset ds;
    ds.vocab = Vocab(language.words());
    for (const auto& [s, t] : make_toy_corpus(language, n, seed))
        ds.pairs.push_back({encode_text(ds.vocab, s, max_len), encode_text(ds.vocab, t, max_len)});
    return ds;
}

}  // namespace paraphrase
