#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace paraphrase {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kNumSpecial = 4;

// Malformed input data; line() is 1-based, 0 when not tied to a line.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what, int line = 0) : std::runtime_error(what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

class Vocab {
public:
    // Specials only: <pad>, <bos>, <eos>, <unk> at ids 0..3.
    Vocab();
    // Non-special tokens receive ids 4, 5, ... in the given order.
    explicit Vocab(const std::vector<std::string>& words);

    int id(std::string_view token) const;
    const std::string& token(int id) const;
    bool contains(std::string_view token) const;
    int size() const { return static_cast<int>(id_to_token_.size()); }
    std::vector<std::string> words() const;

    // One non-special token per line; line index = id - 4.
    void save(const std::filesystem::path& path) const;
    static Vocab load(const std::filesystem::path& path);

    bool operator==(const Vocab& other) const { return id_to_token_ == other.id_to_token_; }

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

// Token ids including the leading BOS and trailing EOS; never padded.
struct TokenSequence {
    std::vector<int> ids;

    int length() const { return static_cast<int>(ids.size()); }
    bool operator==(const TokenSequence& other) const = default;
};

struct ParallelPair {
    TokenSequence source;
    TokenSequence target;
};

struct SemiSplit {
    std::vector<ParallelPair> labelled;
    std::vector<TokenSequence> unlabelled;
    std::vector<ParallelPair> val;
    std::vector<ParallelPair> test;
};

// Whitespace split and ASCII lower-casing.
std::vector<std::string> tokenize(std::string_view text);

// Words joined by single spaces.
std::string join_words(const std::vector<std::string>& words);

Vocab build_vocab(const std::vector<std::string>& corpus, int min_freq, int max_size);

TokenSequence encode_text(const Vocab& vocab, std::string_view text, int max_len);
// Words between BOS and the first EOS joined by single spaces.
std::string decode_text(const Vocab& vocab, const TokenSequence& seq);

std::vector<std::string> read_lines(const std::filesystem::path& path);
std::vector<ParallelPair> load_parallel_tsv(const std::filesystem::path& path, const Vocab& vocab, int max_len);
std::vector<TokenSequence> load_monolingual(const std::filesystem::path& path, const Vocab& vocab, int max_len);
// Raw sentences of a TSV file (both columns) or a plain text file, for vocabulary building.
std::vector<std::string> read_corpus_sentences(const std::filesystem::path& path);

struct SplitReserve {
    int val = 0;
    int test = 0;
};

// Seeded split: val and test are carved off first, then n pairs form the
// unlabelled pool (sources only) and the first m of those keep their targets.
SemiSplit make_semi_split(const std::vector<ParallelPair>& pairs, int m, int n, std::uint64_t seed,
                          SplitReserve reserve = {});

// Right-padded batch; row r occupies ids[r * length, (r + 1) * length).
struct TokenBatch {
    int batch = 0;
    int length = 0;
    std::vector<int> ids;
    std::vector<int> lengths;

    int at(int row, int pos) const { return ids[static_cast<std::size_t>(row) * length + pos]; }
    std::vector<std::uint8_t> key_mask() const;
    // Row b * length + t holds the id at t + 1, or -1 past the sequence end.
    std::vector<int> next_token_targets() const;
};

TokenBatch make_batch(const std::vector<TokenSequence>& seqs);
std::vector<TokenSequence> sources_of(const std::vector<ParallelPair>& pairs);
std::vector<TokenSequence> targets_of(const std::vector<ParallelPair>& pairs);

// Seeded permutation of [0, n) cut into batches; the last batch may be short.
class BatchIterator {
public:
    BatchIterator(std::size_t n, int batch_size, std::uint64_t seed, int epoch);

    std::optional<std::vector<std::size_t>> next();
    std::size_t batch_count() const;
    void reset() { cursor_ = 0; }

private:
    std::vector<std::size_t> order_;
    std::size_t batch_size_;
    std::size_t cursor_ = 0;
};

template <class T>
std::vector<T> select(const std::vector<T>& items, const std::vector<std::size_t>& indices) {
    std::vector<T> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(items.at(i));
    return out;
}

}  // namespace paraphrase
