#include "paraphrase/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace paraphrase {

namespace {

const std::vector<std::string> kSpecialTokens{"<pad>", "<bos>", "<eos>", "<unk>"};

}  // namespace

Vocab::Vocab() : id_to_token_(kSpecialTokens) {
    for (int i = 0; i < kNumSpecial; ++i) token_to_id_[id_to_token_[static_cast<std::size_t>(i)]] = i;
}

Vocab::Vocab(const std::vector<std::string>& words) : Vocab() {
    for (const auto& w : words) {
        if (w.empty()) throw DataError("vocabulary token is empty");
        if (token_to_id_.count(w) != 0) throw DataError("duplicate vocabulary token: " + w);
        token_to_id_[w] = static_cast<int>(id_to_token_.size());
        id_to_token_.push_back(w);
    }
}

int Vocab::id(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    if (it == token_to_id_.end() || it->second < kNumSpecial) return kUnk;
    return it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("token id out of range: " + std::to_string(id));
    return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    return it != token_to_id_.end() && it->second >= kNumSpecial;
}

std::vector<std::string> Vocab::words() const { return {id_to_token_.begin() + kNumSpecial, id_to_token_.end()}; }

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write vocabulary file: " + path.string());
    for (std::size_t i = kNumSpecial; i < id_to_token_.size(); ++i) out << id_to_token_[i] << '\n';
    if (!out) throw std::runtime_error("failed writing vocabulary file: " + path.string());
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::vector<std::string> words;
    int line_no = 0;
    for (const auto& line : read_lines(path)) {
        ++line_no;
        if (line.empty()) throw DataError("empty token in vocabulary file " + path.string(), line_no);
        words.push_back(line);
    }
    return Vocab(words);
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto uc = static_cast<unsigned char>(ch);
        if (std::isspace(uc)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(uc)));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

Vocab build_vocab(const std::vector<std::string>& corpus, int min_freq, int max_size) {
    if (corpus.empty()) throw DataError("empty corpus");
    if (min_freq < 1) throw std::invalid_argument("min_freq must be >= 1");
    if (max_size < 0) throw std::invalid_argument("max_size must be >= 0");
    std::map<std::string, long> counts;
    for (const auto& line : corpus)
        for (auto& tok : tokenize(line)) ++counts[tok];
    std::vector<std::pair<std::string, long>> ranked;
    for (auto& [tok, c] : counts)
        if (c >= min_freq && std::find(kSpecialTokens.begin(), kSpecialTokens.end(), tok) == kSpecialTokens.end())
            ranked.emplace_back(tok, c);
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (static_cast<int>(ranked.size()) > max_size) ranked.resize(static_cast<std::size_t>(max_size));
    std::vector<std::string> words;
    words.reserve(ranked.size());
    for (auto& r : ranked) words.push_back(std::move(r.first));
    return Vocab(words);
}

TokenSequence encode_text(const Vocab& vocab, std::string_view text, int max_len) {
    if (max_len < 2) throw std::invalid_argument("max_len must be >= 2");
    auto toks = tokenize(text);
    if (toks.empty()) throw DataError("empty sequence");
    // BOS and EOS count towards max_len; truncation keeps both.
    const std::size_t keep = std::min(toks.size(), static_cast<std::size_t>(max_len - 2));
    TokenSequence seq;
    seq.ids.reserve(keep + 2);
    seq.ids.push_back(kBos);
    for (std::size_t i = 0; i < keep; ++i) seq.ids.push_back(vocab.id(toks[i]));
    seq.ids.push_back(kEos);
    return seq;
}

std::string decode_text(const Vocab& vocab, const TokenSequence& seq) {
    std::string out;
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
        const int id = seq.ids[i];
        if (id == kBos && i == 0) continue;
        if (id == kEos || id == kPad) break;
        if (!out.empty()) out.push_back(' ');
        out += vocab.token(id);
    }
    return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
    }
    return lines;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

TokenSequence encode_field(const Vocab& vocab, const std::string& text, int max_len, int line_no,
                           const std::filesystem::path& path) {
    try {
        return encode_text(vocab, text, max_len);
    } catch (const DataError& e) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what(), line_no);
    }
}

}  // namespace

std::vector<ParallelPair> load_parallel_tsv(const std::filesystem::path& path, const Vocab& vocab, int max_len) {
    std::vector<ParallelPair> pairs;
    int line_no = 0;
    for (const auto& line : read_lines(path)) {
        ++line_no;
        const auto fields = split_tabs(line);
        if (fields.size() != 2)
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 2 tab-separated fields, found " +
                                std::to_string(fields.size()),
                            line_no);
        pairs.push_back({encode_field(vocab, fields[0], max_len, line_no, path),
                         encode_field(vocab, fields[1], max_len, line_no, path)});
    }
    return pairs;
}

std::vector<TokenSequence> load_monolingual(const std::filesystem::path& path, const Vocab& vocab, int max_len) {
    std::vector<TokenSequence> out;
    int line_no = 0;
    for (const auto& line : read_lines(path)) {
        ++line_no;
        out.push_back(encode_field(vocab, line, max_len, line_no, path));
    }
    return out;
}

std::vector<std::string> read_corpus_sentences(const std::filesystem::path& path) {
    std::vector<std::string> out;
    for (const auto& line : read_lines(path))
        for (auto& field : split_tabs(line)) out.push_back(std::move(field));
    return out;
}

SemiSplit make_semi_split(const std::vector<ParallelPair>& pairs, int m, int n, std::uint64_t seed,
                          SplitReserve reserve) {
    if (m > n) throw std::invalid_argument("labelled exceeds unlabelled");
    if (m < 0 || reserve.val < 0 || reserve.test < 0) throw std::invalid_argument("split sizes must be non-negative");
    const std::size_t needed = static_cast<std::size_t>(n) + reserve.val + reserve.test;
    if (needed > pairs.size())
        throw std::invalid_argument("split needs " + std::to_string(needed) + " pairs, corpus has " +
                                    std::to_string(pairs.size()));
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    SemiSplit split;
    std::size_t cursor = 0;
    for (int i = 0; i < reserve.val; ++i) split.val.push_back(pairs[order[cursor++]]);
    for (int i = 0; i < reserve.test; ++i) split.test.push_back(pairs[order[cursor++]]);
    for (int i = 0; i < n; ++i) {
        const ParallelPair& p = pairs[order[cursor++]];
        split.unlabelled.push_back(p.source);
        if (i < m) split.labelled.push_back(p);
    }
    return split;
}

std::vector<std::uint8_t> TokenBatch::key_mask() const {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(batch) * length, 0);
    for (int r = 0; r < batch; ++r)
        for (int t = 0; t < lengths[static_cast<std::size_t>(r)]; ++t) mask[static_cast<std::size_t>(r) * length + t] = 1;
    return mask;
}

std::vector<int> TokenBatch::next_token_targets() const {
    std::vector<int> out(static_cast<std::size_t>(batch) * length, -1);
    for (int r = 0; r < batch; ++r)
        for (int t = 0; t + 1 < lengths[static_cast<std::size_t>(r)]; ++t)
            out[static_cast<std::size_t>(r) * length + t] = at(r, t + 1);
    return out;
}

TokenBatch make_batch(const std::vector<TokenSequence>& seqs) {
    if (seqs.empty()) throw std::invalid_argument("cannot batch an empty list of sequences");
    TokenBatch b;
    b.batch = static_cast<int>(seqs.size());
    for (const auto& s : seqs) {
        if (s.ids.empty()) throw std::invalid_argument("cannot batch an empty sequence");
        b.length = std::max(b.length, s.length());
        b.lengths.push_back(s.length());
    }
    b.ids.assign(static_cast<std::size_t>(b.batch) * b.length, kPad);
    for (int r = 0; r < b.batch; ++r)
        std::copy(seqs[static_cast<std::size_t>(r)].ids.begin(), seqs[static_cast<std::size_t>(r)].ids.end(),
                  b.ids.begin() + static_cast<std::ptrdiff_t>(r) * b.length);
    return b;
}

std::vector<TokenSequence> sources_of(const std::vector<ParallelPair>& pairs) {
    std::vector<TokenSequence> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(p.source);
    return out;
}

std::vector<TokenSequence> targets_of(const std::vector<ParallelPair>& pairs) {
    std::vector<TokenSequence> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(p.target);
    return out;
}

BatchIterator::BatchIterator(std::size_t n, int batch_size, std::uint64_t seed, int epoch)
    : order_(n), batch_size_(static_cast<std::size_t>(batch_size)) {
    if (n == 0) throw std::invalid_argument("cannot iterate an empty dataset");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order_.begin(), order_.end(), rng);
}

std::optional<std::vector<std::size_t>> BatchIterator::next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    return out;
}

std::size_t BatchIterator::batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

}  // namespace paraphrase
