#include "paraphrase/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <stdexcept>

namespace paraphrase {

namespace {

using NgramCounts = std::map<Words, int>;

NgramCounts ngrams(const Words& w, int n) {
    NgramCounts out;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= w.size(); ++i)
        ++out[Words(w.begin() + static_cast<long>(i), w.begin() + static_cast<long>(i) + n)];
    return out;
}

void check_aligned(std::size_t candidates, std::size_t references, const char* what) {
    if (candidates != references)
        throw std::invalid_argument(std::string(what) + ": " + std::to_string(candidates) + " candidates but " +
                                    std::to_string(references) + " reference lists");
    if (candidates == 0) throw std::invalid_argument(std::string(what) + ": empty corpus");
}

struct BleuStats {
    std::vector<long> matches;
    std::vector<long> totals;
    long cand_len = 0;
    long ref_len = 0;
};

void accumulate(BleuStats& st, const Words& cand, const std::vector<Words>& refs, int n) {
    if (refs.empty()) throw std::invalid_argument("bleu: example without references");
    for (int k = 1; k <= n; ++k) {
        const NgramCounts c = ngrams(cand, k);
        NgramCounts max_ref;
        for (const auto& r : refs)
            for (const auto& [g, cnt] : ngrams(r, k)) max_ref[g] = std::max(max_ref[g], cnt);
        for (const auto& [g, cnt] : c) {
            auto it = max_ref.find(g);
            if (it != max_ref.end()) st.matches[static_cast<std::size_t>(k - 1)] += std::min(cnt, it->second);
            st.totals[static_cast<std::size_t>(k - 1)] += cnt;
        }
    }
    const long c = static_cast<long>(cand.size());
    long best = static_cast<long>(refs.front().size());
    for (const auto& r : refs) {
        const long len = static_cast<long>(r.size());
        if (std::abs(len - c) < std::abs(best - c) || (std::abs(len - c) == std::abs(best - c) && len < best)) best = len;
    }
    st.cand_len += c;
    st.ref_len += best;
}

double bleu_from(const BleuStats& st, int n) {
    if (st.cand_len == 0) return 0.0;
    double log_sum = 0.0;
    for (int k = 0; k < n; ++k) {
        const double p = st.totals[static_cast<std::size_t>(k)] == 0
                             ? 0.0
                             : static_cast<double>(st.matches[static_cast<std::size_t>(k)]) /
                                   static_cast<double>(st.totals[static_cast<std::size_t>(k)]);
        log_sum += std::log(p > 0.0 ? p : kBleuSmoothing);
    }
    const double bp = st.cand_len > st.ref_len
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(st.ref_len) / static_cast<double>(st.cand_len));
    return 100.0 * bp * std::exp(log_sum / n);
}

BleuStats empty_stats(int n) {
    BleuStats st;
    st.matches.assign(static_cast<std::size_t>(n), 0);
    st.totals.assign(static_cast<std::size_t>(n), 0);
    return st;
}

double f1(double overlap, double cand_total, double ref_total) {
    if (overlap <= 0.0 || cand_total <= 0.0 || ref_total <= 0.0) return 0.0;
    const double p = overlap / cand_total;
    const double r = overlap / ref_total;
    return 2.0 * p * r / (p + r);
}

double rouge_n(const Words& cand, const Words& ref, int n) {
    const NgramCounts c = ngrams(cand, n);
    const NgramCounts r = ngrams(ref, n);
    long overlap = 0, ct = 0, rt = 0;
    for (const auto& [g, cnt] : c) {
        ct += cnt;
        auto it = r.find(g);
        if (it != r.end()) overlap += std::min(cnt, it->second);
    }
    for (const auto& [g, cnt] : r) rt += cnt;
    return f1(static_cast<double>(overlap), static_cast<double>(ct), static_cast<double>(rt));
}

std::size_t lcs_length(const Words& a, const Words& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

// Mid-ranks of |d| over all differences, zeros included.
std::vector<double> abs_ranks(const std::vector<double>& d) {
    std::vector<std::size_t> order(d.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });
    std::vector<double> rank(d.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) rank[order[t]] = mid;
        i = j + 1;
    }
    return rank;
}

}  // namespace

double corpus_bleu(const std::vector<Words>& candidates, const std::vector<std::vector<Words>>& references, int n) {
    check_aligned(candidates.size(), references.size(), "corpus_bleu");
    if (n < 1) throw std::invalid_argument("corpus_bleu: n must be >= 1");
    BleuStats st = empty_stats(n);
    for (std::size_t i = 0; i < candidates.size(); ++i) accumulate(st, candidates[i], references[i], n);
    return bleu_from(st, n);
}

std::vector<double> sentence_bleu(const std::vector<Words>& candidates, const std::vector<std::vector<Words>>& references,
                                  int n) {
    check_aligned(candidates.size(), references.size(), "sentence_bleu");
    std::vector<double> out;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        BleuStats st = empty_stats(n);
        accumulate(st, candidates[i], references[i], n);
        out.push_back(bleu_from(st, n));
    }
    return out;
}

double self_bleu(const std::vector<Words>& candidates, const std::vector<Words>& sources) {
    std::vector<std::vector<Words>> refs;
    for (const auto& s : sources) refs.push_back({s});
    return corpus_bleu(candidates, refs, 4);
}

double i_bleu(double bleu4, double self_bleu4, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("i_bleu: alpha must lie in [0, 1]");
    return alpha * bleu4 - (1.0 - alpha) * self_bleu4;
}

RougeScores rouge_scores(const std::vector<Words>& candidates, const std::vector<std::vector<Words>>& references) {
    check_aligned(candidates.size(), references.size(), "rouge_scores");
    RougeScores total;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (references[i].empty()) throw std::invalid_argument("rouge_scores: example without references");
        RougeScores best;
        const Words& c = candidates[i];
        for (const auto& r : references[i]) {
            best.rouge1 = std::max(best.rouge1, rouge_n(c, r, 1));
            best.rouge2 = std::max(best.rouge2, rouge_n(c, r, 2));
            best.rougeL = std::max(best.rougeL, f1(static_cast<double>(lcs_length(c, r)), static_cast<double>(c.size()),
                                                   static_cast<double>(r.size())));
        }
        total.rouge1 += best.rouge1;
        total.rouge2 += best.rouge2;
        total.rougeL += best.rougeL;
    }
    const double scale = 100.0 / static_cast<double>(candidates.size());
    return {total.rouge1 * scale, total.rouge2 * scale, total.rougeL * scale};
}

double wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("wilcoxon: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " scores");
    if (a.size() < 6) throw std::invalid_argument("wilcoxon: needs at least 6 paired scores, got " + std::to_string(a.size()));
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    const std::vector<double> rank = abs_ranks(d);

    std::vector<double> ranks;  // non-zero differences only
    double w_plus = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i] == 0.0) continue;
        ranks.push_back(rank[i]);
        if (d[i] > 0.0) w_plus += rank[i];
    }
    if (ranks.empty()) throw std::invalid_argument("wilcoxon: all differences zero");

    if (ranks.size() <= 25) {
        // Mid-ranks are multiples of 1/2, so doubled ranks are integers.
        std::vector<int> w;
        int total = 0;
        for (double r : ranks) {
            w.push_back(static_cast<int>(std::lround(2.0 * r)));
            total += w.back();
        }
        std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
        count[0] = 1.0;
        for (int x : w)
            for (int s = total; s >= x; --s) count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - x)];
        const int observed = static_cast<int>(std::lround(2.0 * w_plus));
        double lower = 0.0, upper = 0.0, all = 0.0;
        for (int s = 0; s <= total; ++s) {
            const double c = count[static_cast<std::size_t>(s)];
            all += c;
            if (s <= observed) lower += c;
            if (s >= observed) upper += c;
        }
        return std::min(1.0, 2.0 * std::min(lower, upper) / all);
    }

    double mean = 0.0, var = 0.0;
    for (double r : ranks) {
        mean += r / 2.0;
        var += r * r / 4.0;
    }
    const double z = (w_plus - mean) / std::sqrt(var);
    return std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
}

nlohmann::json to_json(const MetricsReport& r) {
    return {{"bleu1", r.bleu[0]}, {"bleu2", r.bleu[1]},   {"bleu3", r.bleu[2]},   {"bleu4", r.bleu[3]},
            {"self_bleu", r.self_bleu}, {"i_bleu", r.i_bleu}, {"rouge1", r.rouge1}, {"rouge2", r.rouge2},
            {"rougeL", r.rougeL}, {"n_examples", r.n_examples}};
}

std::string metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    std::size_t name_width = 5;
    for (const auto& [name, r] : rows) name_width = std::max(name_width, name.size());
    const char* columns[] = {"B-1", "B-2", "B-3", "B-4", "i-B", "R-1", "R-2", "R-L"};
    std::string out = "Model" + std::string(name_width - 5, ' ');
    for (const char* c : columns) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), " %7s", c);
        out += buf;
    }
    out += '\n';
    for (const auto& [name, r] : rows) {
        out += name + std::string(name_width - name.size(), ' ');
        for (double v : {r.bleu[0], r.bleu[1], r.bleu[2], r.bleu[3], r.i_bleu, r.rouge1, r.rouge2, r.rougeL}) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), " %7.2f", v);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

MetricsReport compute_metrics(const std::vector<Words>& candidates, const std::vector<std::vector<Words>>& references,
                              const std::vector<Words>& sources, double alpha) {
    check_aligned(candidates.size(), references.size(), "compute_metrics");
    if (sources.size() != candidates.size()) throw std::invalid_argument("compute_metrics: sources not aligned");
    MetricsReport r;
    for (int n = 1; n <= 4; ++n) r.bleu[static_cast<std::size_t>(n - 1)] = corpus_bleu(candidates, references, n);
    r.self_bleu = self_bleu(candidates, sources);
    r.i_bleu = i_bleu(r.bleu[3], r.self_bleu, alpha);
    const RougeScores rouge = rouge_scores(candidates, references);
    r.rouge1 = rouge.rouge1;
    r.rouge2 = rouge.rouge2;
    r.rougeL = rouge.rougeL;
    r.n_examples = static_cast<int>(candidates.size());
    return r;
}

std::vector<EvalExample> examples_from_pairs(const Vocab& vocab, const std::vector<ParallelPair>& pairs) {
    std::vector<EvalExample> out;
    for (const auto& p : pairs)
        out.push_back({tokenize(decode_text(vocab, p.source)), {tokenize(decode_text(vocab, p.target))}});
    return out;
}

BoundRows bounds_rows(const std::vector<EvalExample>& test, std::uint64_t seed, double alpha) {
    if (test.empty()) throw std::invalid_argument("bounds_rows: empty test set");
    std::vector<Words> sources;
    std::vector<std::vector<Words>> refs;
    for (const auto& e : test) {
        sources.push_back(e.source);
        refs.push_back(e.references);
    }
    Rng rng(seed);
    std::vector<Words> random_pick;
    for (std::size_t i = 0; i < test.size(); ++i) {
        std::size_t j = i;
        if (test.size() > 1) {
            std::uniform_int_distribution<std::size_t> other(0, test.size() - 2);
            j = other(rng);
            if (j >= i) ++j;
        }
        const auto& choices = test[j].references;
        std::uniform_int_distribution<std::size_t> which(0, choices.size() - 1);
        random_pick.push_back(choices[which(rng)]);
    }
    return {compute_metrics(sources, refs, sources, alpha), compute_metrics(random_pick, refs, sources, alpha)};
}

Evaluation evaluate_checkpoint(const SharedSeq2Seq& model, const Vocab& vocab, const std::vector<EvalExample>& test,
                               int max_len, double alpha) {
    if (test.empty()) throw std::invalid_argument("evaluate_checkpoint: empty test set");
    std::vector<TokenSequence> inputs;
    std::vector<Words> sources;
    std::vector<std::vector<Words>> refs;
    for (const auto& e : test) {
        inputs.push_back(encode_text(vocab, join_words(e.source), max_len));
        sources.push_back(e.source);
        refs.push_back(e.references);
    }
    Evaluation ev;
    for (const auto& out : model.greedy_decode(inputs, max_len)) ev.candidates.push_back(tokenize(decode_text(vocab, out)));
    ev.report = compute_metrics(ev.candidates, refs, sources, alpha);
    ev.sentence_bleu4 = sentence_bleu(ev.candidates, refs, 4);
    return ev;
}

}  // namespace paraphrase
