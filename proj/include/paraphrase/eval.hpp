#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "paraphrase/data.hpp"
#include "paraphrase/model.hpp"

namespace paraphrase {

using Words = std::vector<std::string>;

// Added to zero n-gram precisions so the geometric mean stays defined.
inline constexpr double kBleuSmoothing = 1e-9;
inline constexpr double kDefaultIBleuAlpha = 0.9;

// Corpus BLEU-n on a 0..100 scale: clipped n-gram precisions pooled over the
// corpus, geometric mean over orders 1..n, brevity penalty against the
// closest reference length (shorter wins ties).
double corpus_bleu(const std::vector<Words>& candidates, const std::vector<std::vector<Words>>& references, int n);
// Sentence-level BLEU-n for every example (same smoothing).
std::vector<double> sentence_bleu(const std::vector<Words>& candidates, const std::vector<std::vector<Words>>& references,
                                  int n = 4);
// BLEU-4 of candidates against their own sources.
double self_bleu(const std::vector<Words>& candidates, const std::vector<Words>& sources);
double i_bleu(double bleu4, double self_bleu4, double alpha = kDefaultIBleuAlpha);

struct RougeScores {
    double rouge1 = 0.0;
    double rouge2 = 0.0;
    double rougeL = 0.0;
};

// F1 scores on a 0..100 scale; best reference per example, then the corpus mean.
RougeScores rouge_scores(const std::vector<Words>& candidates, const std::vector<std::vector<Words>>& references);

// Two-sided paired Wilcoxon signed-rank p-value. Zero differences are ranked
// and then dropped (Pratt). Up to 25 non-zero differences use the exact
// permutation distribution of the observed ranks; beyond that a normal
// approximation with tie-corrected variance.
double wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b);

struct MetricsReport {
    std::array<double, 4> bleu{};  // BLEU-1..4
    double self_bleu = 0.0;
    double i_bleu = 0.0;
    double rouge1 = 0.0;
    double rouge2 = 0.0;
    double rougeL = 0.0;
    int n_examples = 0;
};

nlohmann::json to_json(const MetricsReport& report);
// Aligned plain-text table with columns B-1 B-2 B-3 B-4 i-B R-1 R-2 R-L.
std::string metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

MetricsReport compute_metrics(const std::vector<Words>& candidates, const std::vector<std::vector<Words>>& references,
                              const std::vector<Words>& sources, double alpha = kDefaultIBleuAlpha);

struct EvalExample {
    Words source;
    std::vector<Words> references;
};

std::vector<EvalExample> examples_from_pairs(const Vocab& vocab, const std::vector<ParallelPair>& pairs);

struct BoundRows {
    MetricsReport upper;  // sources copied as candidates
    MetricsReport lower;  // a randomly chosen other example's reference
};

BoundRows bounds_rows(const std::vector<EvalExample>& test, std::uint64_t seed, double alpha = kDefaultIBleuAlpha);

struct Evaluation {
    MetricsReport report;
    std::vector<Words> candidates;
    std::vector<double> sentence_bleu4;
};

// Greedy-decodes every source and scores the outputs.
Evaluation evaluate_checkpoint(const SharedSeq2Seq& model, const Vocab& vocab, const std::vector<EvalExample>& test,
                               int max_len, double alpha = kDefaultIBleuAlpha);

}  // namespace paraphrase
