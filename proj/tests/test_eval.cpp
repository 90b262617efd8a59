#include <doctest.h>

#include <cmath>
#include <random>

#include "paraphrase/eval.hpp"
#include "metric_oracles.hpp"
#include "paraphrase/toy.hpp"

using namespace paraphrase;
using namespace paraphrase::testing;

namespace {

Words w(const std::string& text) { return tokenize(text); }

std::vector<std::vector<Words>> single(const std::vector<Words>& refs) {
    std::vector<std::vector<Words>> out;
    for (const auto& r : refs) out.push_back({r});
    return out;
}

Words random_words(std::mt19937_64& rng, int min_len, int max_len, int alphabet) {
    std::uniform_int_distribution<int> len(min_len, max_len), tok(0, alphabet - 1);
    Words out(static_cast<std::size_t>(len(rng)));
    for (auto& t : out) t = std::string(1, static_cast<char>('a' + tok(rng)));
    return out;
}

}  // namespace

TEST_CASE("BLEU hand-computed examples") {
    const std::vector<Words> c{w("a b c d")};
    const auto r = single({w("a b c e")});
    CHECK(std::abs(corpus_bleu(c, r, 1) - 75.0) < 1e-6);
    // p1 = 3/4, p2 = 2/3.
    CHECK(std::abs(corpus_bleu(c, r, 2) - 100.0 * std::sqrt(0.75 * 2.0 / 3.0)) < 1e-6);
    // Brevity penalty: c = 2, r = 4.
    CHECK(std::abs(corpus_bleu({w("a b")}, single({w("a b c d")}), 1) - 100.0 * std::exp(-1.0)) < 1e-6);
    // Clipping: "the" may match at most twice.
    CHECK(std::abs(corpus_bleu({w("the the the the")}, single({w("the cat the mat")}), 1) - 50.0) < 1e-6);
    // Closest reference length decides the brevity penalty.
    CHECK(std::abs(corpus_bleu({w("a b c")}, {{w("a b c d e f"), w("a b c d")}}, 1) - 100.0 * std::exp(1.0 - 4.0 / 3.0)) <
          1e-6);
    // No 4-gram overlap: smoothed, small but positive.
    const double smoothed = corpus_bleu(c, r, 4);
    CHECK(smoothed > 0.0);
    CHECK(smoothed < 1.0);
    CHECK(std::isfinite(smoothed));
    CHECK_THROWS_AS(corpus_bleu(c, {}, 4), std::invalid_argument);
}

TEST_CASE("BLEU identity and agreement with a naive oracle on random corpora") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const int n_sent = std::uniform_int_distribution<int>(1, 5)(rng);
        std::vector<Words> cands;
        std::vector<std::vector<Words>> refs;
        for (int i = 0; i < n_sent; ++i) {
            cands.push_back(random_words(rng, 1, 8, 4));
            std::vector<Words> rs;
            const int n_refs = std::uniform_int_distribution<int>(1, 3)(rng);
            for (int k = 0; k < n_refs; ++k) rs.push_back(random_words(rng, 1, 8, 4));
            refs.push_back(rs);
        }
        for (int n = 1; n <= 4; ++n) REQUIRE(std::abs(corpus_bleu(cands, refs, n) - naive_bleu(cands, refs, n)) < 1e-6);

        std::vector<Words> long_cands;
        for (int i = 0; i < n_sent; ++i) long_cands.push_back(random_words(rng, 4, 9, 6));
        for (int n = 1; n <= 4; ++n) REQUIRE(std::abs(corpus_bleu(long_cands, single(long_cands), n) - 100.0) < 1e-9);
    }
}

TEST_CASE("replacing a matching token by an unseen one never increases BLEU") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 300; ++trial) {
        Words cand = random_words(rng, 2, 10, 3);
        std::vector<std::vector<Words>> refs{{random_words(rng, 2, 10, 3), random_words(rng, 2, 10, 3)}};
        const std::size_t pos = std::uniform_int_distribution<std::size_t>(0, cand.size() - 1)(rng);
        Words worse = cand;
        worse[pos] = "zz";
        for (int n = 1; n <= 4; ++n) REQUIRE(corpus_bleu({worse}, refs, n) <= corpus_bleu({cand}, refs, n) + 1e-12);
    }
}

TEST_CASE("self-BLEU and i-BLEU") {
    const std::vector<Words> s{w("a b c d e"), w("f g h i")};
    CHECK(std::abs(self_bleu(s, s) - 100.0) < 1e-9);
    CHECK(self_bleu({w("p q r s"), w("t u v w")}, s) < 1e-3);
    CHECK(std::abs(i_bleu(100.0, 100.0, 0.9) - 80.0) < 1e-9);
    CHECK(i_bleu(37.5, 12.0, 1.0) == 37.5);
    CHECK(std::abs(i_bleu(28.16, 39.07, 0.9) - 21.437) < 1e-9);
    CHECK_THROWS_AS(i_bleu(1.0, 1.0, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(i_bleu(1.0, 1.0, -0.1), std::invalid_argument);
    // Linear in each argument at fixed alpha.
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    for (int i = 0; i < 100; ++i) {
        const double b1 = u(rng), b2 = u(rng), s1 = u(rng), s2 = u(rng);
        REQUIRE(std::abs(i_bleu(b1 + b2, s1 + s2) - (i_bleu(b1, s1) + i_bleu(b2, s2))) < 1e-9);
    }
}

TEST_CASE("ROUGE hand-computed examples and LCS oracle") {
    auto r = rouge_scores({w("a b c")}, single({w("a c")}));
    CHECK(std::abs(r.rouge1 - 80.0) < 1e-6);
    CHECK(r.rouge2 == 0.0);
    CHECK(std::abs(r.rougeL - 80.0) < 1e-6);
    auto same = rouge_scores({w("x y z w")}, single({w("x y z w")}));
    CHECK(same.rouge1 == doctest::Approx(100.0));
    CHECK(same.rouge2 == doctest::Approx(100.0));
    CHECK(same.rougeL == doctest::Approx(100.0));
    auto none = rouge_scores({w("a b")}, single({w("c d")}));
    CHECK(none.rouge1 == 0.0);
    CHECK(none.rouge2 == 0.0);
    CHECK(none.rougeL == 0.0);
    // Best reference per example, then the mean.
    auto multi = rouge_scores({w("a b c"), w("x y")}, {{w("q"), w("a c")}, {w("x y")}});
    CHECK(std::abs(multi.rouge1 - 90.0) < 1e-6);

    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 300; ++trial) {
        const Words a = random_words(rng, 1, 8, 3);
        const Words b = random_words(rng, 1, 8, 3);
        const double lcs = static_cast<double>(naive_lcs(a, b));
        const double p = lcs / static_cast<double>(a.size()), rc = lcs / static_cast<double>(b.size());
        const double expected = lcs == 0.0 ? 0.0 : 100.0 * 2.0 * p * rc / (p + rc);
        REQUIRE(std::abs(rouge_scores({a}, single({b})).rougeL - expected) < 1e-6);
    }
    CHECK_THROWS_AS(rouge_scores({w("a")}, {}), std::invalid_argument);
}

TEST_CASE("Wilcoxon exact mode matches brute-force sign enumeration") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 400; ++trial) {
        const int n = std::uniform_int_distribution<int>(6, 10)(rng);
        std::uniform_int_distribution<int> small(-3, 3);  // ties and zeros are common
        std::vector<double> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
        bool nonzero = false;
        for (int i = 0; i < n; ++i) {
            a[static_cast<std::size_t>(i)] = small(rng);
            b[static_cast<std::size_t>(i)] = small(rng) + (trial % 3 == 0 ? 1 : 0);
            nonzero |= a[static_cast<std::size_t>(i)] != b[static_cast<std::size_t>(i)];
        }
        if (!nonzero) continue;
        REQUIRE(std::abs(wilcoxon_signed_rank(a, b) - brute_force_wilcoxon(a, b)) < 1e-12);
    }
    // Six positive distinct differences: only one of 64 assignments is as extreme on each side.
    CHECK(wilcoxon_signed_rank({1, 2, 3, 4, 5, 6}, {0, 0, 0, 0, 0, 0}) == doctest::Approx(2.0 / 64.0));
}

TEST_CASE("Wilcoxon decisions, approximation and preconditions") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> b(20), shifted(20);
    for (std::size_t i = 0; i < 20; ++i) {
        b[i] = noise(rng);
        shifted[i] = b[i] + 0.5 + 0.1 * noise(rng);
    }
    CHECK(wilcoxon_signed_rank(shifted, b) < 0.05);

    std::vector<double> ps;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> x(20), y(20);
        for (std::size_t i = 0; i < 20; ++i) {
            x[i] = noise(rng);
            y[i] = noise(rng);
        }
        ps.push_back(wilcoxon_signed_rank(x, y));
    }
    std::nth_element(ps.begin(), ps.begin() + 50, ps.end());
    CHECK(ps[50] > 0.05);

    // Normal approximation (more than 25 non-zero differences).
    std::vector<double> c(60), d(60);
    for (std::size_t i = 0; i < 60; ++i) {
        c[i] = noise(rng);
        d[i] = c[i] + 0.8 + 0.2 * noise(rng);
    }
    CHECK(wilcoxon_signed_rank(d, c) < 1e-6);
    const double sym = wilcoxon_signed_rank(c, std::vector<double>(60, 0.0));
    CHECK(sym > 0.0);
    CHECK(sym <= 1.0);

    CHECK_THROWS_AS(wilcoxon_signed_rank({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0}), std::invalid_argument);
    CHECK_THROWS_WITH_AS(wilcoxon_signed_rank({1, 2, 3, 4, 5, 6}, {1, 2, 3, 4, 5, 6}), doctest::Contains("all differences zero"),
                         std::invalid_argument);
    CHECK_THROWS_AS(wilcoxon_signed_rank({1, 2, 3, 4, 5, 6}, {1, 2}), std::invalid_argument);
}

TEST_CASE("bounds rows on the toy fixture") {
    ToyDataset ds = make_toy_dataset(ToyConfig{}, 200, 7);
    const auto test = examples_from_pairs(ds.vocab, ds.pairs);
    const BoundRows rows = bounds_rows(test, 11);
    CHECK(rows.upper.self_bleu == doctest::Approx(100.0));
    CHECK(rows.upper.bleu[3] > rows.lower.bleu[3]);
    CHECK(rows.upper.n_examples == 200);
    const BoundRows again = bounds_rows(test, 11);
    CHECK(to_json(again.lower) == to_json(rows.lower));

    // Copy-source overlap comes only from function words, which the paraphrase keeps.
    ToyLanguage lang{ToyConfig{}};
    std::vector<Words> src, para;
    for (const auto& e : test) {
        src.push_back(e.source);
        para.push_back(e.references.front());
    }
    long shared = 0, total = 0;
    for (std::size_t i = 0; i < src.size(); ++i)
        for (std::size_t j = 0; j < src[i].size(); ++j) {
            ++total;
            if (src[i][j] == para[i][j]) {
                ++shared;
                REQUIRE(src[i][j][0] == 'f');
            }
        }
    // Unigram matches are not positional: a word can also meet its synonym's synonym elsewhere.
    CHECK(rows.upper.bleu[0] >= 100.0 * static_cast<double>(shared) / static_cast<double>(total) - 1e-9);
    std::vector<std::vector<Words>> refs;
    for (const auto& p : para) refs.push_back({p});
    CHECK(std::abs(rows.upper.bleu[0] - naive_bleu(src, refs, 1)) < 1e-6);
    CHECK(self_bleu(para, src) < 20.0);
}

TEST_CASE("metrics report JSON and table layout") {
    const std::vector<Words> s{w("a b c d e")};
    const MetricsReport r = compute_metrics(s, single(s), s);
    const auto j = to_json(r);
    for (const char* key : {"bleu1", "bleu2", "bleu3", "bleu4", "self_bleu", "i_bleu", "rouge1", "rouge2", "rougeL", "n_examples"})
        CHECK(j.contains(key));
    const std::string table = metrics_table({{"copy", r}});
    const std::vector<std::string> cols{"B-1", "B-2", "B-3", "B-4", "i-B", "R-1", "R-2", "R-L"};
    std::size_t last = 0;
    for (const auto& c : cols) {
        const std::size_t at = table.find(c);
        REQUIRE(at != std::string::npos);
        CHECK(at > last);
        last = at;
    }
    CHECK(table.find("100.00") != std::string::npos);
    CHECK(table.find("80.00") != std::string::npos);
}
