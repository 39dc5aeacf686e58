#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "pedkd/decode_metrics.hpp"
#include "pedkd/error.hpp"
#include "pedkd/rng.hpp"

using namespace pedkd;

namespace {

using Labels = std::vector<std::size_t>;

Tensor random_probs(std::size_t n, std::size_t c, Rng& rng) {
  Tensor t({n, c});
  for (auto& v : t.data()) v = rng.uniform(0.0, 1.0);
  return t;
}

Tensor random_truth(std::size_t n, std::size_t c, Rng& rng) {
  Tensor t({n, c});
  for (auto& v : t.data()) v = rng.uniform(0.0, 1.0) < 0.3 ? 1.0 : 0.0;
  return t;
}

}  // namespace

TEST(Decode, ThresholdExamples) {
  const std::vector<double> p{0.9, 0.2, 0.1};
  EXPECT_EQ(decode_labels(p, 0.15).labels, (Labels{0, 1}));
  EXPECT_EQ(decode_labels(p, 0.0).labels, (Labels{0, 1, 2}));
  EXPECT_TRUE(decode_labels(p, std::nextafter(0.9, 1.0)).labels.empty());
}

TEST(Decode, OrdersByProbabilityThenIndex) {
  const std::vector<double> p{0.3, 0.8, 0.3, 0.5};
  EXPECT_EQ(decode_labels(p, 0.2).labels, (Labels{1, 3, 0, 2}));
}

TEST(Decode, MonotoneOverGrid) {
  Rng rng(3);
  const Tensor probs = random_probs(40, 12, rng);
  const auto grid = threshold_grid();
  ASSERT_EQ(grid.size(), 99u);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    EXPECT_LE(mean_decoded_length(probs, grid[i]), mean_decoded_length(probs, grid[i - 1]));
    for (std::size_t r = 0; r < 40; ++r) {
      const std::span<const double> row(probs.ptr() + r * 12, 12);
      auto hi = decode_labels(row, grid[i]).labels, lo = decode_labels(row, grid[i - 1]).labels;
      std::sort(hi.begin(), hi.end());
      std::sort(lo.begin(), lo.end());
      EXPECT_TRUE(std::includes(lo.begin(), lo.end(), hi.begin(), hi.end()));
    }
  }
}

TEST(TuneThreshold, ConstructedCaseSelectsPointOneFive) {
  const Tensor probs({1, 4}, std::vector<double>{0.9, 0.155, 0.145, 0.05});
  const Tensor refs({1, 4}, std::vector<double>{1, 1, 0, 0});
  EXPECT_DOUBLE_EQ(tune_threshold(probs, refs), 0.15);
}

TEST(TuneThreshold, EmptyReferencesPushToTopOfGrid) {
  Tensor probs({1, 99});
  for (std::size_t i = 0; i < 99; ++i) probs[i] = (static_cast<double>(i) + 1.5) / 100.0;
  EXPECT_DOUBLE_EQ(tune_threshold(probs, Tensor({1, 99})), 0.99);
}

TEST(TuneThreshold, TiesGoToSmallerThreshold) {
  const Tensor probs({1, 2}, std::vector<double>{0.9, 0.5});
  const Tensor refs({1, 2}, std::vector<double>{1, 0});
  EXPECT_DOUBLE_EQ(tune_threshold(probs, refs), 0.51);
}

TEST(TuneThreshold, ShapeMismatchRejected) {
  EXPECT_THROW(tune_threshold(Tensor({2, 3}), Tensor({2, 4})), ContractError);
}

TEST(Topk, HandCases) {
  const std::vector<double> s{0.9, 0.5, 0.1, 0.4};
  auto one = topk_prf(s, std::vector<double>{1, 0, 1, 0}, 1);
  EXPECT_DOUBLE_EQ(one.precision, 1.0);
  EXPECT_DOUBLE_EQ(one.recall, 0.5);
  EXPECT_NEAR(one.f1, 2.0 / 3.0, 1e-15);
  auto exact = topk_prf(s, std::vector<double>{1, 1, 0, 0}, 2);
  EXPECT_EQ(exact.precision, 1.0);
  EXPECT_EQ(exact.recall, 1.0);
  EXPECT_EQ(exact.f1, 1.0);
  auto none = topk_prf(s, std::vector<double>{0, 0, 1, 0}, 2);
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.recall, 0.0);
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_THROW(topk_prf(s, std::vector<double>{1, 0, 0, 0}, 5), ContractError);
}

TEST(Topk, TiesRankSmallerIndexFirst) {
  auto r = topk_prf(std::vector<double>{0.5, 0.5, 0.5}, std::vector<double>{0, 1, 0}, 1);
  EXPECT_EQ(r.precision, 0.0);
  r = topk_prf(std::vector<double>{0.5, 0.5, 0.5}, std::vector<double>{1, 0, 0}, 1);
  EXPECT_EQ(r.precision, 1.0);
}

TEST(Topk, RecallNonDecreasingInK) {
  Rng rng(5);
  const Tensor s = random_probs(30, 10, rng), t = random_truth(30, 10, rng);
  double prev = 0.0;
  for (std::size_t k = 1; k <= 10; ++k) {
    const double r = topk_prf(s, t, k).prf.recall;
    EXPECT_GE(r, prev);
    prev = r;
  }
  EXPECT_NEAR(prev, 1.0, 1e-12);
}

TEST(Topk, MacroAverageSkipsEmptyTruth) {
  const Tensor s({3, 3}, std::vector<double>{0.9, 0.1, 0.2, 0.1, 0.9, 0.2, 0.5, 0.4, 0.3});
  const Tensor t({3, 3}, std::vector<double>{1, 0, 0, 1, 0, 1, 0, 0, 0});
  const auto sum = topk_prf(s, t, 1);
  EXPECT_EQ(sum.samples, 2u);
  EXPECT_EQ(sum.skipped, 1u);
  EXPECT_DOUBLE_EQ(sum.prf.precision, 0.5);
  EXPECT_DOUBLE_EQ(sum.prf.recall, 0.5);
  EXPECT_DOUBLE_EQ(sum.prf.f1, 0.5);
}

TEST(F1, ZeroWhenPrecisionAndRecallAreZero) { EXPECT_EQ(f1_score(0.0, 0.0), 0.0); }

TEST(Bleu, HandCases) {
  EXPECT_NEAR(unigram_bleu({{"a", "b"}}, {{"a", "c"}}), 0.5, 1e-12);
  EXPECT_NEAR(unigram_bleu({{"a"}}, {{"a", "b"}}), std::exp(1.0 - 2.0), 1e-12);
  EXPECT_NEAR(unigram_bleu({{"a"}}, {{"a", "b"}}), 0.367879, 1e-6);
  EXPECT_EQ(unigram_bleu({{"x", "y"}, {"z"}}, {{"x", "y"}, {"z"}}), 1.0);
  EXPECT_EQ(unigram_bleu({{}}, {{"a"}}), 0.0);
  EXPECT_THROW(unigram_bleu({{"a"}}, {}), ContractError);
}

TEST(Bleu, PhraseIsOneUnitAndCountsAreClipped) {
  EXPECT_NEAR(unigram_bleu({{"using cellphone"}}, {{"using cellphone"}}), 1.0, 1e-15);
  EXPECT_NEAR(unigram_bleu({{"using", "cellphone"}}, {{"using cellphone"}}), 0.0, 1e-15);
  EXPECT_NEAR(unigram_bleu({{"a", "a", "a"}}, {{"a", "b", "c"}}), 1.0 / 3.0, 1e-15);
}

TEST(Bleu, BoundedAndOrderInvariant) {
  Rng rng(9);
  const std::vector<std::string> words{"a", "b", "c", "d", "e"};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<std::string>> cand(3), ref(3);
    for (std::size_t i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) cand[i].push_back(words[rng.below(5)]);
      for (int j = 0; j < 2; ++j) ref[i].push_back(words[rng.below(5)]);
    }
    const double b = unigram_bleu(cand, ref);
    EXPECT_GE(b, 0.0);
    EXPECT_LE(b, 1.0);
    auto shuffled = cand;
    for (auto& c : shuffled) std::reverse(c.begin(), c.end());
    EXPECT_EQ(unigram_bleu(shuffled, ref), b);
  }
}

TEST(Bleu, TensorFormUsesDecodedLabels) {
  const Tensor probs({2, 3}, std::vector<double>{0.9, 0.6, 0.1, 0.8, 0.2, 0.1});
  const Tensor refs({2, 3}, std::vector<double>{1, 0, 1, 1, 0, 0});
  EXPECT_NEAR(unigram_bleu(probs, refs, 0.5), 2.0 / 3.0, 1e-12);
}

TEST(Report, FormatIsStable) {
  const Tensor probs({1, 3}, std::vector<double>{0.9, 0.6, 0.1});
  const Tensor refs({1, 3}, std::vector<double>{1, 0, 1});
  const auto r = evaluate_text(probs, refs, 0.5);
  const std::string text = format_report(r, "x.");
  EXPECT_NE(text.find("x.top1_precision=1.000000\n"), std::string::npos);
  EXPECT_NE(text.find("x.bleu=0.500000\n"), std::string::npos);
  EXPECT_EQ(text, format_report(evaluate_text(probs, refs, 0.5), "x."));
}
