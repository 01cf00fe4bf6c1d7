#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fedlm/ngram.hpp"
#include "fedlm/softmax.hpp"

using namespace fedlm;

TEST(GroundTruth, RowsAndMarginalNormalize) {
  const GroundTruth gt = generate_ground_truth(3, 7);
  ASSERT_EQ(gt.vocab, 3u);
  for (std::size_t x = 0; x < 3; ++x) {
    const auto p = softmax(gt.logits.row(x));
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
  }
  EXPECT_NEAR(std::accumulate(gt.context_marginal.begin(), gt.context_marginal.end(), 0.0), 1.0, 1e-12);
}

TEST(GroundTruth, Deterministic) {
  EXPECT_EQ(generate_ground_truth(64, 99).logits, generate_ground_truth(64, 99).logits);
  EXPECT_NE(generate_ground_truth(64, 99).logits, generate_ground_truth(64, 100).logits);
}

TEST(GroundTruth, StandardNormalEntries) {
  const GroundTruth gt = generate_ground_truth(256, 1);
  double s = 0, ss = 0;
  for (double v : gt.logits.values()) {
    s += v;
    ss += v * v;
  }
  const double n = static_cast<double>(gt.logits.values().size());
  EXPECT_NEAR(s / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(ss / n, 1.0, 0.02);
}

TEST(GroundTruth, RejectsTinyVocab) {
  EXPECT_THROW(generate_ground_truth(1, 0), std::invalid_argument);
}

TEST(PerturbNode, ZeroDriftIsExactCopy) {
  const GroundTruth gt = generate_ground_truth(16, 2);
  const NodeDistribution d = perturb_node(gt, 0.0, 5);
  EXPECT_EQ(d.logits, gt.logits);
  EXPECT_EQ(d.kl_to_target, 0.0);
  EXPECT_THROW(perturb_node(gt, -0.1, 5), std::invalid_argument);
}

TEST(PerturbNode, KlMatchesHandSum) {
  const GroundTruth gt = generate_ground_truth(3, 7);
  const NodeDistribution d = perturb_node(gt, 0.5, 42);
  double kl = 0.0;
  for (std::size_t x = 0; x < 3; ++x) {
    double zs = 0, zi = 0;
    for (std::size_t y = 0; y < 3; ++y) {
      zs += std::exp(gt.logits.at(x, y));
      zi += std::exp(d.logits.at(x, y));
    }
    for (std::size_t y = 0; y < 3; ++y) {
      const double p = std::exp(gt.logits.at(x, y)) / zs;
      const double q = std::exp(d.logits.at(x, y)) / zi;
      kl += gt.context_marginal[x] * p * std::log(p / q);
    }
  }
  EXPECT_NEAR(d.kl_to_target, kl, 1e-13);
  // logits = gt + 0.5 eps
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NE(d.logits.values()[i], gt.logits.values()[i]);
}

TEST(SampleDataset, EmptyAndTotals) {
  const GroundTruth gt = generate_ground_truth(8, 3);
  const Dataset empty = sample_dataset(gt.logits, gt.context_marginal, 0, 1);
  EXPECT_TRUE(std::all_of(empty.counts.begin(), empty.counts.end(), [](auto c) { return c == 0; }));
  const Dataset d = sample_dataset(gt.logits, gt.context_marginal, 12345, 1);
  EXPECT_EQ(std::accumulate(d.counts.begin(), d.counts.end(), std::uint64_t{0}), 12345u);
  EXPECT_EQ(d.n, 12345u);
}

TEST(SampleDataset, PrefixProperty) {
  // A longer sample extends a shorter one drawn with the same seed.
  const GroundTruth gt = generate_ground_truth(4, 3);
  const Dataset a = sample_dataset(gt.logits, gt.context_marginal, 1, 9);
  const Dataset b = sample_dataset(gt.logits, gt.context_marginal, 2, 9);
  for (std::size_t i = 0; i < a.counts.size(); ++i) EXPECT_LE(a.counts[i], b.counts[i]);
}

TEST(SampleDataset, MarginalChiSquare) {
  const GroundTruth gt = generate_ground_truth(16, 4);
  const std::uint64_t n = 100000;
  const Dataset d = sample_dataset(gt.logits, gt.context_marginal, n, 77);
  double chi2 = 0.0;
  for (std::size_t x = 0; x < 16; ++x) {
    double row = 0;
    for (std::size_t y = 0; y < 16; ++y) row += d.count(x, y);
    const double expect = static_cast<double>(n) * gt.context_marginal[x];
    chi2 += (row - expect) * (row - expect) / expect;
  }
  // chi-square, 15 dof: upper 0.001 quantile is 37.70
  EXPECT_LT(chi2, 37.70);
}

TEST(SampleDataset, ConditionalChiSquare) {
  const GroundTruth gt = generate_ground_truth(8, 4);
  const std::uint64_t n = 200000;
  const Dataset d = sample_dataset(gt.logits, gt.context_marginal, n, 5);
  for (std::size_t x = 0; x < 8; ++x) {
    const auto p = softmax(gt.logits.row(x));
    double row = 0;
    for (std::size_t y = 0; y < 8; ++y) row += d.count(x, y);
    double chi2 = 0;
    for (std::size_t y = 0; y < 8; ++y) {
      const double e = row * p[y];
      chi2 += (d.count(x, y) - e) * (d.count(x, y) - e) / e;
    }
    EXPECT_LT(chi2, 24.32);  // 7 dof, p = 0.001
  }
}

TEST(FitLocalMle, HandArithmetic) {
  Dataset d;
  d.vocab = 3;
  d.counts.assign(9, 0);
  d.counts[0] = 2;  // counts[0] = [2, 0, 0]
  d.n = 2;
  const LocalModel m = fit_local_mle(d, 0.5);
  EXPECT_NEAR(std::exp(m.logits.at(0, 0)), 2.5 / 3.5, 1e-15);
  EXPECT_NEAR(std::exp(m.logits.at(0, 1)), 0.5 / 3.5, 1e-15);
  EXPECT_NEAR(std::exp(m.logits.at(0, 2)), 0.5 / 3.5, 1e-15);
  for (std::size_t y = 0; y < 3; ++y) EXPECT_NEAR(std::exp(m.logits.at(1, y)), 1.0 / 3.0, 1e-15);
  EXPECT_THROW(fit_local_mle(d, 0.0), std::invalid_argument);
}

TEST(FitLocalMle, RowsNormalizedAndPositive) {
  const GroundTruth gt = generate_ground_truth(32, 8);
  const LocalModel m = fit_local_mle(sample_dataset(gt.logits, gt.context_marginal, 500, 2), 0.5);
  for (std::size_t x = 0; x < 32; ++x) {
    double s = 0;
    for (double v : m.logits.row(x)) {
      EXPECT_TRUE(std::isfinite(v));
      s += std::exp(v);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(FitLocalMle, PermutationEquivariant) {
  const std::size_t V = 5;
  const GroundTruth gt = generate_ground_truth(V, 1);
  const Dataset d = sample_dataset(gt.logits, gt.context_marginal, 200, 3);
  const std::size_t perm[V] = {3, 0, 4, 1, 2};
  Dataset p = d;
  for (std::size_t x = 0; x < V; ++x)
    for (std::size_t y = 0; y < V; ++y) p.counts[perm[x] * V + perm[y]] = d.counts[x * V + y];
  const LocalModel a = fit_local_mle(d, 0.5), b = fit_local_mle(p, 0.5);
  for (std::size_t x = 0; x < V; ++x)
    for (std::size_t y = 0; y < V; ++y) EXPECT_DOUBLE_EQ(a.logits.at(x, y), b.logits.at(perm[x], perm[y]));
}

TEST(ExpectedKl, ZeroForTargetAndTwoPointExample) {
  const GroundTruth gt = generate_ground_truth(8, 2);
  EXPECT_EQ(expected_kl(gt, gt.logits), 0.0);

  GroundTruth two;
  two.vocab = 2;
  two.logits = LogitTable(2);
  two.context_marginal = {0.5, 0.5};
  for (std::size_t x = 0; x < 2; ++x) {
    two.logits.at(x, 0) = std::log(0.75);
    two.logits.at(x, 1) = std::log(0.25);
  }
  const double per_context = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  EXPECT_NEAR(expected_kl(two, LogitTable(2, 0.0)), per_context, 1e-14);
}

TEST(ExpectedKl, NonNegativeOnRandomModels) {
  const GroundTruth gt = generate_ground_truth(16, 6);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const LocalModel m = fit_local_mle(sample_dataset(gt.logits, gt.context_marginal, 50 * s, s), 0.5);
    EXPECT_GE(expected_kl(gt, m), 0.0);
  }
}
