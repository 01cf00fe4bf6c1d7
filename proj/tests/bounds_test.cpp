#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fedlm/bounds.hpp"

using namespace fedlm;

TEST(TrainingBound, QuantConstantAndTerm) {
  BoundParams p;
  p.clip = 20.0;
  // c3 = clip^2 / 6
  EXPECT_NEAR(400.0 / 6.0, 66.667, 1e-3);
  p.K = 4;
  p.bits_per_coord = 8;
  const BoundReport r = theorem1_rhs(p);
  EXPECT_NEAR(r.t1_quant, 66.6666666667 / 4.0 / 65536.0, 1e-15);
  EXPECT_NEAR(r.t1_quant, 2.543e-4, 1e-7);
}

TEST(TrainingBound, TermsByHand) {
  BoundParams p;
  p.K = 2;
  p.n = 1000;
  p.m = 500;
  p.V = 64;
  p.d = 64.0 * 63.0;
  p.c1 = 0.5;
  p.c2 = 2.0;
  p.rho = 1.5;
  p.delta = 0.1;
  p.eps_opt = 0.01;
  p.eps_fit = 0.02;
  const BoundReport r = theorem1_rhs(p);
  EXPECT_NEAR(r.t1_statistical, 0.5 * 4032.0 / 2000.0, 1e-14);
  EXPECT_NEAR(r.t1_probe, 2.0 * 1.5 * std::sqrt(64.0 * std::log(640.0) / 500.0), 1e-14);
  EXPECT_NEAR(r.t1_total, r.t1_statistical + r.t1_probe + r.t1_quant + 0.03, 1e-14);
}

TEST(TrainingBound, MonotoneInResources) {
  BoundParams p;
  double last = theorem1_rhs(p).t1_total;
  for (std::uint64_t K : {8u, 16u, 32u}) {
    p.K = K;
    const double now = theorem1_rhs(p).t1_total;
    EXPECT_LT(now, last);
    last = now;
  }
  // one more bit per coordinate quarters the quantization term
  BoundParams q;
  for (double b : {2.0, 5.0, 8.0, 11.0}) {
    q.bits_per_coord = b;
    const double before = theorem1_rhs(q).t1_quant;
    q.bits_per_coord = b + 1;
    EXPECT_NEAR(theorem1_rhs(q).t1_quant, before / 4.0, before * 1e-14);
  }
}

TEST(AltBounds, RatioIsHalfV) {
  for (std::uint64_t V : {2u, 64u, 256u}) {
    BoundParams p;
    p.V = V;
    p.d = static_cast<double>(V * (V - 1));
    const AltBounds a = theorem1_alt_bounds(p);
    EXPECT_NEAR(a.alt_A / theorem1_rhs(p).t1_quant, V / 2.0, 1e-9);
    EXPECT_NEAR(a.alt_B_extra, 20.0 * (400.0 / 3.0) / 16.0 * std::exp2(-24.0), 1e-18);
  }
}

TEST(Heterogeneity, MeanOfNodeKl) {
  const std::vector<double> kl{0.1, 0.2, 0.6};
  EXPECT_NEAR(heterogeneity_drift(kl), 0.3, 1e-15);
  EXPECT_THROW(heterogeneity_drift(std::span<const double>{}), std::invalid_argument);
}

TEST(CoverageBound, DeltaRagHandExample) {
  // f_max = 2, K = 4, v(B_i) = 0.01 each
  BoundParams p;
  p.f_max = 2.0;
  p.s_max = 1.0;
  const double b = 0.5 * std::log2(1.0 / (3.0 * 0.01));  // v(b) = 1/3 2^-2b = 0.01
  p.score_bits = {b, b, b, b};
  EXPECT_NEAR(score_variance_bound(b, 1.0), 0.01, 1e-15);
  EXPECT_NEAR(theorem2_slacks(p).delta_rag, 0.1, 1e-12);
}

TEST(CoverageBound, UniformBitsScaling) {
  BoundParams p;
  p.score_bits.assign(16, 6.0);
  const double v = score_variance_bound(6.0, p.s_max);
  EXPECT_NEAR(theorem2_slacks(p).delta_rag, p.f_max * std::sqrt(v / 16.0), 1e-15);
  p.score_bits.assign(4, 1e6);
  EXPECT_EQ(theorem2_slacks(p).delta_rag, 0.0);
}

TEST(CoverageBound, DeltaFlAndLowerBound) {
  BoundParams p;
  p.f_max = 0.3;
  p.n_cal = 1000;
  p.cal_bits = 4;
  p.delta = 0.05;
  p.c_quantile = 2.0;
  const CoverageSlacks s = theorem2_slacks(p);
  const double fl = 0.3 * std::sqrt(std::log(40.0) / 2000.0) + 0.3 * p.s_max / 16.0;
  EXPECT_NEAR(s.delta_fl, fl, 1e-15);
  EXPECT_NEAR(s.coverage_lb, 0.9 - 1.0 / 1001.0 - s.delta_fl - s.delta_rag, 1e-15);
  EXPECT_NEAR(calibration_resolution(4, 16.0), 1.0, 1e-15);
}

TEST(CoverageBound, VacuousAtLowBandwidth) {
  BoundParams p;
  p.cal_bits = 1;
  p.score_bits = {1, 1, 1, 1};
  EXPECT_LT(theorem2_slacks(p).coverage_lb, 0.0);
}

TEST(Efficiency, HandExample) {
  BoundParams p;
  p.V = 4;
  p.alpha = 0.1;
  p.n_cal = 9;
  p.f_max = 0.0;  // zero slacks
  EXPECT_NEAR(efficiency_ub(p), 4.0, 1e-12);
}

TEST(Pinsker, SpotAndShape) {
  EXPECT_EQ(pinsker_delta_train(0.0, 1.0), 0.0);
  EXPECT_NEAR(pinsker_delta_train(0.02, 1.0), 0.22, 1e-12);
  double last = 0.0;
  for (double kl = 1e-4; kl < 5.0; kl *= 1.5) {
    const double v = pinsker_delta_train(kl, 0.7);
    EXPECT_GT(v, last);
    EXPECT_DOUBLE_EQ(v, 0.7 * (kl + std::sqrt(2.0 * kl)));
    last = v;
  }
  EXPECT_THROW(pinsker_delta_train(-1e-3, 1.0), std::invalid_argument);
}

TEST(FullReport, EndToEndSubtractsTrainSlack) {
  BoundParams p;
  p.f_max = 0.5;
  const BoundReport r = full_report(p, 0.25, 0.02);
  EXPECT_EQ(r.drift_term, 0.25);
  EXPECT_NEAR(r.delta_train, 0.5 * 0.22, 1e-12);
  EXPECT_NEAR(r.coverage_lb_e2e, r.coverage_lb - r.delta_train, 1e-15);
  EXPECT_NEAR(r.setsize_ub, efficiency_ub(p), 1e-12);
}

TEST(BoundParams, Validation) {
  BoundParams p;
  p.K = 0;
  EXPECT_THROW(theorem1_rhs(p), std::invalid_argument);
  p = {};
  p.alpha = 1.0;
  EXPECT_THROW(theorem2_slacks(p), std::invalid_argument);
  p = {};
  p.score_bits.clear();
  EXPECT_THROW(theorem2_slacks(p), std::invalid_argument);
}

TEST(EstimateFmax, UniformDensity) {
  std::mt19937_64 eng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s(200000);
  for (double& v : s) v = u(eng);
  const FmaxEstimate e = estimate_fmax(s, 0.5, 0.2);
  EXPECT_NEAR(e.f_max, 1.0, 0.1);
  EXPECT_GT(e.in_window, 70000u);
}

TEST(EstimateFmax, NormalPeak) {
  std::mt19937_64 eng(2);
  std::normal_distribution<double> z;
  std::vector<double> s(200000);
  for (double& v : s) v = z(eng);
  EXPECT_NEAR(estimate_fmax(s, 0.0, 0.5).f_max, 0.3989, 0.0399);
}

TEST(EstimateFmax, TooFewInWindow) {
  const std::vector<double> s{0.0, 10.0};
  EXPECT_THROW(estimate_fmax(s, 5.0, 0.1), std::invalid_argument);
  EXPECT_THROW(estimate_fmax(s, 5.0, 0.0), std::invalid_argument);
}
