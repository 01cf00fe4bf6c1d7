#pragma once

// Closed-form bound calculators for the training and inference protocols.
// Everything here is a pure function of its parameters.

#include <cstdint>
#include <span>
#include <vector>

#include "fedlm/ngram.hpp"

namespace fedlm {

struct BoundParams {
  // training
  std::uint64_t K = 4;
  std::uint64_t n = 3000;
  std::uint64_t m = 3000;
  std::uint64_t V = 256;
  double d = 256.0 * 255.0;   // parameter count; V(V-1) for a bigram table
  double bits_per_coord = 8;  // B / V
  double rho = 1.0;
  double delta = 0.05;
  double c1 = 1.0;
  double c2 = 1.0;
  double clip = 20.0;
  double eps_opt = 0.0;
  double eps_fit = 0.0;

  // inference
  double alpha = 0.1;
  std::uint64_t n_cal = 3000;
  std::vector<double> score_bits{8, 8, 8, 8};  // B_i, one per node
  double cal_bits = 8;
  double s_max = 13.815510557964274;
  double f_max = 1.0;
  double c_quantile = 1.0;

  void validate() const;
};

struct BoundReport {
  double t1_statistical = 0.0;
  double t1_probe = 0.0;
  double t1_quant = 0.0;
  double t1_total = 0.0;
  double t1_quant_alt_A = 0.0;
  double t1_quant_alt_B_extra = 0.0;
  double drift_term = 0.0;
  double delta_fl = 0.0;
  double delta_rag = 0.0;
  double coverage_lb = 0.0;
  double setsize_ub = 0.0;
  double delta_train = 0.0;
  double coverage_lb_e2e = 0.0;
};

/// Fills the t1_* fields.
void theorem1_rhs(const BoundParams& p, BoundReport& r);
BoundReport theorem1_rhs(const BoundParams& p);

struct AltBounds {
  double alt_A = 0.0;        // (clip^2/12)(V/K) 2^(-2b)
  double alt_B_extra = 0.0;  // clip (clip^2/3) K^-2 2^(-3b)
};
AltBounds theorem1_alt_bounds(const BoundParams& p);

/// (1/K) sum_i KL(P* || P_i).
double heterogeneity_drift(std::span<const NodeDistribution> nodes);
double heterogeneity_drift(std::span<const double> kl_to_target);

/// Per-node score quantization variance bound (S_max^2 / 3) 2^(-2B).
double score_variance_bound(double bits, double s_max);
/// Calibration grid resolution S_max 2^(-B_cal).
double calibration_resolution(double cal_bits, double s_max);

struct CoverageSlacks {
  double delta_fl = 0.0;
  double delta_rag = 0.0;
  double coverage_lb = 0.0;
};
CoverageSlacks theorem2_slacks(const BoundParams& p);

double efficiency_ub(const BoundParams& p);

/// f_max (kl + sqrt(2 kl)). Throws on negative kl.
double pinsker_delta_train(double kl_bar, double f_max);

/// Every field; delta_train uses `kl_bar` and coverage_lb_e2e subtracts it.
BoundReport full_report(const BoundParams& p, double drift_term = 0.0, double kl_bar = 0.0);

struct FmaxEstimate {
  double f_max = 0.0;
  std::size_t in_window = 0;
  bool degenerate = false;  // no mass in the window
};

/// Largest histogram density over [q* - r, q* + r] with bin width r / 10.
/// Throws std::invalid_argument unless at least `min_in_window` scores fall
/// in the window (pass 0 to allow the degenerate empty case).
FmaxEstimate estimate_fmax(std::span<const double> scores, double q_star, double radius,
                           std::size_t min_in_window = 100);

}  // namespace fedlm
