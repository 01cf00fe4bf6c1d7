#include "fedlm/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fedlm {

void BoundParams::validate() const {
  if (K == 0 || n == 0 || m == 0 || V == 0 || n_cal == 0) throw std::invalid_argument("bounds: counts must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("bounds: delta must be in (0, 1)");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("bounds: alpha must be in (0, 1)");
  if (!(clip > 0.0) || !(s_max > 0.0)) throw std::invalid_argument("bounds: clip and S_max must be positive");
  if (!(bits_per_coord > 0.0) || !(cal_bits > 0.0)) throw std::invalid_argument("bounds: bit widths must be positive");
  if (score_bits.empty()) throw std::invalid_argument("bounds: B_i list is empty");
  for (double b : score_bits) {
    if (!(b > 0.0)) throw std::invalid_argument("bounds: B_i must be positive");
  }
  if (!(d >= 0.0) || !(rho >= 0.0) || !(f_max >= 0.0) || !(c_quantile > 0.0)) {
    throw std::invalid_argument("bounds: d, rho, f_max must be non-negative and c positive");
  }
}

void theorem1_rhs(const BoundParams& p, BoundReport& r) {
  p.validate();
  const double K = static_cast<double>(p.K);
  const double V = static_cast<double>(p.V);
  r.t1_statistical = p.c1 * p.d / (K * static_cast<double>(p.n));
  r.t1_probe = p.c2 * p.rho * std::sqrt(V * std::log(V / p.delta) / static_cast<double>(p.m));
  r.t1_quant = (p.clip * p.clip / 6.0) / K * std::exp2(-2.0 * p.bits_per_coord);
  r.t1_total = r.t1_statistical + r.t1_probe + r.t1_quant + p.eps_opt + p.eps_fit;
}

BoundReport theorem1_rhs(const BoundParams& p) {
  BoundReport r;
  theorem1_rhs(p, r);
  return r;
}

AltBounds theorem1_alt_bounds(const BoundParams& p) {
  p.validate();
  const double K = static_cast<double>(p.K);
  const double c2 = p.clip * p.clip;
  return {c2 / 12.0 * static_cast<double>(p.V) / K * std::exp2(-2.0 * p.bits_per_coord),
          p.clip * (c2 / 3.0) / (K * K) * std::exp2(-3.0 * p.bits_per_coord)};
}

double heterogeneity_drift(std::span<const double> kl_to_target) {
  if (kl_to_target.empty()) throw std::invalid_argument("heterogeneity_drift: no nodes");
  double s = 0.0;
  for (double v : kl_to_target) s += v;
  return s / static_cast<double>(kl_to_target.size());
}

double heterogeneity_drift(std::span<const NodeDistribution> nodes) {
  std::vector<double> kl;
  kl.reserve(nodes.size());
  for (const auto& n : nodes) kl.push_back(n.kl_to_target);
  return heterogeneity_drift(kl);
}

double score_variance_bound(double bits, double s_max) { return s_max * s_max / 3.0 * std::exp2(-2.0 * bits); }

double calibration_resolution(double cal_bits, double s_max) { return s_max * std::exp2(-cal_bits); }

CoverageSlacks theorem2_slacks(const BoundParams& p) {
  p.validate();
  CoverageSlacks s;
  s.delta_fl = p.f_max * std::sqrt(std::log(2.0 / p.delta) / (p.c_quantile * static_cast<double>(p.n_cal))) +
               p.f_max * calibration_resolution(p.cal_bits, p.s_max);
  double v = 0.0;
  for (double b : p.score_bits) v += score_variance_bound(b, p.s_max);
  const double k = static_cast<double>(p.score_bits.size());
  s.delta_rag = p.f_max * std::sqrt(v / (k * k));
  s.coverage_lb = 1.0 - p.alpha - 1.0 / (static_cast<double>(p.n_cal) + 1.0) - s.delta_fl - s.delta_rag;
  return s;
}

double efficiency_ub(const BoundParams& p) {
  const CoverageSlacks s = theorem2_slacks(p);
  return static_cast<double>(p.V) *
         (1.0 - p.alpha + 1.0 / (static_cast<double>(p.n_cal) + 1.0) + s.delta_fl + s.delta_rag);
}

double pinsker_delta_train(double kl_bar, double f_max) {
  if (!(kl_bar >= 0.0)) throw std::invalid_argument("pinsker_delta_train: KL must be non-negative");
  return f_max * (kl_bar + std::sqrt(2.0 * kl_bar));
}

BoundReport full_report(const BoundParams& p, double drift_term, double kl_bar) {
  BoundReport r = theorem1_rhs(p);
  const AltBounds alt = theorem1_alt_bounds(p);
  r.t1_quant_alt_A = alt.alt_A;
  r.t1_quant_alt_B_extra = alt.alt_B_extra;
  r.drift_term = drift_term;
  const CoverageSlacks s = theorem2_slacks(p);
  r.delta_fl = s.delta_fl;
  r.delta_rag = s.delta_rag;
  r.coverage_lb = s.coverage_lb;
  r.setsize_ub = efficiency_ub(p);
  r.delta_train = pinsker_delta_train(kl_bar, p.f_max);
  r.coverage_lb_e2e = r.coverage_lb - r.delta_train;
  return r;
}

FmaxEstimate estimate_fmax(std::span<const double> scores, double q_star, double radius, std::size_t min_in_window) {
  if (!(radius > 0.0)) throw std::invalid_argument("estimate_fmax: radius must be positive");
  if (scores.empty()) throw std::invalid_argument("estimate_fmax: no scores");
  constexpr int kBins = 20;  // 2r / (r/10)
  const double width = radius / 10.0;
  const double lo = q_star - radius;
  std::vector<std::size_t> bins(kBins, 0);
  FmaxEstimate est;
  for (double s : scores) {
    if (s < lo || s >= q_star + radius) continue;
    const int b = std::min(kBins - 1, static_cast<int>((s - lo) / width));
    ++bins[b];
    ++est.in_window;
  }
  if (est.in_window < min_in_window) {
    throw std::invalid_argument("estimate_fmax: only " + std::to_string(est.in_window) +
                                " scores in the window; widen the radius");
  }
  est.degenerate = est.in_window == 0;
  const std::size_t peak = *std::max_element(bins.begin(), bins.end());
  est.f_max = static_cast<double>(peak) / (static_cast<double>(scores.size()) * width);
  return est;
}

}  // namespace fedlm
