#include "fedlm/softmax.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

namespace fedlm {

double log_sum_exp(std::span<const double> a) {
  if (a.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(a.begin(), a.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double v : a) s += std::exp(v - mx);
  return mx + std::log(s);
}

void softmax(std::span<const double> a, std::span<double> out) {
  assert(a.size() == out.size());
  const double lse = log_sum_exp(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::exp(a[i] - lse);
}

std::vector<double> softmax(std::span<const double> a) {
  std::vector<double> out(a.size());
  softmax(a, out);
  return out;
}

void log_softmax(std::span<const double> a, std::span<double> out) {
  assert(a.size() == out.size());
  const double lse = log_sum_exp(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - lse;
}

double kl_logits(std::span<const double> p_logits, std::span<const double> q_logits) {
  assert(p_logits.size() == q_logits.size());
  const double lp = log_sum_exp(p_logits);
  const double lq = log_sum_exp(q_logits);
  double kl = 0.0;
  for (std::size_t i = 0; i < p_logits.size(); ++i) {
    const double log_p = p_logits[i] - lp;
    const double p = std::exp(log_p);
    if (p == 0.0) continue;
    kl += p * (log_p - (q_logits[i] - lq));
  }
  return std::max(kl, 0.0);
}

double l1_distance(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

double softmax_hessian_trace(std::span<const double> p) {
  // diagonal entry (v, v) of diag(p) - p p^T is p_v - p_v * p_v
  double tr = 0.0;
  for (double pv : p) tr += pv - pv * pv;
  return tr;
}

}  // namespace fedlm
