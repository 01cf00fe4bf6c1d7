#pragma once

#include <span>
#include <vector>

namespace fedlm {

/// log(sum(exp(a))) computed with the max shift.
double log_sum_exp(std::span<const double> a);

/// Writes softmax(a) into out (same length as a).
void softmax(std::span<const double> a, std::span<double> out);
std::vector<double> softmax(std::span<const double> a);

/// Writes a - log_sum_exp(a) into out.
void log_softmax(std::span<const double> a, std::span<double> out);

/// KL(softmax(p_logits) || softmax(q_logits)).
double kl_logits(std::span<const double> p_logits, std::span<const double> q_logits);

/// sum |a_i - b_i|.
double l1_distance(std::span<const double> a, std::span<const double> b);

/// Trace of diag(p) - p p^T, summed entry by entry from the matrix diagonal.
double softmax_hessian_trace(std::span<const double> p);

}  // namespace fedlm
