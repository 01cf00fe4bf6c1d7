#pragma once

// Bigram (context length 1) substrate: ground truth, per-node distributions,
// sampling, Laplace-smoothed local fits and exact expected-KL evaluation.

#include <cstdint>
#include <span>
#include <vector>

namespace fedlm {

/// Square V x V table of logits, row-major; row x is the logit vector over
/// next tokens given context x.
class LogitTable {
 public:
  LogitTable() = default;
  explicit LogitTable(std::size_t vocab, double fill = 0.0)
      : vocab_(vocab), values_(vocab * vocab, fill) {}

  std::size_t vocab() const noexcept { return vocab_; }
  std::span<double> row(std::size_t x) noexcept { return {values_.data() + x * vocab_, vocab_}; }
  std::span<const double> row(std::size_t x) const noexcept {
    return {values_.data() + x * vocab_, vocab_};
  }
  double& at(std::size_t x, std::size_t y) noexcept { return values_[x * vocab_ + y]; }
  double at(std::size_t x, std::size_t y) const noexcept { return values_[x * vocab_ + y]; }
  std::span<const double> values() const noexcept { return values_; }

  friend bool operator==(const LogitTable&, const LogitTable&) = default;

 private:
  std::size_t vocab_ = 0;
  std::vector<double> values_;
};

struct GroundTruth {
  std::size_t vocab = 0;
  LogitTable logits;
  std::vector<double> context_marginal;
};

struct NodeDistribution {
  LogitTable logits;
  double drift = 0.0;
  double kl_to_target = 0.0;
};

/// Pair counts; counts[x * V + y] is the number of (x, y) pairs.
struct Dataset {
  std::size_t vocab = 0;
  std::vector<std::uint32_t> counts;
  std::uint64_t n = 0;

  std::uint32_t count(std::size_t x, std::size_t y) const { return counts[x * vocab + y]; }
};

/// Laplace-smoothed fit. `logits` holds normalized log-probabilities.
struct LocalModel {
  LogitTable logits;
  double beta = 0.0;
};

/// Standard-normal logits per entry, uniform context marginal.
/// Throws std::invalid_argument when vocab < 2.
GroundTruth generate_ground_truth(std::size_t vocab, std::uint64_t seed);

/// logits = gt.logits + drift * eps, eps i.i.d. N(0, 1). drift = 0 copies gt.
NodeDistribution perturb_node(const GroundTruth& gt, double drift, std::uint64_t seed);

/// n pairs with x ~ marginal and y ~ softmax(dist row x). Draws two uniforms
/// per pair from one stream, so a larger n extends a smaller one.
Dataset sample_dataset(const LogitTable& dist, std::span<const double> marginal, std::uint64_t n,
                       std::uint64_t seed);

/// P(y|x) = (c[x][y] + beta) / (c[x] + beta V). Throws when beta <= 0.
LocalModel fit_local_mle(const Dataset& data, double beta);

/// sum_x marginal[x] KL(softmax(target row x) || softmax(model row x)).
/// Returns +inf when the model puts zero mass where the target does not.
double expected_kl(std::span<const double> marginal, const LogitTable& target, const LogitTable& model);
double expected_kl(const GroundTruth& target, const LogitTable& model);
double expected_kl(const GroundTruth& target, const LocalModel& model);

/// Per-context cumulative distribution of softmax rows, for inverse-CDF sampling.
class RowSampler {
 public:
  explicit RowSampler(const LogitTable& logits);
  std::size_t sample(std::size_t x, double u) const;
  std::size_t vocab() const noexcept { return vocab_; }

 private:
  std::size_t vocab_;
  std::vector<double> cdf_;
};

/// Inverse-CDF draw from a probability vector.
class CategoricalSampler {
 public:
  explicit CategoricalSampler(std::span<const double> probs);
  std::size_t sample(double u) const;

 private:
  std::vector<double> cdf_;
};

}  // namespace fedlm
