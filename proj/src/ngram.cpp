#include "fedlm/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "fedlm/rng.hpp"
#include "fedlm/softmax.hpp"

namespace fedlm {

GroundTruth generate_ground_truth(std::size_t vocab, std::uint64_t seed) {
  if (vocab < 2) {
    throw std::invalid_argument("generate_ground_truth: vocabulary size must be >= 2, got " +
                                std::to_string(vocab));
  }
  GroundTruth gt;
  gt.vocab = vocab;
  gt.logits = LogitTable(vocab);
  Engine eng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t x = 0; x < vocab; ++x) {
    for (double& v : gt.logits.row(x)) v = normal(eng);
  }
  gt.context_marginal.assign(vocab, 1.0 / static_cast<double>(vocab));
  return gt;
}

NodeDistribution perturb_node(const GroundTruth& gt, double drift, std::uint64_t seed) {
  if (!(drift >= 0.0)) {
    throw std::invalid_argument("perturb_node: drift must be non-negative");
  }
  NodeDistribution node;
  node.drift = drift;
  node.logits = gt.logits;
  if (drift == 0.0) {
    node.kl_to_target = 0.0;
    return node;
  }
  Engine eng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t x = 0; x < gt.vocab; ++x) {
    for (double& v : node.logits.row(x)) v += drift * normal(eng);
  }
  node.kl_to_target = expected_kl(gt, node.logits);
  return node;
}

RowSampler::RowSampler(const LogitTable& logits) : vocab_(logits.vocab()), cdf_(vocab_ * vocab_) {
  std::vector<double> p(vocab_);
  for (std::size_t x = 0; x < vocab_; ++x) {
    softmax(logits.row(x), p);
    double acc = 0.0;
    double* out = cdf_.data() + x * vocab_;
    for (std::size_t y = 0; y < vocab_; ++y) {
      acc += p[y];
      out[y] = acc;
    }
    out[vocab_ - 1] = 1.0;
  }
}

std::size_t RowSampler::sample(std::size_t x, double u) const {
  const double* first = cdf_.data() + x * vocab_;
  const double* it = std::upper_bound(first, first + vocab_, u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - first), vocab_ - 1);
}

CategoricalSampler::CategoricalSampler(std::span<const double> probs) : cdf_(probs.size()) {
  if (probs.empty()) throw std::invalid_argument("CategoricalSampler: empty distribution");
  std::partial_sum(probs.begin(), probs.end(), cdf_.begin());
  const double total = cdf_.back();
  if (!(total > 0.0)) throw std::invalid_argument("CategoricalSampler: zero total mass");
  for (double& c : cdf_) c /= total;
  cdf_.back() = 1.0;
}

std::size_t CategoricalSampler::sample(double u) const {
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
}

Dataset sample_dataset(const LogitTable& dist, std::span<const double> marginal, std::uint64_t n,
                       std::uint64_t seed) {
  const std::size_t vocab = dist.vocab();
  if (marginal.size() != vocab) {
    throw std::invalid_argument("sample_dataset: marginal size does not match vocabulary");
  }
  Dataset data;
  data.vocab = vocab;
  data.counts.assign(vocab * vocab, 0);
  data.n = n;
  if (n == 0) return data;

  const RowSampler rows(dist);
  const CategoricalSampler contexts(marginal);
  Engine eng(seed);
  for (std::uint64_t j = 0; j < n; ++j) {
    const std::size_t x = contexts.sample(to_unit(eng()));
    const std::size_t y = rows.sample(x, to_unit(eng()));
    ++data.counts[x * vocab + y];
  }
  return data;
}

LocalModel fit_local_mle(const Dataset& data, double beta) {
  if (!(beta > 0.0)) {
    throw std::invalid_argument("fit_local_mle: smoothing constant must be > 0");
  }
  const std::size_t vocab = data.vocab;
  LocalModel model;
  model.beta = beta;
  model.logits = LogitTable(vocab);

  // log(c + beta) for the small counts that dominate sparse tables
  constexpr std::uint32_t kCached = 256;
  std::vector<double> log_count(kCached);
  for (std::uint32_t c = 0; c < kCached; ++c) log_count[c] = std::log(c + beta);

  for (std::size_t x = 0; x < vocab; ++x) {
    const std::uint32_t* c = data.counts.data() + x * vocab;
    std::uint64_t row_total = 0;
    for (std::size_t y = 0; y < vocab; ++y) row_total += c[y];
    const double log_den = std::log(static_cast<double>(row_total) + beta * static_cast<double>(vocab));
    auto out = model.logits.row(x);
    for (std::size_t y = 0; y < vocab; ++y) {
      const double lc = c[y] < kCached ? log_count[c[y]] : std::log(c[y] + beta);
      out[y] = lc - log_den;
    }
  }
  return model;
}

double expected_kl(std::span<const double> marginal, const LogitTable& target, const LogitTable& model) {
  if (target.vocab() != model.vocab() || marginal.size() != target.vocab()) {
    throw std::invalid_argument("expected_kl: shape mismatch");
  }
  double total = 0.0;
  for (std::size_t x = 0; x < target.vocab(); ++x) {
    if (marginal[x] == 0.0) continue;
    total += marginal[x] * kl_logits(target.row(x), model.row(x));
  }
  return total;
}

double expected_kl(const GroundTruth& target, const LogitTable& model) {
  return expected_kl(target.context_marginal, target.logits, model);
}

double expected_kl(const GroundTruth& target, const LocalModel& model) {
  return expected_kl(target, model.logits);
}

}  // namespace fedlm
