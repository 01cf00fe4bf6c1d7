#pragma once

// Federated probe-logit distillation over the bigram substrate.
//
// Each round every node refits its Laplace MLE, evaluates normalized
// log-probabilities on the public probe contexts, quantizes one vector per
// probe and uplinks it. The hub averages the dequantized vectors per probe
// and distills by assignment: a probed context's student row is the mean
// of its averaged probe vectors; unprobed contexts stay uniform.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedlm/ngram.hpp"
#include "fedlm/quant.hpp"
#include "fedlm/transport.hpp"

namespace fedlm {

/// Raised when the hub receives an incomplete or inconsistent round.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ProbeSet {
  std::vector<std::uint32_t> contexts;
  std::size_t size() const noexcept { return contexts.size(); }
};

/// m contexts drawn i.i.d. from the probe marginal q.
ProbeSet draw_probe_set(std::span<const double> q, std::size_t m, std::uint64_t seed);

struct FpldConfig {
  std::size_t nodes = 4;            // K
  std::uint64_t samples = 3000;     // n per node
  std::size_t probes = 3000;        // m
  std::size_t rounds = 1;           // T
  std::size_t local_epochs = 1;     // E; the closed-form fit ignores it
  QuantizerConfig quantizer{8, 20.0, DitherMode::dithered_iid};
  double beta = 0.5;
  double drift = 0.0;
  std::uint64_t seed = 0;           // replicate seed; roles are derived from it
  unsigned threads = 1;             // nodes fitted concurrently per block

  void validate() const;
};

struct Student {
  LogitTable logits;
  std::vector<std::uint8_t> covered;  // 1 when the context appeared in the probe set
};

struct FpldDiagnostics {
  double student_kl = 0.0;              // expected KL(P* || student)
  double quantization_kl = 0.0;         // mean over probes of KL(avg ideal || avg quantized), last round
  double uncovered_kl = 0.0;            // part of student_kl from unprobed contexts
  std::size_t uncovered_contexts = 0;
  std::uint64_t saturated_coords = 0;   // clamped coordinates over all rounds
  std::vector<double> node_kl_to_target;
  double drift_term = 0.0;              // mean of node_kl_to_target
  bool rounds_identical = true;         // every round reproduced round 1's student
};

struct FpldResult {
  Student student;
  BitLedger ledger;
  FpldDiagnostics diagnostics;
};

FpldResult run_fpld(const FpldConfig& cfg, const GroundTruth& gt);

/// Running per-probe sums of dequantized vectors. Each node must report its
/// probes in order 0..m-1.
class ProbeAggregator {
 public:
  ProbeAggregator(std::size_t nodes, std::size_t probes, std::size_t vocab);

  /// Adds node's next probe vector.
  void add(NodeId node, std::span<const double> dequantized);
  void add(NodeId node, const QuantizedPayload& payload);

  /// Throws ProtocolError unless every node reported every probe.
  void check_complete() const;
  /// Mean over nodes for probe l. Valid after check_complete().
  std::vector<double> averaged(std::size_t l) const;
  void averaged_into(std::size_t l, std::span<double> out) const;

  std::size_t nodes() const noexcept { return reported_.size(); }
  std::size_t probes() const noexcept { return probes_; }
  std::size_t vocab() const noexcept { return vocab_; }

 private:
  std::size_t probes_;
  std::size_t vocab_;
  std::vector<double> sums_;
  std::vector<std::size_t> reported_;
  std::vector<double> scratch_;
};

/// Coordinate-wise mean of dequantized vectors; payloads[i][l] is node i's
/// vector for probe l. Throws ProtocolError on a missing report.
std::vector<std::vector<double>> aggregate_probe_logits(std::span<const std::vector<QuantizedPayload>> payloads);

/// Mean over rows of KL(softmax(ideal[l]) || softmax(quantized[l])).
double measure_quantization_kl(std::span<const std::vector<double>> ideal,
                               std::span<const std::vector<double>> quantized);

/// Student from per-probe averaged rows, with probes of a repeated context
/// averaged together and unprobed rows uniform.
Student distill(const ProbeSet& probes, std::span<const std::vector<double>> averaged, std::size_t vocab);

}  // namespace fedlm
