#pragma once

// Federated conformal prediction over the bigram substrate.
//
// Every node scores every candidate with s_i(x, y) = min(-log P_i(y | x), S_max),
// quantizes the score at B_i bits over [0, S_max] and uplinks it; the hub
// averages the dequantized scores into the swarm score. Calibration pairs
// go through the same scoring path, then each owner node ships a histogram
// of its swarm scores on a 2^B_cal level grid. The hub merges histograms and
// reads off the split-conformal quantile.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "fedlm/ngram.hpp"
#include "fedlm/quant.hpp"
#include "fedlm/transport.hpp"

namespace fedlm {

/// -log(1e-6): scores are truncated at this probability floor.
inline const double kDefaultScoreMax = -std::log(1e-6);

/// Score quantizer over [0, s_max]: a centered clip of s_max / 2, so the
/// step is s_max / 2^bits.
QuantizerConfig score_quantizer(unsigned bits, double s_max);

struct LabeledQuery {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
};

/// n (context, next-token) pairs drawn from the ground truth.
std::vector<LabeledQuery> draw_queries(const GroundTruth& gt, std::size_t n, std::uint64_t seed);

struct ScoreRecord {
  std::uint32_t query = 0;
  std::uint32_t candidate = 0;
  std::vector<double> per_node_scores;  // dequantized, clamped to [0, s_max]
  double swarm_score = 0.0;
};

/// Holds the K node models and their score quantizers. Scoring methods send
/// one payload per node through the bus and return what the hub decodes.
class SwarmScorer {
 public:
  /// `node_logits` are row logits (normalized here); `bits` holds B_i per node.
  SwarmScorer(std::vector<LogitTable> node_logits, std::vector<unsigned> bits, double s_max, std::uint64_t seed);

  std::size_t nodes() const noexcept { return logp_.size(); }
  std::size_t vocab() const noexcept { return vocab_; }
  double s_max() const noexcept { return s_max_; }
  std::span<const unsigned> bits() const noexcept { return bits_; }

  /// Unquantized truncated score of node i.
  double raw_score(std::size_t node, std::uint32_t x, std::uint32_t y) const;
  /// Mean of raw scores over nodes.
  double ideal_swarm_score(std::uint32_t x, std::uint32_t y) const;

  /// All V candidates for context x: each node uplinks V scores on `ch`
  /// tagged `query`. Records are indexed by candidate.
  std::vector<ScoreRecord> score_query(Bus& bus, Channel ch, std::uint32_t query, std::uint32_t x) const;
  /// One candidate: each node uplinks a single score.
  ScoreRecord score_candidate(Bus& bus, Channel ch, std::uint32_t query, std::uint32_t x, std::uint32_t y) const;

 private:
  std::uint64_t dither_seed(Channel ch, std::size_t node, std::uint32_t query) const noexcept;
  std::vector<ScoreRecord> collect(Bus& bus, std::uint32_t query, std::span<const std::uint32_t> candidates) const;

  std::size_t vocab_;
  std::vector<LogitTable> logp_;
  std::vector<unsigned> bits_;
  double s_max_;
  std::uint64_t seed_;
  QuantizerRegistry registry_;
  std::vector<std::uint16_t> config_ids_;
};

struct CalibrationSummary {
  std::uint32_t node = 0;
  unsigned grid_bits = 0;  // B_cal
  std::vector<std::uint32_t> counts_per_level;

  std::uint64_t total() const noexcept;
  std::size_t levels() const noexcept { return counts_per_level.size(); }
};

inline constexpr unsigned kMaxCalibrationBits = 20;
/// node 16, grid_bits 8, count 32.
inline constexpr std::uint64_t kSummaryHeaderBits = 16 + 8 + 32;

/// Level j of the B_cal grid: j * s_max / (2^B_cal - 1).
double calibration_level(unsigned grid_bits, std::uint64_t j, double s_max);

/// Histogram of scores snapped to the nearest grid level, ties upward.
/// Throws std::invalid_argument for B_cal outside [1, 20] or a score
/// outside [0, s_max].
CalibrationSummary summarize_calibration(std::uint32_t node, std::span<const double> scores, unsigned grid_bits,
                                         double s_max);

/// Wire form: header, then one 32-bit count per level.
std::vector<std::uint8_t> serialize(const CalibrationSummary& s);
CalibrationSummary deserialize_summary(std::span<const std::uint8_t> bytes);
/// Envelope charging n_local * B_cal payload bits (the information budget of
/// the summary); the histogram bytes themselves are billed as overhead.
Envelope to_envelope(const CalibrationSummary& s);

struct ConformalQuantile {
  double q_hat = 0.0;
  double alpha = 0.1;
  std::uint64_t n_cal = 0;
  std::uint64_t rank = 0;  // ceil((1 - alpha)(n_cal + 1))
  bool infinite() const noexcept { return std::isinf(q_hat); }
};

/// Split-conformal rank ceil((1 - alpha)(n + 1)).
std::uint64_t conformal_rank(double alpha, std::uint64_t n);

/// Merges the histograms and returns the grid level at the conformal rank,
/// or +inf when the rank exceeds n_cal. Throws std::invalid_argument on an
/// empty calibration set, mixed grids or alpha outside [0, 1).
ConformalQuantile reconstruct_quantile(std::span<const CalibrationSummary> summaries, double alpha, double s_max);

struct PredictionSet {
  std::vector<std::uint32_t> members;
  std::size_t size() const noexcept { return members.size(); }
  bool contains(std::uint32_t y) const noexcept;
};

PredictionSet predict_set(const ConformalQuantile& q, std::span<const ScoreRecord> scores);

struct CoverageResult {
  double coverage = 0.0;
  double mean_set_size = 0.0;
  std::size_t n_test = 0;
};

/// Scores each test query over the full vocabulary on the inference channel
/// and thresholds at q.
CoverageResult evaluate_coverage(const SwarmScorer& scorer, Bus& bus, const ConformalQuantile& q,
                                 std::span<const LabeledQuery> test);

struct FcragConfig {
  std::size_t nodes = 4;         // K
  std::uint64_t samples = 0;     // n per node for fitted scoring models; 0 scores with the ground truth
  double beta = 0.5;
  std::size_t n_cal = 3000;
  unsigned score_bits = 8;       // B_i, uniform over nodes
  unsigned cal_bits = 8;         // B_cal
  double alpha = 0.1;
  std::size_t n_test = 1000;
  double s_max = kDefaultScoreMax;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FcragResult {
  ConformalQuantile quantile;
  CoverageResult coverage;
  BitLedger ledger;
  std::uint64_t calibration_summary_bits = 0;  // payload part of the summaries, n_cal * B_cal
  std::uint64_t calibration_score_bits = 0;    // scoring uplinks for calibration pairs
};

/// Node models fitted from node data; same seeds as the training protocol.
std::vector<LogitTable> fit_node_models(const GroundTruth& gt, std::size_t nodes, std::uint64_t samples, double beta,
                                        std::uint64_t seed);

/// Calibrate on n_cal pairs split evenly across nodes, then test on n_test.
/// Node models come from fit_node_models, or are the ground truth when
/// cfg.samples is 0.
FcragResult run_fcrag(const FcragConfig& cfg, const GroundTruth& gt);
/// Same, reusing fitted node models.
FcragResult run_fcrag(const FcragConfig& cfg, const GroundTruth& gt, std::vector<LogitTable> node_logits);

}  // namespace fedlm
