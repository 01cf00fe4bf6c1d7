#include "fedlm/fcrag.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "fedlm/rng.hpp"
#include "fedlm/softmax.hpp"

namespace fedlm {

QuantizerConfig score_quantizer(unsigned bits, double s_max) {
  QuantizerConfig cfg{bits, s_max / 2.0, DitherMode::dithered_iid};
  cfg.validate();
  return cfg;
}

std::vector<LabeledQuery> draw_queries(const GroundTruth& gt, std::size_t n, std::uint64_t seed) {
  const CategoricalSampler contexts(gt.context_marginal);
  const RowSampler rows(gt.logits);
  Engine eng(seed);
  std::vector<LabeledQuery> out(n);
  for (auto& q : out) {
    q.x = static_cast<std::uint32_t>(contexts.sample(to_unit(eng())));
    q.y = static_cast<std::uint32_t>(rows.sample(q.x, to_unit(eng())));
  }
  return out;
}

// ---------------------------------------------------------------------------

SwarmScorer::SwarmScorer(std::vector<LogitTable> node_logits, std::vector<unsigned> bits, double s_max,
                         std::uint64_t seed)
    : vocab_(0), logp_(std::move(node_logits)), bits_(std::move(bits)), s_max_(s_max), seed_(seed) {
  if (logp_.empty()) throw std::invalid_argument("scorer: no nodes");
  if (bits_.size() != logp_.size()) throw std::invalid_argument("scorer: one B_i per node required");
  if (!(s_max_ > 0.0) || !std::isfinite(s_max_)) throw std::invalid_argument("scorer: S_max must be positive");
  vocab_ = logp_.front().vocab();
  for (auto& table : logp_) {
    if (table.vocab() != vocab_) throw std::invalid_argument("scorer: node vocabularies differ");
    for (std::size_t x = 0; x < vocab_; ++x) {
      auto row = table.row(x);
      const double lse = log_sum_exp(row);
      for (double& v : row) v -= lse;
    }
  }
  for (unsigned b : bits_) config_ids_.push_back(registry_.add(score_quantizer(b, s_max_)));
}

double SwarmScorer::raw_score(std::size_t node, std::uint32_t x, std::uint32_t y) const {
  return std::clamp(-logp_[node].at(x, y), 0.0, s_max_);
}

double SwarmScorer::ideal_swarm_score(std::uint32_t x, std::uint32_t y) const {
  double s = 0.0;
  for (std::size_t i = 0; i < logp_.size(); ++i) s += raw_score(i, x, y);
  return s / static_cast<double>(logp_.size());
}

std::uint64_t SwarmScorer::dither_seed(Channel ch, std::size_t node, std::uint32_t query) const noexcept {
  return derive_seed(seed_, {tag(SeedRole::score_dither), static_cast<std::uint64_t>(ch), node, query});
}

std::vector<ScoreRecord> SwarmScorer::collect(Bus& bus, std::uint32_t query,
                                              std::span<const std::uint32_t> candidates) const {
  std::vector<Message> inbox = bus.drain_hub();
  std::stable_sort(inbox.begin(), inbox.end(), [](const Message& a, const Message& b) { return a.from < b.from; });
  if (inbox.size() != logp_.size()) {
    throw std::runtime_error("scorer: expected " + std::to_string(logp_.size()) + " score reports, got " +
                             std::to_string(inbox.size()));
  }
  std::vector<ScoreRecord> records(candidates.size());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    records[c].query = query;
    records[c].candidate = candidates[c];
    records[c].per_node_scores.resize(logp_.size());
  }
  std::vector<double> deq(candidates.size());
  const double half = s_max_ / 2.0;
  for (const Message& msg : inbox) {
    const QuantizedPayload p = deserialize_payload(msg.body.bytes, registry_);
    if (p.num_coords != candidates.size()) throw DecodeError("scorer: score vector has the wrong length");
    dequantize_into(p, deq);
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      records[c].per_node_scores[msg.from] = std::clamp(deq[c] + half, 0.0, s_max_);
    }
  }
  for (auto& r : records) {
    double s = 0.0;
    for (double v : r.per_node_scores) s += v;
    r.swarm_score = s / static_cast<double>(r.per_node_scores.size());
  }
  return records;
}

std::vector<ScoreRecord> SwarmScorer::score_query(Bus& bus, Channel ch, std::uint32_t query, std::uint32_t x) const {
  std::vector<double> centered(vocab_);
  const double half = s_max_ / 2.0;
  for (std::size_t i = 0; i < logp_.size(); ++i) {
    for (std::uint32_t y = 0; y < vocab_; ++y) centered[y] = raw_score(i, x, y) - half;
    QuantizerConfig cfg = registry_.at(config_ids_[i]);
    bus.uplink(static_cast<NodeId>(i), ch, query, quantize(centered, cfg, dither_seed(ch, i, query), config_ids_[i]));
  }
  std::vector<std::uint32_t> all(vocab_);
  for (std::uint32_t y = 0; y < vocab_; ++y) all[y] = y;
  return collect(bus, query, all);
}

ScoreRecord SwarmScorer::score_candidate(Bus& bus, Channel ch, std::uint32_t query, std::uint32_t x,
                                         std::uint32_t y) const {
  const double half = s_max_ / 2.0;
  for (std::size_t i = 0; i < logp_.size(); ++i) {
    const double centered = raw_score(i, x, y) - half;
    bus.uplink(static_cast<NodeId>(i), ch, query,
               quantize(std::span<const double>(&centered, 1), registry_.at(config_ids_[i]),
                        dither_seed(ch, i, query), config_ids_[i]));
  }
  const std::uint32_t only[1] = {y};
  return std::move(collect(bus, query, only).front());
}

// ---------------------------------------------------------------------------

std::uint64_t CalibrationSummary::total() const noexcept {
  std::uint64_t t = 0;
  for (auto c : counts_per_level) t += c;
  return t;
}

namespace {

void check_grid_bits(unsigned grid_bits) {
  if (grid_bits == 0 || grid_bits > kMaxCalibrationBits) {
    throw std::invalid_argument("B_cal must be in [1, " + std::to_string(kMaxCalibrationBits) + "], got " +
                                std::to_string(grid_bits));
  }
}

}  // namespace

double calibration_level(unsigned grid_bits, std::uint64_t j, double s_max) {
  const double top = static_cast<double>((std::uint64_t{1} << grid_bits) - 1);
  return static_cast<double>(j) * s_max / top;
}

CalibrationSummary summarize_calibration(std::uint32_t node, std::span<const double> scores, unsigned grid_bits,
                                         double s_max) {
  check_grid_bits(grid_bits);
  const std::uint64_t levels = std::uint64_t{1} << grid_bits;
  const double inv_step = static_cast<double>(levels - 1) / s_max;
  CalibrationSummary s{node, grid_bits, std::vector<std::uint32_t>(levels, 0)};
  for (double v : scores) {
    if (!(v >= 0.0 && v <= s_max)) throw std::invalid_argument("calibration score outside [0, S_max]");
    const auto j = static_cast<std::uint64_t>(std::floor(v * inv_step + 0.5));
    ++s.counts_per_level[std::min(j, levels - 1)];
  }
  return s;
}

std::vector<std::uint8_t> serialize(const CalibrationSummary& s) {
  check_grid_bits(s.grid_bits);
  if (s.levels() != (std::size_t{1} << s.grid_bits)) throw std::invalid_argument("summary: level count mismatch");
  BitWriter w;
  w.put(s.node, 16);
  w.put(s.grid_bits, 8);
  w.put(s.total(), 32);
  for (auto c : s.counts_per_level) w.put(c, 32);
  return std::move(w).finish();
}

CalibrationSummary deserialize_summary(std::span<const std::uint8_t> bytes) {
  BitReader r(bytes);
  CalibrationSummary s;
  s.node = static_cast<std::uint32_t>(r.get(16));
  s.grid_bits = static_cast<unsigned>(r.get(8));
  if (s.grid_bits == 0 || s.grid_bits > kMaxCalibrationBits) throw DecodeError("summary: bad grid bits");
  const std::uint64_t declared = r.get(32);
  const std::size_t levels = std::size_t{1} << s.grid_bits;
  if (bytes.size() != (kSummaryHeaderBits + 32 * levels) / 8) throw DecodeError("summary: wrong length");
  s.counts_per_level.resize(levels);
  for (auto& c : s.counts_per_level) c = static_cast<std::uint32_t>(r.get(32));
  if (s.total() != declared) throw DecodeError("summary: counts do not add up to the declared total");
  return s;
}

Envelope to_envelope(const CalibrationSummary& s) {
  Envelope e;
  e.bytes = serialize(s);
  e.payload_bits = s.total() * s.grid_bits;
  e.header_bits = e.bytes.size() * 8;
  return e;
}

std::uint64_t conformal_rank(double alpha, std::uint64_t n) {
  return static_cast<std::uint64_t>(std::ceil((1.0 - alpha) * static_cast<double>(n + 1) - 1e-9));
}

ConformalQuantile reconstruct_quantile(std::span<const CalibrationSummary> summaries, double alpha, double s_max) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in [0, 1)");
  if (summaries.empty()) throw std::invalid_argument("no calibration summaries");
  const unsigned bits = summaries.front().grid_bits;
  std::vector<std::uint64_t> merged(summaries.front().levels(), 0);
  for (const auto& s : summaries) {
    if (s.grid_bits != bits || s.levels() != merged.size()) throw std::invalid_argument("summaries use different grids");
    for (std::size_t j = 0; j < merged.size(); ++j) merged[j] += s.counts_per_level[j];
  }
  ConformalQuantile q;
  q.alpha = alpha;
  for (auto c : merged) q.n_cal += c;
  if (q.n_cal == 0) throw std::invalid_argument("empty calibration set");
  q.rank = conformal_rank(alpha, q.n_cal);
  if (q.rank > q.n_cal) {
    q.q_hat = std::numeric_limits<double>::infinity();
    return q;
  }
  std::uint64_t cum = 0;
  for (std::size_t j = 0; j < merged.size(); ++j) {
    cum += merged[j];
    if (cum >= q.rank) {
      q.q_hat = calibration_level(bits, j, s_max);
      break;
    }
  }
  return q;
}

bool PredictionSet::contains(std::uint32_t y) const noexcept {
  return std::binary_search(members.begin(), members.end(), y);
}

PredictionSet predict_set(const ConformalQuantile& q, std::span<const ScoreRecord> scores) {
  PredictionSet set;
  for (const auto& r : scores) {
    if (r.swarm_score <= q.q_hat) set.members.push_back(r.candidate);
  }
  std::sort(set.members.begin(), set.members.end());
  return set;
}

CoverageResult evaluate_coverage(const SwarmScorer& scorer, Bus& bus, const ConformalQuantile& q,
                                 std::span<const LabeledQuery> test) {
  if (test.empty()) throw std::invalid_argument("evaluate_coverage: no test queries");
  CoverageResult out;
  out.n_test = test.size();
  std::size_t hits = 0;
  double sizes = 0.0;
  for (std::size_t t = 0; t < test.size(); ++t) {
    const auto records = scorer.score_query(bus, Channel::inference, static_cast<std::uint32_t>(t), test[t].x);
    const PredictionSet set = predict_set(q, records);
    hits += set.contains(test[t].y) ? 1 : 0;
    sizes += static_cast<double>(set.size());
  }
  out.coverage = static_cast<double>(hits) / static_cast<double>(test.size());
  out.mean_set_size = sizes / static_cast<double>(test.size());
  return out;
}

// ---------------------------------------------------------------------------

void FcragConfig::validate() const {
  if (nodes == 0 || n_cal == 0 || n_test == 0) {
    throw std::invalid_argument("fcrag: K, n_cal and n_test must be positive");
  }
  if (!(beta > 0.0)) throw std::invalid_argument("fcrag: beta must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("fcrag: alpha must be in (0, 1)");
  if (score_bits == 0 || score_bits > 32) throw std::invalid_argument("fcrag: B_i must be in [1, 32]");
  check_grid_bits(cal_bits);
  if (!(s_max > 0.0) || !std::isfinite(s_max)) throw std::invalid_argument("fcrag: S_max must be positive");
}

std::vector<LogitTable> fit_node_models(const GroundTruth& gt, std::size_t nodes, std::uint64_t samples, double beta,
                                        std::uint64_t seed) {
  std::vector<LogitTable> out;
  out.reserve(nodes);
  for (std::size_t i = 0; i < nodes; ++i) {
    const Dataset data =
        sample_dataset(gt.logits, gt.context_marginal, samples, derive_seed(seed, {tag(SeedRole::node_data), i}));
    out.push_back(fit_local_mle(data, beta).logits);
  }
  return out;
}

FcragResult run_fcrag(const FcragConfig& cfg, const GroundTruth& gt) {
  cfg.validate();
  if (cfg.samples == 0) return run_fcrag(cfg, gt, std::vector<LogitTable>(cfg.nodes, gt.logits));
  return run_fcrag(cfg, gt, fit_node_models(gt, cfg.nodes, cfg.samples, cfg.beta, cfg.seed));
}

FcragResult run_fcrag(const FcragConfig& cfg, const GroundTruth& gt, std::vector<LogitTable> node_logits) {
  cfg.validate();
  if (node_logits.size() != cfg.nodes) throw std::invalid_argument("fcrag: one model per node required");
  const std::size_t K = cfg.nodes;
  const SwarmScorer scorer(std::move(node_logits), std::vector<unsigned>(K, cfg.score_bits), cfg.s_max,
                           derive_seed(cfg.seed, {tag(SeedRole::score_dither)}));
  Bus bus(K);
  FcragResult result;

  // Calibration: pair j belongs to node j mod K; its swarm score comes back
  // to the owner over the free downlink.
  const auto cal = draw_queries(gt, cfg.n_cal, derive_seed(cfg.seed, {tag(SeedRole::calibration)}));
  std::vector<std::vector<double>> local(K);
  for (std::size_t j = 0; j < cal.size(); ++j) {
    const ScoreRecord r = scorer.score_candidate(bus, Channel::calibration, static_cast<std::uint32_t>(j), cal[j].x,
                                                 cal[j].y);
    local[j % K].push_back(r.swarm_score);
  }
  result.calibration_score_bits = bus.ledger().total_payload_bits(Channel::calibration);

  std::vector<CalibrationSummary> received;
  for (std::size_t i = 0; i < K; ++i) {
    const auto summary = summarize_calibration(static_cast<std::uint32_t>(i), local[i], cfg.cal_bits, cfg.s_max);
    bus.uplink(static_cast<NodeId>(i), Channel::calibration, 0, to_envelope(summary));
  }
  for (const Message& msg : bus.drain_hub()) received.push_back(deserialize_summary(msg.body.bytes));
  std::stable_sort(received.begin(), received.end(),
                   [](const CalibrationSummary& a, const CalibrationSummary& b) { return a.node < b.node; });
  result.calibration_summary_bits =
      bus.ledger().total_payload_bits(Channel::calibration) - result.calibration_score_bits;
  result.quantile = reconstruct_quantile(received, cfg.alpha, cfg.s_max);

  const auto test = draw_queries(gt, cfg.n_test, derive_seed(cfg.seed, {tag(SeedRole::test)}));
  result.coverage = evaluate_coverage(scorer, bus, result.quantile, test);
  result.ledger = bus.ledger();
  return result;
}

}  // namespace fedlm
