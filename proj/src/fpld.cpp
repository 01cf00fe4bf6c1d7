#include "fedlm/fpld.hpp"

#include <algorithm>
#include <cstring>
#include <functional>
#include <future>
#include <utility>
#include <string>

#include "fedlm/rng.hpp"
#include "fedlm/softmax.hpp"

namespace fedlm {

ProbeSet draw_probe_set(std::span<const double> q, std::size_t m, std::uint64_t seed) {
  const CategoricalSampler sampler(q);
  Engine eng(seed);
  ProbeSet probes;
  probes.contexts.resize(m);
  for (auto& c : probes.contexts) c = static_cast<std::uint32_t>(sampler.sample(to_unit(eng())));
  return probes;
}

void FpldConfig::validate() const {
  if (nodes == 0 || samples == 0 || probes == 0 || rounds == 0 || local_epochs == 0) {
    throw std::invalid_argument("fpld: K, n, m, T and E must all be positive");
  }
  if (!(drift >= 0.0)) throw std::invalid_argument("fpld: drift must be non-negative");
  if (!(beta > 0.0)) throw std::invalid_argument("fpld: beta must be positive");
  if (threads == 0) throw std::invalid_argument("fpld: threads must be positive");
  quantizer.validate();
}

// ---------------------------------------------------------------------------

ProbeAggregator::ProbeAggregator(std::size_t nodes, std::size_t probes, std::size_t vocab)
    : probes_(probes), vocab_(vocab), sums_(probes * vocab, 0.0), reported_(nodes, 0), scratch_(vocab) {}

void ProbeAggregator::add(NodeId node, std::span<const double> dequantized) {
  if (node >= reported_.size()) throw ProtocolError("report from unknown node " + std::to_string(node));
  if (dequantized.size() != vocab_) {
    throw ProtocolError("node " + std::to_string(node) + " sent " + std::to_string(dequantized.size()) +
                        " coordinates, expected " + std::to_string(vocab_));
  }
  const std::size_t l = reported_[node];
  if (l >= probes_) throw ProtocolError("node " + std::to_string(node) + " sent more than m probe vectors");
  double* dst = sums_.data() + l * vocab_;
  for (std::size_t v = 0; v < vocab_; ++v) dst[v] += dequantized[v];
  ++reported_[node];
}

void ProbeAggregator::add(NodeId node, const QuantizedPayload& payload) {
  if (payload.num_coords != vocab_) {
    throw ProtocolError("node " + std::to_string(node) + " sent a payload with " +
                        std::to_string(payload.num_coords) + " coordinates, expected " + std::to_string(vocab_));
  }
  dequantize_into(payload, scratch_);
  add(node, scratch_);
}

void ProbeAggregator::check_complete() const {
  for (std::size_t i = 0; i < reported_.size(); ++i) {
    if (reported_[i] != probes_) {
      throw ProtocolError("node " + std::to_string(i) + " reported " + std::to_string(reported_[i]) + " of " +
                          std::to_string(probes_) + " probe vectors");
    }
  }
}

void ProbeAggregator::averaged_into(std::size_t l, std::span<double> out) const {
  const double inv_k = 1.0 / static_cast<double>(reported_.size());
  const double* src = sums_.data() + l * vocab_;
  for (std::size_t v = 0; v < vocab_; ++v) out[v] = src[v] * inv_k;
}

std::vector<double> ProbeAggregator::averaged(std::size_t l) const {
  std::vector<double> out(vocab_);
  averaged_into(l, out);
  return out;
}

std::vector<std::vector<double>> aggregate_probe_logits(std::span<const std::vector<QuantizedPayload>> payloads) {
  if (payloads.empty()) throw ProtocolError("no node reports");
  const std::size_t m = payloads.front().size();
  if (m == 0) throw ProtocolError("empty probe report");
  const std::size_t vocab = payloads.front().front().num_coords;
  ProbeAggregator agg(payloads.size(), m, vocab);
  for (std::size_t i = 0; i < payloads.size(); ++i) {
    for (const auto& p : payloads[i]) agg.add(static_cast<NodeId>(i), p);
  }
  agg.check_complete();
  std::vector<std::vector<double>> out(m);
  for (std::size_t l = 0; l < m; ++l) out[l] = agg.averaged(l);
  return out;
}

double measure_quantization_kl(std::span<const std::vector<double>> ideal,
                               std::span<const std::vector<double>> quantized) {
  if (ideal.size() != quantized.size() || ideal.empty()) {
    throw std::invalid_argument("measure_quantization_kl: row counts differ or are empty");
  }
  double total = 0.0;
  for (std::size_t l = 0; l < ideal.size(); ++l) total += kl_logits(ideal[l], quantized[l]);
  return total / static_cast<double>(ideal.size());
}

namespace {

Student distill_from(const ProbeSet& probes, std::size_t vocab,
                     const std::function<void(std::size_t, std::span<double>)>& averaged) {
  Student s;
  s.logits = LogitTable(vocab, 0.0);
  s.covered.assign(vocab, 0);
  std::vector<std::size_t> multiplicity(vocab, 0);
  std::vector<double> row(vocab);
  for (std::size_t l = 0; l < probes.size(); ++l) {
    const std::uint32_t x = probes.contexts[l];
    averaged(l, row);
    auto dst = s.logits.row(x);
    for (std::size_t v = 0; v < vocab; ++v) dst[v] += row[v];
    ++multiplicity[x];
  }
  for (std::size_t x = 0; x < vocab; ++x) {
    if (multiplicity[x] == 0) continue;
    s.covered[x] = 1;
    const double inv = 1.0 / static_cast<double>(multiplicity[x]);
    for (double& v : s.logits.row(x)) v *= inv;
  }
  return s;
}

std::shared_ptr<const std::vector<std::uint8_t>> encode_student(const Student& s) {
  const auto values = s.logits.values();
  auto bytes = std::make_shared<std::vector<std::uint8_t>>(values.size() * sizeof(double) + s.covered.size());
  std::memcpy(bytes->data(), values.data(), values.size() * sizeof(double));
  std::memcpy(bytes->data() + values.size() * sizeof(double), s.covered.data(), s.covered.size());
  return bytes;
}

struct NodeState {
  NodeDistribution dist;
  std::uint64_t data_seed = 0;
};

}  // namespace

Student distill(const ProbeSet& probes, std::span<const std::vector<double>> averaged, std::size_t vocab) {
  if (averaged.size() != probes.size()) throw std::invalid_argument("distill: one averaged row per probe required");
  return distill_from(probes, vocab, [&](std::size_t l, std::span<double> out) {
    std::copy(averaged[l].begin(), averaged[l].end(), out.begin());
  });
}

FpldResult run_fpld(const FpldConfig& cfg, const GroundTruth& gt) {
  cfg.validate();
  const std::size_t K = cfg.nodes;
  const std::size_t V = gt.vocab;
  const std::size_t m = cfg.probes;

  QuantizerRegistry registry;
  const std::uint16_t config_id = registry.add(cfg.quantizer);
  Bus bus(K);

  // Uniform probe marginal Q over contexts.
  const std::vector<double> q(V, 1.0 / static_cast<double>(V));
  const ProbeSet probes = draw_probe_set(q, m, derive_seed(cfg.seed, {tag(SeedRole::probes)}));

  FpldResult result;
  FpldDiagnostics& diag = result.diagnostics;
  std::vector<NodeState> nodes(K);
  for (std::size_t i = 0; i < K; ++i) {
    nodes[i].dist = perturb_node(gt, cfg.drift, derive_seed(cfg.seed, {tag(SeedRole::perturbation), i}));
    nodes[i].data_seed = derive_seed(cfg.seed, {tag(SeedRole::node_data), i});
    diag.node_kl_to_target.push_back(nodes[i].dist.kl_to_target);
  }
  for (double kl : diag.node_kl_to_target) diag.drift_term += kl;
  diag.drift_term /= static_cast<double>(K);

  Student previous;
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    ProbeAggregator agg(K, m, V);
    LogitTable ideal_sum(V, 0.0);  // sum over nodes of unquantized rows, for diagnostics

    // Local step for one node: refit from its private data, quantize every probe row, uplink.
    auto local_step = [&](std::size_t i) {
      bus.drain_inbox(static_cast<NodeId>(i));  // the closed-form refit does not use the broadcast student
      const Dataset data = sample_dataset(nodes[i].dist.logits, gt.context_marginal, cfg.samples, nodes[i].data_seed);
      LocalModel model = fit_local_mle(data, cfg.beta);
      std::uint64_t saturated = 0;
      for (std::size_t l = 0; l < m; ++l) {
        const std::uint64_t dither_seed = derive_seed(cfg.seed, {tag(SeedRole::dither), i, l});
        QuantizedPayload p = quantize(model.logits.row(probes.contexts[l]), cfg.quantizer, dither_seed, config_id);
        saturated += p.saturated;
        bus.uplink(static_cast<NodeId>(i), Channel::training, t, p);
      }
      return std::make_pair(std::move(model), saturated);
    };

    for (std::size_t first = 0; first < K; first += cfg.threads) {
      const std::size_t last = std::min(K, first + cfg.threads);
      std::vector<std::pair<LocalModel, std::uint64_t>> models;
      if (last - first == 1) {
        models.push_back(local_step(first));
      } else {
        std::vector<std::future<std::pair<LocalModel, std::uint64_t>>> futures;
        for (std::size_t i = first; i < last; ++i) futures.push_back(std::async(std::launch::async, local_step, i));
        for (auto& f : futures) models.push_back(f.get());
      }
      for (const auto& [model, saturated] : models) {
        diag.saturated_coords += saturated;
        for (std::size_t x = 0; x < V; ++x) {
          auto dst = ideal_sum.row(x);
          const auto src = model.logits.row(x);
          for (std::size_t v = 0; v < V; ++v) dst[v] += src[v];
        }
      }

      // Hub side of the barrier: consume this block's messages in sender order.
      std::vector<Message> inbox = bus.drain_hub();
      std::stable_sort(inbox.begin(), inbox.end(),
                       [](const Message& a, const Message& b) { return a.from < b.from; });
      for (const Message& msg : inbox) {
        const QuantizedPayload payload = deserialize_payload(msg.body.bytes, registry);
        agg.add(msg.from, payload);
      }
    }
    agg.check_complete();

    // Quantization KL on the probes, against the unquantized average.
    std::vector<double> ideal_row(V), avg_row(V);
    const double inv_k = 1.0 / static_cast<double>(K);
    double qkl = 0.0;
    for (std::size_t l = 0; l < m; ++l) {
      const auto src = ideal_sum.row(probes.contexts[l]);
      for (std::size_t v = 0; v < V; ++v) ideal_row[v] = src[v] * inv_k;
      agg.averaged_into(l, avg_row);
      qkl += kl_logits(ideal_row, avg_row);
    }
    diag.quantization_kl = qkl / static_cast<double>(m);

    Student student = distill_from(probes, V, [&](std::size_t l, std::span<double> out) { agg.averaged_into(l, out); });
    if (t > 0 && !(student.logits == previous.logits && student.covered == previous.covered)) {
      diag.rounds_identical = false;
    }
    bus.broadcast(Broadcast{t, encode_student(student)});
    previous = std::move(student);
  }

  result.student = std::move(previous);
  result.ledger = bus.ledger();
  diag.student_kl = expected_kl(gt, result.student.logits);
  for (std::size_t x = 0; x < V; ++x) {
    if (result.student.covered[x]) continue;
    ++diag.uncovered_contexts;
    diag.uncovered_kl += gt.context_marginal[x] * kl_logits(gt.logits.row(x), result.student.logits.row(x));
  }
  return result;
}

}  // namespace fedlm
