#include "fedlm/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "fedlm/bounds.hpp"
#include "fedlm/fcrag.hpp"
#include "fedlm/fpld.hpp"
#include "fedlm/ngram.hpp"
#include "fedlm/rng.hpp"

namespace fedlm {

using nlohmann::json;

std::string_view to_string(ExperimentId id) noexcept {
  switch (id) {
    case ExperimentId::e1: return "e1";
    case ExperimentId::e1_5: return "e1_5";
    case ExperimentId::e2: return "e2";
    case ExperimentId::quant_check: return "quant_check";
  }
  return "unknown";
}

ExperimentId parse_experiment(std::string_view name) {
  if (name == "e1") return ExperimentId::e1;
  if (name == "e1_5" || name == "e1.5") return ExperimentId::e1_5;
  if (name == "e2") return ExperimentId::e2;
  if (name == "quant_check" || name == "quant-check") return ExperimentId::quant_check;
  throw std::invalid_argument("unknown experiment '" + std::string(name) + "' (expected e1, e1_5, e2, quant_check)");
}

std::map<std::string, Grid> full_grids(ExperimentId id) {
  switch (id) {
    case ExperimentId::e1:
      return {{"K", {1, 2, 4, 8, 16, 32, 64, 128, 256}},
              {"n", {1e2, 3e2, 1e3, 3e3, 1e4, 3e4, 1e5}},
              {"m", {1e2, 3e2, 1e3, 3e3, 1e4, 3e4}},
              {"bits", {2, 3, 4, 5, 6, 7, 8, 10, 12}},
              {"V", {64, 128, 256, 512, 1024}}};
    case ExperimentId::e1_5:
      return {{"K", {2, 4, 8}}, {"drift", {0, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0}}};
    case ExperimentId::e2:
      return {{"n_cal", {1e2, 3e2, 1e3, 3e3, 1e4}},
              {"B_i", {1, 2, 4, 8, 16, 32}},
              {"B_cal", {1, 2, 4, 6, 8, 10, 12, 14, 16}}};
    case ExperimentId::quant_check:
      return {{"K", {1, 4, 16}}, {"bits", {4, 8}}};
  }
  return {};
}

namespace {

std::map<std::string, Grid> reduced_grids(ExperimentId id) {
  switch (id) {
    case ExperimentId::e1:
      return {{"K", {1, 4, 16}}, {"n", {1e2, 3e3, 3e4}}, {"m", {3e2, 3e3}}, {"bits", {2, 8}}, {"V", {64, 256}}};
    case ExperimentId::e1_5:
      return {{"K", {2, 4}}, {"drift", {0, 0.5, 1.0}}};
    case ExperimentId::e2:
      return {{"n_cal", {3e2, 3e3}}, {"B_i", {1, 8}}, {"B_cal", {1, 8}}};
    case ExperimentId::quant_check:
      return {{"K", {1, 4}}, {"bits", {4, 8}}};
  }
  return {};
}

}  // namespace

std::vector<std::string> sweep_axes(ExperimentId id) {
  switch (id) {
    case ExperimentId::e1: return {"K", "n", "m", "bits", "V"};
    case ExperimentId::e1_5: return {"K", "drift"};
    case ExperimentId::e2: return {"n_cal", "B_i", "B_cal"};
    case ExperimentId::quant_check: return {"K", "bits"};
  }
  return {};
}

ExperimentSpec default_spec(ExperimentId id, bool full) {
  ExperimentSpec s;
  s.id = id;
  s.full = full;
  s.grids = full ? full_grids(id) : reduced_grids(id);
  switch (id) {
    case ExperimentId::e1: s.seeds = 40; break;
    case ExperimentId::e1_5: s.seeds = 20; break;
    case ExperimentId::e2: s.seeds = 20; break;
    case ExperimentId::quant_check:
      s.seeds = 1;
      s.bandwidth_seeds = full ? 5 : 2;
      break;
  }
  return s;
}

double ExperimentSpec::score_max() const { return s_max > 0.0 ? s_max : kDefaultScoreMax; }

namespace {

bool is_count(double v) { return v >= 1.0 && v == std::floor(v) && v < 1e15; }

void require_counts(const std::string& axis, const Grid& g) {
  for (double v : g) {
    if (!is_count(v)) throw std::invalid_argument("grid." + axis + ": values must be positive integers");
  }
}

}  // namespace

void ExperimentSpec::validate() const {
  if (seeds == 0) throw std::invalid_argument("seeds must be positive");
  if (threads == 0) throw std::invalid_argument("threads must be positive");
  for (const auto& axis : sweep_axes(id)) {
    auto it = grids.find(axis);
    if (it == grids.end() || it->second.empty()) throw std::invalid_argument("missing grid for axis '" + axis + "'");
    if (axis == "drift") {
      for (double v : it->second) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("grid.drift: values must be >= 0");
      }
    } else {
      require_counts(axis, it->second);
    }
  }
  for (const auto& [axis, g] : grids) {
    const auto axes = sweep_axes(id);
    if (std::find(axes.begin(), axes.end(), axis) == axes.end()) {
      throw std::invalid_argument("grid." + axis + " is not an axis of " + std::string(to_string(id)));
    }
  }
  if (V < 2 || cal_V < 2) throw std::invalid_argument("V must be at least 2");
  QuantizerConfig{bits, clip, mode}.validate();
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0, 1)");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must be in (0, 1)");
  if (!(fmax_radius > 0.0) || fmax_samples < 100) throw std::invalid_argument("f_max needs radius > 0 and >= 100 samples");
  if (K == 0 || n == 0 || m == 0 || rounds == 0 || cal_K == 0 || n_cal == 0 || n_test == 0 || drift_n == 0) {
    throw std::invalid_argument("counts must be positive");
  }
  if (moment_draws < 2 || bandwidth_seeds == 0) throw std::invalid_argument("quantizer check needs draws and seeds");
}

// ---------------------------------------------------------------------------
// config files

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw std::invalid_argument("'" + std::string(v) + "' is not a number");
  }
  return out;
}

std::uint64_t parse_count(std::string_view v) {
  const double d = parse_double(v);
  if (!(d >= 0.0) || d != std::floor(d) || d > 1.8e19) {
    throw std::invalid_argument("'" + std::string(v) + "' is not a non-negative integer");
  }
  return static_cast<std::uint64_t>(d);
}

Grid parse_grid(std::string_view v) {
  Grid g;
  while (!v.empty()) {
    const auto comma = v.find(',');
    const auto item = trim(v.substr(0, comma));
    if (item.empty()) throw std::invalid_argument("empty grid entry");
    g.push_back(parse_double(item));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (g.empty()) throw std::invalid_argument("empty grid");
  return g;
}

using Setter = std::function<void(ExperimentSpec&, std::string_view)>;

template <class T>
Setter count_setter(T ExperimentSpec::*field) {
  return [field](ExperimentSpec& s, std::string_view v) { s.*field = static_cast<T>(parse_count(v)); };
}

Setter real_setter(double ExperimentSpec::*field) {
  return [field](ExperimentSpec& s, std::string_view v) { s.*field = parse_double(v); };
}

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"seeds", count_setter(&ExperimentSpec::seeds)},
      {"seed_offset", count_setter(&ExperimentSpec::seed_offset)},
      {"master_seed", count_setter(&ExperimentSpec::master_seed)},
      {"threads", count_setter(&ExperimentSpec::threads)},
      {"K", count_setter(&ExperimentSpec::K)},
      {"n", count_setter(&ExperimentSpec::n)},
      {"m", count_setter(&ExperimentSpec::m)},
      {"bits", count_setter(&ExperimentSpec::bits)},
      {"V", count_setter(&ExperimentSpec::V)},
      {"rounds", count_setter(&ExperimentSpec::rounds)},
      {"clip", real_setter(&ExperimentSpec::clip)},
      {"beta", real_setter(&ExperimentSpec::beta)},
      {"mode", [](ExperimentSpec& s, std::string_view v) { s.mode = parse_dither_mode(v); }},
      {"drift_n", count_setter(&ExperimentSpec::drift_n)},
      {"cal_K", count_setter(&ExperimentSpec::cal_K)},
      {"cal_V", count_setter(&ExperimentSpec::cal_V)},
      {"cal_samples", count_setter(&ExperimentSpec::cal_samples)},
      {"n_cal", count_setter(&ExperimentSpec::n_cal)},
      {"B_i", count_setter(&ExperimentSpec::score_bits)},
      {"B_cal", count_setter(&ExperimentSpec::cal_bits)},
      {"alpha", real_setter(&ExperimentSpec::alpha)},
      {"n_test", count_setter(&ExperimentSpec::n_test)},
      {"s_max", real_setter(&ExperimentSpec::s_max)},
      {"fmax_samples", count_setter(&ExperimentSpec::fmax_samples)},
      {"fmax_radius", real_setter(&ExperimentSpec::fmax_radius)},
      {"delta", real_setter(&ExperimentSpec::delta)},
      {"c1", real_setter(&ExperimentSpec::c1)},
      {"c2", real_setter(&ExperimentSpec::c2)},
      {"rho", real_setter(&ExperimentSpec::rho)},
      {"c_quantile", real_setter(&ExperimentSpec::c_quantile)},
      {"moment_draws", count_setter(&ExperimentSpec::moment_draws)},
      {"bandwidth_seeds", count_setter(&ExperimentSpec::bandwidth_seeds)},
  };
  return table;
}

}  // namespace

void apply_config(ExperimentSpec& spec, std::string_view text) {
  std::size_t lineno = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = "config line " + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw std::invalid_argument(where + "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (value.empty()) throw std::invalid_argument(where + "missing value for '" + std::string(key) + "'");
    try {
      if (key.substr(0, 5) == "grid.") {
        const std::string axis(key.substr(5));
        const auto axes = sweep_axes(spec.id);
        if (std::find(axes.begin(), axes.end(), axis) == axes.end()) {
          throw std::invalid_argument("'" + axis + "' is not an axis of " + std::string(to_string(spec.id)));
        }
        spec.grids[axis] = parse_grid(value);
        continue;
      }
      const auto it = setters().find(key);
      if (it == setters().end()) throw std::invalid_argument("unknown key '" + std::string(key) + "'");
      it->second(spec, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + e.what());
    }
  }
}

void apply_config_file(ExperimentSpec& spec, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  apply_config(spec, buf.str());
}

unsigned threads_from_env(unsigned fallback) {
  const char* v = std::getenv("FEDLM_THREADS");
  if (v == nullptr || *v == '\0') return fallback;
  const std::uint64_t t = parse_count(v);
  if (t == 0) throw std::invalid_argument("FEDLM_THREADS must be positive");
  return static_cast<unsigned>(t);
}

json spec_to_json(const ExperimentSpec& s) {
  json grids = json::object();
  for (const auto& [axis, g] : s.grids) grids[axis] = g;
  return json{
      {"experiment", to_string(s.id)},
      {"seeds", s.seeds},
      {"seed_offset", s.seed_offset},
      {"master_seed", s.master_seed},
      {"full", s.full},
      {"grids", grids},
      {"training", {{"K", s.K}, {"n", s.n}, {"m", s.m}, {"bits", s.bits}, {"V", s.V}, {"rounds", s.rounds},
                    {"clip", s.clip}, {"beta", s.beta}, {"mode", to_string(s.mode)}, {"drift_n", s.drift_n}}},
      {"calibration", {{"K", s.cal_K}, {"V", s.cal_V}, {"node_samples", s.cal_samples}, {"n_cal", s.n_cal},
                       {"B_i", s.score_bits}, {"B_cal", s.cal_bits}, {"alpha", s.alpha}, {"n_test", s.n_test},
                       {"s_max", s.score_max()}, {"fmax_samples", s.fmax_samples},
                       {"fmax_radius", s.fmax_radius}}},
      {"bounds", {{"delta", s.delta}, {"c1", s.c1}, {"c2", s.c2}, {"rho", s.rho}, {"c_quantile", s.c_quantile}}},
      {"quantizer_check", {{"moment_draws", s.moment_draws}, {"bandwidth_seeds", s.bandwidth_seeds}}},
  };
}

std::string config_hash(const ExperimentSpec& spec) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : spec_to_json(spec).dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// shared helpers

namespace {

/// Runs fn(0..n-1) on `threads` workers; rethrows the first failure.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(threads, 1U), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next.store(n);
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct Summary {
  double mean = 0.0;
  double std = 0.0;
};

Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

json stat_json(const std::vector<double>& v) {
  const Summary s = summarize(v);
  return json{{"mean", s.mean}, {"std", s.std}, {"per_seed", v}};
}

json report_json(const BoundReport& r) {
  return json{{"t1_statistical", r.t1_statistical},
              {"t1_probe", r.t1_probe},
              {"t1_quant", r.t1_quant},
              {"t1_total", r.t1_total},
              {"t1_quant_alt_A", r.t1_quant_alt_A},
              {"t1_quant_alt_B_extra", r.t1_quant_alt_B_extra},
              {"drift_term", r.drift_term},
              {"delta_fl", r.delta_fl},
              {"delta_rag", r.delta_rag},
              {"coverage_lb", r.coverage_lb},
              {"setsize_ub", r.setsize_ub},
              {"delta_train", r.delta_train},
              {"coverage_lb_e2e", r.coverage_lb_e2e}};
}

std::uint64_t replicate_seed(const ExperimentSpec& spec, std::size_t s) {
  return derive_seed(spec.master_seed, {spec.seed_offset + s});
}

BoundParams base_params(const ExperimentSpec& spec) {
  BoundParams p;
  p.K = spec.K;
  p.n = spec.n;
  p.m = spec.m;
  p.V = spec.V;
  p.d = static_cast<double>(spec.V) * static_cast<double>(spec.V - 1);
  p.bits_per_coord = spec.bits;
  p.rho = spec.rho;
  p.delta = spec.delta;
  p.c1 = spec.c1;
  p.c2 = spec.c2;
  p.clip = spec.clip;
  p.alpha = spec.alpha;
  p.n_cal = spec.n_cal;
  p.score_bits.assign(spec.cal_K, spec.score_bits);
  p.cal_bits = spec.cal_bits;
  p.s_max = spec.score_max();
  p.c_quantile = spec.c_quantile;
  return p;
}

BoundParams training_params(const ExperimentSpec& spec, const TrainingPoint& pt) {
  BoundParams p = base_params(spec);
  p.K = pt.K;
  p.n = pt.n;
  p.m = pt.m;
  p.V = pt.V;
  p.d = static_cast<double>(pt.V) * static_cast<double>(pt.V - 1);
  p.bits_per_coord = pt.bits;
  return p;
}

FpldConfig fpld_config(const ExperimentSpec& spec, const TrainingPoint& pt, std::uint64_t seed) {
  FpldConfig cfg;
  cfg.nodes = pt.K;
  cfg.samples = pt.n;
  cfg.probes = pt.m;
  cfg.rounds = spec.rounds;
  cfg.quantizer = QuantizerConfig{pt.bits, spec.clip, spec.mode};
  cfg.beta = spec.beta;
  cfg.drift = pt.drift;
  cfg.seed = seed;
  cfg.threads = 1;
  return cfg;
}

struct TrainingOutcome {
  double kl = 0.0;
  double quantization_kl = 0.0;
  double drift_term = 0.0;
  std::size_t uncovered = 0;
  std::uint64_t saturated = 0;
  bool rounds_identical = true;
  BitLedger ledger;
};

TrainingOutcome run_training(const ExperimentSpec& spec, const TrainingPoint& pt, std::size_t s, bool keep_ledger) {
  const std::uint64_t seed = replicate_seed(spec, s);
  const GroundTruth gt = generate_ground_truth(pt.V, derive_seed(seed, {tag(SeedRole::ground_truth)}));
  FpldResult r = run_fpld(fpld_config(spec, pt, seed), gt);
  TrainingOutcome o;
  o.kl = r.diagnostics.student_kl;
  o.quantization_kl = r.diagnostics.quantization_kl;
  o.drift_term = r.diagnostics.drift_term;
  o.uncovered = r.diagnostics.uncovered_contexts;
  o.saturated = r.diagnostics.saturated_coords;
  o.rounds_identical = r.diagnostics.rounds_identical;
  if (keep_ledger) o.ledger = std::move(r.ledger);
  return o;
}

json ledger_json(const BitLedger& l) {
  return json{{"training_payload_bits", l.total_payload_bits(Channel::training)},
              {"inference_payload_bits", l.total_payload_bits(Channel::inference)},
              {"calibration_payload_bits", l.total_payload_bits(Channel::calibration)},
              {"header_bits", l.header_bits()},
              {"messages", l.message_count()}};
}

TrainingPoint default_point(const ExperimentSpec& spec) {
  return TrainingPoint{spec.K, spec.n, spec.m, spec.bits, spec.V, 0.0};
}

void set_axis(TrainingPoint& pt, const std::string& axis, double v) {
  if (axis == "K") pt.K = static_cast<std::size_t>(v);
  else if (axis == "n") pt.n = static_cast<std::uint64_t>(v);
  else if (axis == "m") pt.m = static_cast<std::size_t>(v);
  else if (axis == "bits") pt.bits = static_cast<unsigned>(v);
  else if (axis == "V") pt.V = static_cast<std::size_t>(v);
  else if (axis == "drift") pt.drift = v;
  else throw std::invalid_argument("unknown training axis '" + axis + "'");
}

bool same_point(const TrainingPoint& a, const TrainingPoint& b) {
  return a.K == b.K && a.n == b.n && a.m == b.m && a.bits == b.bits && a.V == b.V && a.drift == b.drift;
}

json point_params(const TrainingPoint& pt) {
  return json{{"K", pt.K}, {"n", pt.n}, {"m", pt.m}, {"bits", pt.bits}, {"V", pt.V}, {"drift", pt.drift}};
}

json envelope(const ExperimentSpec& spec, json body, double wall) {
  body["schema_version"] = kSchemaVersion;
  body["experiment"] = to_string(spec.id);
  body["config"] = spec_to_json(spec);
  body["metadata"] = json{{"config_hash", config_hash(spec)},
                          {"version", kVersion},
                          {"seeds", spec.seeds},
                          {"full_grid", spec.grids == full_grids(spec.id)},
                          {"wall_time_s", wall}};
  return body;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<double> training_point_kl(const ExperimentSpec& spec, const TrainingPoint& point) {
  std::vector<double> out(spec.seeds);
  parallel_for(spec.seeds, spec.threads, [&](std::size_t s) { out[s] = run_training(spec, point, s, false).kl; });
  return out;
}

// ---------------------------------------------------------------------------
// E1

json run_e1(const ExperimentSpec& spec) {
  spec.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto axes = sweep_axes(ExperimentId::e1);

  // Grid points shared between sweeps (the default point) run once.
  std::vector<TrainingPoint> points;
  std::vector<std::vector<std::size_t>> sweep_index;
  for (const auto& axis : axes) {
    auto& idx = sweep_index.emplace_back();
    for (double v : spec.grids.at(axis)) {
      TrainingPoint pt = default_point(spec);
      set_axis(pt, axis, v);
      fpld_config(spec, pt, 0).validate();
      auto it = std::find_if(points.begin(), points.end(), [&](const auto& p) { return same_point(p, pt); });
      if (it == points.end()) {
        idx.push_back(points.size());
        points.push_back(pt);
      } else {
        idx.push_back(static_cast<std::size_t>(it - points.begin()));
      }
    }
  }

  const std::size_t S = spec.seeds;
  std::vector<TrainingOutcome> outcomes(points.size() * S);
  parallel_for(outcomes.size(), spec.threads, [&](std::size_t i) {
    outcomes[i] = run_training(spec, points[i / S], i % S, i % S == 0);
  });

  json sweeps = json::array();
  for (std::size_t a = 0; a < axes.size(); ++a) {
    json pts = json::array();
    const auto& grid = spec.grids.at(axes[a]);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const std::size_t p = sweep_index[a][g];
      std::vector<double> kl(S), qkl(S), uncovered(S);
      std::uint64_t saturated = 0;
      bool identical = true;
      for (std::size_t s = 0; s < S; ++s) {
        const auto& o = outcomes[p * S + s];
        kl[s] = o.kl;
        qkl[s] = o.quantization_kl;
        uncovered[s] = static_cast<double>(o.uncovered);
        saturated += o.saturated;
        identical = identical && o.rounds_identical;
      }
      const BoundReport bound = full_report(training_params(spec, points[p]));
      const Summary k = summarize(kl);
      const auto& pt = points[p];
      pts.push_back(json{{"value", grid[g]},
                         {"params", point_params(pt)},
                         {"kl", stat_json(kl)},
                         {"quantization_kl", stat_json(qkl)},
                         {"uncovered_contexts", summarize(uncovered).mean},
                         {"saturated_coords", saturated},
                         {"rounds_identical", identical},
                         {"bound", report_json(bound)},
                         {"bound_holds", k.mean <= bound.t1_total},
                         {"ledger", ledger_json(outcomes[p * S].ledger)},
                         {"expected_training_payload_bits",
                          static_cast<std::uint64_t>(pt.K) * spec.rounds * pt.m * pt.V * pt.bits}});
    }
    sweeps.push_back(json{{"axis", axes[a]}, {"metric", "kl"}, {"points", pts}});
  }
  return envelope(spec, json{{"sweeps", sweeps}}, seconds_since(t0));
}

// ---------------------------------------------------------------------------
// E1.5

json run_e1_5(const ExperimentSpec& spec) {
  spec.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const Grid& Ks = spec.grids.at("K");
  Grid drifts = spec.grids.at("drift");
  // The homogeneous baseline is the drift-0 run at the same replicate.
  const bool has_zero = std::find(drifts.begin(), drifts.end(), 0.0) != drifts.end();
  Grid runs = drifts;
  if (!has_zero) runs.insert(runs.begin(), 0.0);
  const std::size_t D = runs.size();
  const std::size_t S = spec.seeds;

  std::vector<TrainingOutcome> outcomes(Ks.size() * S * D);
  parallel_for(Ks.size() * S, spec.threads, [&](std::size_t item) {
    const std::size_t k = item / S;
    const std::size_t s = item % S;
    for (std::size_t d = 0; d < D; ++d) {
      TrainingPoint pt = default_point(spec);
      pt.K = static_cast<std::size_t>(Ks[k]);
      pt.n = spec.drift_n;
      pt.drift = runs[d];
      outcomes[(k * S + s) * D + d] = run_training(spec, pt, s, false);
    }
  });
  const auto run_of = [&](double drift) {
    return static_cast<std::size_t>(std::find(runs.begin(), runs.end(), drift) - runs.begin());
  };

  json sweeps = json::array();
  for (std::size_t k = 0; k < Ks.size(); ++k) {
    json pts = json::array();
    const std::size_t d0 = run_of(0.0);
    for (double drift : drifts) {
      const std::size_t d = run_of(drift);
      std::vector<double> kl(S), homo(S), dterm(S), per_seed_bound(S);
      std::size_t seed_holds = 0;
      for (std::size_t s = 0; s < S; ++s) {
        const auto& o = outcomes[(k * S + s) * D + d];
        kl[s] = o.kl;
        homo[s] = outcomes[(k * S + s) * D + d0].kl;
        dterm[s] = o.drift_term;
        per_seed_bound[s] = homo[s] + dterm[s];
        seed_holds += kl[s] <= per_seed_bound[s] ? 1 : 0;
      }
      TrainingPoint pt = default_point(spec);
      pt.K = static_cast<std::size_t>(Ks[k]);
      pt.n = spec.drift_n;
      pt.drift = drift;
      const double drift_mean = summarize(dterm).mean;
      const BoundReport bound = full_report(training_params(spec, pt), drift_mean);
      const double bound_value = summarize(homo).mean + drift_mean;
      pts.push_back(json{{"value", drift},
                         {"params", point_params(pt)},
                         {"kl", stat_json(kl)},
                         {"homogeneous_kl", stat_json(homo)},
                         {"drift_term", stat_json(dterm)},
                         {"bound_value", bound_value},
                         {"bound_holds", summarize(kl).mean <= bound_value},
                         {"seeds_within_bound", seed_holds},
                         {"bound", report_json(bound)}});
    }
    sweeps.push_back(json{{"axis", "drift"}, {"metric", "kl"}, {"fixed", {{"K", Ks[k]}}}, {"points", pts}});
  }
  return envelope(spec, json{{"sweeps", sweeps}}, seconds_since(t0));
}

// ---------------------------------------------------------------------------
// E2

namespace {

struct CalPoint {
  std::size_t n_cal;
  unsigned score_bits;
  unsigned cal_bits;
};

struct CalOutcome {
  double coverage = 0.0;
  double set_size = 0.0;
  double q_hat = 0.0;
  std::uint64_t summary_bits = 0;
  std::uint64_t score_bits = 0;
  BitLedger ledger;
};

struct FmaxOutcome {
  double f_max = 0.0;
  double q_star = 0.0;
  double radius = 0.0;
};

GroundTruth cal_ground_truth(const ExperimentSpec& spec, std::size_t s) {
  return generate_ground_truth(spec.cal_V, derive_seed(replicate_seed(spec, s), {tag(SeedRole::ground_truth)}));
}

std::vector<LogitTable> cal_models(const ExperimentSpec& spec, const GroundTruth& gt, std::size_t s) {
  if (spec.cal_samples == 0) return std::vector<LogitTable>(spec.cal_K, gt.logits);
  return fit_node_models(gt, spec.cal_K, spec.cal_samples, spec.beta, replicate_seed(spec, s));
}

/// f_max from unquantized swarm scores of fresh pairs around their 1 - alpha
/// quantile; the radius doubles until the window holds 100 scores.
FmaxOutcome estimate_replicate_fmax(const ExperimentSpec& spec, std::size_t s) {
  const GroundTruth gt = cal_ground_truth(spec, s);
  const SwarmScorer scorer(cal_models(spec, gt, s), std::vector<unsigned>(spec.cal_K, 32), spec.score_max(), 0);
  const auto pairs = draw_queries(gt, spec.fmax_samples, derive_seed(replicate_seed(spec, s), {tag(SeedRole::oracle)}));
  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (const auto& q : pairs) scores.push_back(scorer.ideal_swarm_score(q.x, q.y));
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  const auto k = static_cast<std::size_t>(std::ceil((1.0 - spec.alpha) * static_cast<double>(sorted.size())));
  FmaxOutcome out;
  out.q_star = sorted[std::min(sorted.size(), std::max<std::size_t>(k, 1)) - 1];
  out.radius = spec.fmax_radius;
  for (int attempt = 0;; ++attempt) {
    try {
      out.f_max = estimate_fmax(scores, out.q_star, out.radius).f_max;
      return out;
    } catch (const std::invalid_argument&) {
      if (attempt >= 8) throw;
      out.radius *= 2.0;
    }
  }
}

}  // namespace

json run_e2(const ExperimentSpec& spec) {
  spec.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto axes = sweep_axes(ExperimentId::e2);
  const std::size_t S = spec.seeds;

  std::vector<CalPoint> points;
  std::vector<std::vector<std::size_t>> sweep_index;
  for (const auto& axis : axes) {
    auto& idx = sweep_index.emplace_back();
    for (double v : spec.grids.at(axis)) {
      CalPoint pt{spec.n_cal, spec.score_bits, spec.cal_bits};
      if (axis == "n_cal") pt.n_cal = static_cast<std::size_t>(v);
      if (axis == "B_i") pt.score_bits = static_cast<unsigned>(v);
      if (axis == "B_cal") pt.cal_bits = static_cast<unsigned>(v);
      FcragConfig probe;
      probe.nodes = spec.cal_K;
      probe.n_cal = pt.n_cal;
      probe.score_bits = pt.score_bits;
      probe.cal_bits = pt.cal_bits;
      probe.alpha = spec.alpha;
      probe.s_max = spec.score_max();
      probe.validate();
      auto it = std::find_if(points.begin(), points.end(), [&](const CalPoint& p) {
        return p.n_cal == pt.n_cal && p.score_bits == pt.score_bits && p.cal_bits == pt.cal_bits;
      });
      if (it == points.end()) {
        idx.push_back(points.size());
        points.push_back(pt);
      } else {
        idx.push_back(static_cast<std::size_t>(it - points.begin()));
      }
    }
  }

  std::vector<FmaxOutcome> fmax(S);
  parallel_for(S, spec.threads, [&](std::size_t s) { fmax[s] = estimate_replicate_fmax(spec, s); });

  std::vector<CalOutcome> outcomes(points.size() * S);
  parallel_for(outcomes.size(), spec.threads, [&](std::size_t i) {
    const CalPoint& pt = points[i / S];
    const std::size_t s = i % S;
    const GroundTruth gt = cal_ground_truth(spec, s);
    FcragConfig cfg;
    cfg.nodes = spec.cal_K;
    cfg.samples = spec.cal_samples;
    cfg.beta = spec.beta;
    cfg.n_cal = pt.n_cal;
    cfg.score_bits = pt.score_bits;
    cfg.cal_bits = pt.cal_bits;
    cfg.alpha = spec.alpha;
    cfg.n_test = spec.n_test;
    cfg.s_max = spec.score_max();
    cfg.seed = replicate_seed(spec, s);
    FcragResult r = run_fcrag(cfg, gt, cal_models(spec, gt, s));
    CalOutcome& o = outcomes[i];
    o.coverage = r.coverage.coverage;
    o.set_size = r.coverage.mean_set_size;
    o.q_hat = r.quantile.q_hat;
    o.summary_bits = r.calibration_summary_bits;
    o.score_bits = r.calibration_score_bits;
    if (s == 0) o.ledger = std::move(r.ledger);
  });

  std::vector<double> fvals(S);
  for (std::size_t s = 0; s < S; ++s) fvals[s] = fmax[s].f_max;
  const double f_mean = summarize(fvals).mean;

  json sweeps = json::array();
  for (std::size_t a = 0; a < axes.size(); ++a) {
    json pts = json::array();
    const auto& grid = spec.grids.at(axes[a]);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const std::size_t p = sweep_index[a][g];
      const CalPoint& pt = points[p];
      std::vector<double> cov(S), size(S), qhat(S);
      for (std::size_t s = 0; s < S; ++s) {
        const auto& o = outcomes[p * S + s];
        cov[s] = o.coverage;
        size[s] = o.set_size;
        qhat[s] = o.q_hat;
      }
      BoundParams bp = base_params(spec);
      bp.V = spec.cal_V;
      bp.K = spec.cal_K;
      bp.n_cal = pt.n_cal;
      bp.score_bits.assign(spec.cal_K, pt.score_bits);
      bp.cal_bits = pt.cal_bits;
      bp.f_max = f_mean;
      const BoundReport bound = full_report(bp);
      const double cov_mean = summarize(cov).mean;
      const double size_mean = summarize(size).mean;
      json ledger = ledger_json(outcomes[p * S].ledger);
      ledger["calibration_summary_payload_bits"] = outcomes[p * S].summary_bits;
      ledger["calibration_score_payload_bits"] = outcomes[p * S].score_bits;
      ledger["expected_inference_payload_bits"] =
          static_cast<std::uint64_t>(spec.n_test) * spec.cal_K * spec.cal_V * pt.score_bits;
      pts.push_back(json{{"value", grid[g]},
                         {"params", {{"n_cal", pt.n_cal}, {"B_i", pt.score_bits}, {"B_cal", pt.cal_bits}}},
                         {"coverage", stat_json(cov)},
                         {"set_size", stat_json(size)},
                         {"q_hat", stat_json(qhat)},
                         {"n_test", spec.n_test},
                         {"bound", report_json(bound)},
                         {"coverage_holds", cov_mean >= bound.coverage_lb},
                         {"setsize_holds", size_mean <= bound.setsize_ub},
                         {"bound_holds", cov_mean >= bound.coverage_lb && size_mean <= bound.setsize_ub},
                         {"ledger", ledger}});
    }
    sweeps.push_back(json{{"axis", axes[a]}, {"metric", "coverage"}, {"points", pts}});
  }
  json fm = json::array();
  for (const auto& f : fmax) fm.push_back(json{{"f_max", f.f_max}, {"q_star", f.q_star}, {"radius", f.radius}});
  return envelope(spec, json{{"sweeps", sweeps}, {"f_max", {{"mean", f_mean}, {"per_seed", fm}}}},
                  seconds_since(t0));
}

// ---------------------------------------------------------------------------
// quantizer check

MomentReport quantizer_moments(const QuantizerConfig& cfg, std::size_t draws, std::uint64_t seed) {
  cfg.validate();
  constexpr std::size_t kWidth = 1000;
  MomentReport r;
  r.draws = draws;
  r.step = cfg.step();
  r.expected_variance = cfg.dither_variance();
  Engine eng(seed);
  std::uniform_real_distribution<double> input(-cfg.clip / 2.0, cfg.clip / 2.0);
  std::vector<double> x, err(draws);
  for (std::size_t base = 0, vec = 0; base < draws; base += kWidth, ++vec) {
    const std::size_t w = std::min(kWidth, draws - base);
    x.resize(w);
    for (double& v : x) v = input(eng);
    const auto deq = dequantize(quantize(x, cfg, derive_seed(seed, {vec})));
    for (std::size_t j = 0; j < w; ++j) err[base + j] = deq[j] - x[j];
  }
  const double N = static_cast<double>(draws);
  for (double e : err) r.mean += e;
  r.mean /= N;
  double m2 = 0.0, m3 = 0.0, m6 = 0.0;
  for (double e : err) {
    const double c = e - r.mean;
    m2 += c * c;
    m3 += c * c * c;
    m6 += c * c * c * c * c * c;
    r.max_abs_error = std::max(r.max_abs_error, std::abs(e));
  }
  r.variance = m2 / (N - 1.0);
  r.variance_ratio = r.variance / r.expected_variance;
  r.third_moment = m3 / N;
  r.third_moment_se = std::sqrt(m6 / N / N);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t base = 0; base < draws; base += kWidth) {
    const std::size_t w = std::min(kWidth, draws - base);
    for (std::size_t j = 0; j + 1 < w; ++j) {
      const double a = err[base + j] - r.mean;
      const double b = err[base + j + 1] - r.mean;
      sxy += a * b;
      sxx += a * a;
      syy += b * b;
    }
  }
  r.neighbour_corr = sxx > 0.0 && syy > 0.0 ? sxy / std::sqrt(sxx * syy) : 1.0;
  return r;
}

json run_quant_check(const ExperimentSpec& spec) {
  spec.validate();
  const auto t0 = std::chrono::steady_clock::now();
  json moments = json::object();
  for (DitherMode mode : {DitherMode::dithered_iid, DitherMode::dithered_shared, DitherMode::round_nearest}) {
    const MomentReport r =
        quantizer_moments(QuantizerConfig{spec.bits, spec.clip, mode}, spec.moment_draws, spec.master_seed);
    const double se_mean = std::sqrt(r.variance / static_cast<double>(r.draws));
    moments[std::string(to_string(mode))] = json{
        {"draws", r.draws},
        {"step", r.step},
        {"mean", r.mean},
        {"mean_within_4se", std::abs(r.mean) < 4.0 * se_mean},
        {"variance", r.variance},
        {"expected_variance", r.expected_variance},
        {"variance_ratio", r.variance_ratio},
        {"third_moment", r.third_moment},
        {"third_moment_se", r.third_moment_se},
        {"neighbour_corr", r.neighbour_corr},
        {"max_abs_error", r.max_abs_error}};
  }

  // Measured quantization KL against the bandwidth terms, per (K, bits, mode).
  ExperimentSpec inner = spec;
  inner.seeds = spec.bandwidth_seeds;
  const Grid& Ks = spec.grids.at("K");
  const Grid& bits = spec.grids.at("bits");
  const DitherMode modes[] = {DitherMode::dithered_iid, DitherMode::dithered_shared};
  struct Cell {
    std::size_t K;
    unsigned bits;
    DitherMode mode;
  };
  std::vector<Cell> cells;
  for (double k : Ks)
    for (double b : bits)
      for (DitherMode md : modes) cells.push_back({static_cast<std::size_t>(k), static_cast<unsigned>(b), md});
  const std::size_t S = inner.seeds;
  std::vector<double> qkl(cells.size() * S);
  parallel_for(qkl.size(), spec.threads, [&](std::size_t i) {
    const Cell& c = cells[i / S];
    ExperimentSpec local = inner;
    local.mode = c.mode;
    TrainingPoint pt = default_point(local);
    pt.K = c.K;
    pt.bits = c.bits;
    qkl[i] = run_training(local, pt, i % S, false).quantization_kl;
  });
  json table = json::array();
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    const Cell& c = cells[ci];
    std::vector<double> v(qkl.begin() + static_cast<std::ptrdiff_t>(ci * S),
                          qkl.begin() + static_cast<std::ptrdiff_t>((ci + 1) * S));
    TrainingPoint pt = default_point(spec);
    pt.K = c.K;
    pt.bits = c.bits;
    const BoundParams bp = training_params(spec, pt);
    const BoundReport br = full_report(bp);
    const double limit = (c.mode == DitherMode::dithered_iid ? br.t1_quant : br.t1_quant_alt_A) * 1.10;
    table.push_back(json{{"K", c.K},
                         {"bits", c.bits},
                         {"mode", to_string(c.mode)},
                         {"quantization_kl", stat_json(v)},
                         {"bound", report_json(br)},
                         {"limit", limit},
                         {"bound_holds", summarize(v).mean <= limit}});
  }
  return envelope(spec, json{{"moments", moments}, {"bandwidth", table}}, seconds_since(t0));
}

json run_experiment(const ExperimentSpec& spec) {
  switch (spec.id) {
    case ExperimentId::e1: return run_e1(spec);
    case ExperimentId::e1_5: return run_e1_5(spec);
    case ExperimentId::e2: return run_e2(spec);
    case ExperimentId::quant_check: return run_quant_check(spec);
  }
  throw std::invalid_argument("unknown experiment");
}

}  // namespace fedlm
