#pragma once

// Seeded experiment runner. Each experiment sweeps one axis at a time over
// a grid, replicates every point over `seeds` replicate seeds and emits one
// JSON document (see docs/schema.md).
//
// Replicate seed s is derive_seed(master_seed, {s}); every random stream
// below it is keyed by role and node only, never by grid point, so points
// of a sweep share their randomness and a replicate is the same whether it
// runs alone or in a batch.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedlm/quant.hpp"

namespace fedlm {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::string_view kVersion = "0.1.0";

enum class ExperimentId { e1, e1_5, e2, quant_check };

std::string_view to_string(ExperimentId id) noexcept;
ExperimentId parse_experiment(std::string_view name);

using Grid = std::vector<double>;

struct ExperimentSpec {
  ExperimentId id = ExperimentId::e1;
  std::size_t seeds = 40;
  std::uint64_t seed_offset = 0;  // first replicate index
  std::uint64_t master_seed = 1;
  unsigned threads = 1;
  bool full = false;  // full-scale grids instead of the reduced CI grids

  // training defaults
  std::size_t K = 4;
  std::uint64_t n = 3000;
  std::size_t m = 3000;
  unsigned bits = 8;
  std::size_t V = 256;
  std::size_t rounds = 1;
  double clip = 20.0;
  double beta = 0.5;
  DitherMode mode = DitherMode::dithered_iid;
  std::uint64_t drift_n = 30000;  // n for the drift grid

  // calibration defaults
  std::size_t cal_K = 4;
  std::size_t cal_V = 256;
  std::uint64_t cal_samples = 0;  // node model data; 0 scores with the ground truth
  std::size_t n_cal = 3000;
  unsigned score_bits = 8;
  unsigned cal_bits = 8;
  double alpha = 0.1;
  std::size_t n_test = 1000;
  double s_max = 0.0;  // 0 selects -log(1e-6)
  std::size_t fmax_samples = 20000;
  double fmax_radius = 0.5;

  // bound constants
  double delta = 0.05;
  double c1 = 1.0;
  double c2 = 1.0;
  double rho = 1.0;
  double c_quantile = 1.0;

  // quantizer check
  std::size_t moment_draws = 1000000;
  std::size_t bandwidth_seeds = 5;

  std::map<std::string, Grid> grids;  // sweep axis -> values

  double score_max() const;
  void validate() const;
};

/// Defaults and grids for `id`; full-scale grids and seed counts when `full`,
/// reduced grids otherwise.
ExperimentSpec default_spec(ExperimentId id, bool full);
/// Full-scale grids for `id`, by axis.
std::map<std::string, Grid> full_grids(ExperimentId id);
/// Axis order of the sweeps.
std::vector<std::string> sweep_axes(ExperimentId id);

/// Applies `key = value` lines ('#' starts a comment). Grid keys are
/// `grid.<axis> = v1, v2, ...`. Throws std::invalid_argument on an unknown
/// key or a malformed value, naming the line.
void apply_config(ExperimentSpec& spec, std::string_view text);
void apply_config_file(ExperimentSpec& spec, const std::string& path);

/// Thread count from FEDLM_THREADS, else `fallback`.
unsigned threads_from_env(unsigned fallback);

/// Canonical JSON of the spec (no output path, no thread count).
nlohmann::json spec_to_json(const ExperimentSpec& spec);
/// FNV-1a over the canonical spec dump, as 16 hex digits.
std::string config_hash(const ExperimentSpec& spec);

nlohmann::json run_e1(const ExperimentSpec& spec);
nlohmann::json run_e1_5(const ExperimentSpec& spec);
nlohmann::json run_e2(const ExperimentSpec& spec);
nlohmann::json run_quant_check(const ExperimentSpec& spec);
nlohmann::json run_experiment(const ExperimentSpec& spec);

/// Student KL for each replicate of one training point (grid axes not
/// involved): the building block of the K/n/m/bits/V sweeps.
struct TrainingPoint {
  std::size_t K = 4;
  std::uint64_t n = 3000;
  std::size_t m = 3000;
  unsigned bits = 8;
  std::size_t V = 256;
  double drift = 0.0;
};
std::vector<double> training_point_kl(const ExperimentSpec& spec, const TrainingPoint& point);

/// Moment statistics of the quantization error of dithered_iid (or any mode)
/// over `draws` coordinates drawn uniformly in [-clip/2, clip/2].
struct MomentReport {
  std::size_t draws = 0;
  double step = 0.0;
  double mean = 0.0;
  double variance = 0.0;
  double expected_variance = 0.0;  // step^2 / 12
  double variance_ratio = 0.0;
  double third_moment = 0.0;
  double third_moment_se = 0.0;
  double neighbour_corr = 0.0;  // correlation of errors at adjacent coordinates
  double max_abs_error = 0.0;
};
MomentReport quantizer_moments(const QuantizerConfig& cfg, std::size_t draws, std::uint64_t seed);

/// Schema problems in a result document; empty when valid.
std::vector<std::string> validate_result(const nlohmann::json& doc);

}  // namespace fedlm
