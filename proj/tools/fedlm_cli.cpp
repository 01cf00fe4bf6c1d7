// fedlm: experiment runner and calculators.
//
//   fedlm run <e1|e1_5|e2|quant_check> [--seeds N] [--out PATH] [--config FILE] [--full]
//   fedlm bounds --K 4 --V 256 --bits 8 --clip 20 ...
//   fedlm quant-check [--bits 8] [--clip 20] [--draws 1000000]
//   fedlm validate result.json

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "fedlm/bounds.hpp"
#include "fedlm/harness.hpp"

namespace {

using nlohmann::json;

int cmd_run(const std::string& name, std::size_t seeds, const std::string& out, const std::string& config, bool full,
            unsigned threads, std::uint64_t master_seed, bool master_set) {
  fedlm::ExperimentSpec spec = fedlm::default_spec(fedlm::parse_experiment(name), full);
  spec.threads = fedlm::threads_from_env(std::max(1U, std::thread::hardware_concurrency()));
  if (!config.empty()) fedlm::apply_config_file(spec, config);
  if (seeds > 0) spec.seeds = seeds;
  if (threads > 0) spec.threads = threads;
  if (master_set) spec.master_seed = master_seed;
  const json doc = fedlm::run_experiment(spec);
  const std::string text = doc.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write '" + out + "'");
    f << text;
    std::cerr << "wrote " << out << " (" << doc["metadata"]["wall_time_s"].get<double>() << " s)\n";
  }
  return 0;
}

int cmd_bounds(const fedlm::BoundParams& p, double kl_bar, double drift, bool as_json) {
  const fedlm::BoundReport r = fedlm::full_report(p, drift, kl_bar);
  const std::pair<const char*, double> rows[] = {
      {"t1_statistical", r.t1_statistical}, {"t1_probe", r.t1_probe},
      {"t1_quant", r.t1_quant},             {"t1_total", r.t1_total},
      {"t1_quant_alt_A", r.t1_quant_alt_A}, {"t1_quant_alt_B_extra", r.t1_quant_alt_B_extra},
      {"drift_term", r.drift_term},         {"delta_fl", r.delta_fl},
      {"delta_rag", r.delta_rag},           {"coverage_lb", r.coverage_lb},
      {"setsize_ub", r.setsize_ub},         {"delta_train", r.delta_train},
      {"coverage_lb_e2e", r.coverage_lb_e2e}};
  if (as_json) {
    json j;
    for (const auto& [k, v] : rows) j[k] = v;
    std::cout << j.dump(2) << "\n";
  } else {
    for (const auto& [k, v] : rows) std::printf("%-22s %.6e\n", k, v);
  }
  return 0;
}

int cmd_quant_check(unsigned bits, double clip, std::size_t draws, std::uint64_t seed) {
  const fedlm::QuantizerConfig cfg{bits, clip, fedlm::DitherMode::dithered_iid};
  const fedlm::MomentReport r = fedlm::quantizer_moments(cfg, draws, seed);
  const double se = std::sqrt(r.variance / static_cast<double>(r.draws));
  const bool mean_ok = std::abs(r.mean) < 4.0 * se;
  const bool var_ok = r.variance_ratio >= 0.95 && r.variance_ratio <= 1.05;
  const bool corr_ok = std::abs(r.neighbour_corr) < 0.01;
  const bool skew_ok = std::abs(r.third_moment) < 4.0 * r.third_moment_se;
  const bool bound_ok = r.max_abs_error <= r.step / 2.0 * (1.0 + 1e-12);
  std::printf("dithered_iid  bits=%u clip=%g draws=%zu step=%.6g\n", bits, clip, r.draws, r.step);
  std::printf("%s mean error       %+.3e  (4 se = %.3e)\n", mean_ok ? "PASS" : "FAIL", r.mean, 4.0 * se);
  std::printf("%s variance ratio   %.4f   (target [0.95, 1.05] of step^2/12 = %.4e)\n", var_ok ? "PASS" : "FAIL",
              r.variance_ratio, r.expected_variance);
  std::printf("%s neighbour corr   %+.4f\n", corr_ok ? "PASS" : "FAIL", r.neighbour_corr);
  std::printf("%s third moment     %+.3e  (4 se = %.3e)\n", skew_ok ? "PASS" : "FAIL", r.third_moment,
              4.0 * r.third_moment_se);
  std::printf("%s max |error|      %.6g  (step/2 = %.6g)\n", bound_ok ? "PASS" : "FAIL", r.max_abs_error,
              r.step / 2.0);
  return mean_ok && var_ok && corr_ok && skew_ok && bound_ok ? 0 : 1;
}

int cmd_validate(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    std::cerr << path << ": not JSON: " << e.what() << "\n";
    return 1;
  }
  const auto errors = fedlm::validate_result(doc);
  if (errors.empty()) {
    std::cout << path << ": ok (" << doc["experiment"].get<std::string>() << ", schema "
              << doc["schema_version"] << ")\n";
    return 0;
  }
  for (const auto& e : errors) std::cerr << path << ": " << e << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated LM protocol simulator"};
  app.require_subcommand(1);

  std::string experiment, out, config;
  std::size_t seeds = 0;
  unsigned threads = 0;
  bool full = false;
  std::uint64_t master_seed = 1;
  auto* run = app.add_subcommand("run", "Run an experiment and write its JSON summary");
  run->add_option("experiment", experiment, "e1, e1_5, e2 or quant_check")->required();
  run->add_option("--seeds", seeds, "Replicates per grid point");
  run->add_option("--out", out, "Output JSON path (stdout when omitted)");
  run->add_option("--config", config, "key = value config file");
  run->add_flag("--full", full, "Use the full-scale grids");
  run->add_option("--threads", threads, "Worker threads (default FEDLM_THREADS or all cores)");
  auto* master_opt = run->add_option("--master-seed", master_seed, "Master seed");

  fedlm::BoundParams bp;
  double bits = 8, kl_bar = 0.0, drift = 0.0;
  bool have_d = false, as_json = false;
  std::vector<double> score_bits;
  auto* bounds = app.add_subcommand("bounds", "Print every bound for one parameter set");
  bounds->add_option("--K", bp.K, "Nodes");
  bounds->add_option("--n", bp.n, "Samples per node");
  bounds->add_option("--m", bp.m, "Probes");
  bounds->add_option("--V", bp.V, "Vocabulary size");
  auto* d_opt = bounds->add_option("--d", bp.d, "Parameter count (default V(V-1))");
  bounds->add_option("--bits", bits, "Bits per logit coordinate");
  bounds->add_option("--clip", bp.clip, "Logit clip");
  bounds->add_option("--rho", bp.rho, "Density ratio");
  bounds->add_option("--delta", bp.delta, "Failure probability");
  bounds->add_option("--c1", bp.c1, "Statistical constant");
  bounds->add_option("--c2", bp.c2, "Probe constant");
  bounds->add_option("--eps-opt", bp.eps_opt, "Optimization slack");
  bounds->add_option("--eps-fit", bp.eps_fit, "Fit slack");
  bounds->add_option("--alpha", bp.alpha, "Miscoverage target");
  bounds->add_option("--n-cal", bp.n_cal, "Calibration size");
  bounds->add_option("--B-i", score_bits, "Per-node score bits (one value per node)");
  bounds->add_option("--B-cal", bp.cal_bits, "Calibration grid bits");
  bounds->add_option("--s-max", bp.s_max, "Score ceiling");
  bounds->add_option("--f-max", bp.f_max, "Score density bound");
  bounds->add_option("--c", bp.c_quantile, "Quantile constant");
  bounds->add_option("--kl-bar", kl_bar, "Training KL for the propagation slack");
  bounds->add_option("--drift", drift, "Heterogeneity drift term");
  bounds->add_flag("--json", as_json, "Print JSON");

  unsigned qbits = 8;
  double qclip = 20.0;
  std::size_t draws = 1000000;
  std::uint64_t qseed = 1;
  auto* qc = app.add_subcommand("quant-check", "Quantizer moment suite");
  qc->add_option("--bits", qbits, "Bits per coordinate");
  qc->add_option("--clip", qclip, "Clip");
  qc->add_option("--draws", draws, "Number of coordinates");
  qc->add_option("--seed", qseed, "Seed");

  std::string path;
  auto* val = app.add_subcommand("validate", "Check a result JSON against the schema");
  val->add_option("json", path, "Result file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(experiment, seeds, out, config, full, threads, master_seed, master_opt->count() > 0);
    if (*bounds) {
      bp.bits_per_coord = bits;
      have_d = d_opt->count() > 0;
      if (!have_d) bp.d = static_cast<double>(bp.V) * static_cast<double>(bp.V - 1);
      if (!score_bits.empty()) bp.score_bits = score_bits;
      else bp.score_bits.assign(bp.K, 8.0);
      return cmd_bounds(bp, kl_bar, drift, as_json);
    }
    if (*qc) return cmd_quant_check(qbits, qclip, draws, qseed);
    if (*val) return cmd_validate(path);
  } catch (const std::exception& e) {
    std::cerr << "fedlm: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
