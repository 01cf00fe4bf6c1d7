#include <algorithm>
#include <string>
#include <vector>

#include "fedlm/harness.hpp"

namespace fedlm {

using nlohmann::json;

namespace {

const char* const kReportKeys[] = {"t1_statistical", "t1_probe",    "t1_quant",   "t1_total",    "t1_quant_alt_A",
                                   "t1_quant_alt_B_extra", "drift_term", "delta_fl", "delta_rag",  "coverage_lb",
                                   "setsize_ub",     "delta_train", "coverage_lb_e2e"};

class Checker {
 public:
  std::vector<std::string> errors;

  bool has(const json& obj, const std::string& key, json::value_t type, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) {
      errors.push_back(where + ": missing '" + key + "'");
      return false;
    }
    const json& v = obj.at(key);
    const bool ok = type == json::value_t::number_float ? v.is_number() : v.type() == type;
    if (!ok && !(type == json::value_t::number_unsigned && v.is_number_integer() && v.get<long long>() >= 0)) {
      errors.push_back(where + ": '" + key + "' has type " + v.type_name());
      return false;
    }
    return true;
  }

  void stat(const json& obj, const std::string& key, std::size_t seeds, const std::string& where) {
    if (!has(obj, key, json::value_t::object, where)) return;
    const json& s = obj.at(key);
    const std::string w = where + "." + key;
    has(s, "mean", json::value_t::number_float, w);
    has(s, "std", json::value_t::number_float, w);
    if (has(s, "per_seed", json::value_t::array, w)) {
      if (s.at("per_seed").size() != seeds) {
        errors.push_back(w + ": per_seed has " + std::to_string(s.at("per_seed").size()) + " entries, expected " +
                         std::to_string(seeds));
      }
    }
  }

  void report(const json& obj, const std::string& where) {
    if (!has(obj, "bound", json::value_t::object, where)) return;
    for (const char* k : kReportKeys) has(obj.at("bound"), k, json::value_t::number_float, where + ".bound");
  }
};

}  // namespace

std::vector<std::string> validate_result(const json& doc) {
  Checker c;
  if (!doc.is_object()) return {"document is not a JSON object"};
  if (c.has(doc, "schema_version", json::value_t::number_unsigned, "$") && doc.at("schema_version") != kSchemaVersion) {
    c.errors.push_back("$: schema_version " + doc.at("schema_version").dump() + " is not " +
                       std::to_string(kSchemaVersion));
  }
  if (!c.has(doc, "experiment", json::value_t::string, "$")) return c.errors;
  ExperimentId id;
  try {
    id = parse_experiment(doc.at("experiment").get<std::string>());
  } catch (const std::invalid_argument& e) {
    c.errors.push_back(std::string("$: ") + e.what());
    return c.errors;
  }
  c.has(doc, "config", json::value_t::object, "$");
  std::size_t seeds = 0;
  if (c.has(doc, "metadata", json::value_t::object, "$")) {
    const json& m = doc.at("metadata");
    c.has(m, "config_hash", json::value_t::string, "$.metadata");
    c.has(m, "version", json::value_t::string, "$.metadata");
    c.has(m, "wall_time_s", json::value_t::number_float, "$.metadata");
    if (c.has(m, "seeds", json::value_t::number_unsigned, "$.metadata")) seeds = m.at("seeds").get<std::size_t>();
    if (c.has(m, "full_grid", json::value_t::boolean, "$.metadata") && m.at("full_grid").get<bool>() &&
        doc.contains("config") && doc.at("config").contains("grids")) {
      for (const auto& [axis, grid] : full_grids(id)) {
        const json& g = doc.at("config").at("grids");
        if (!g.contains(axis) || g.at(axis).get<Grid>() != grid) {
          c.errors.push_back("$.config.grids." + axis + ": full_grid is set but the grid differs");
        }
      }
    }
  }

  if (id == ExperimentId::quant_check) {
    if (c.has(doc, "moments", json::value_t::object, "$") && !doc.at("moments").contains("dithered_iid")) {
      c.errors.push_back("$.moments: missing 'dithered_iid'");
    }
    if (c.has(doc, "bandwidth", json::value_t::array, "$")) {
      std::size_t i = 0;
      for (const json& row : doc.at("bandwidth")) {
        const std::string w = "$.bandwidth[" + std::to_string(i++) + "]";
        c.has(row, "quantization_kl", json::value_t::object, w);
        c.has(row, "limit", json::value_t::number_float, w);
        c.has(row, "bound_holds", json::value_t::boolean, w);
        c.report(row, w);
      }
    }
    return c.errors;
  }

  if (!c.has(doc, "sweeps", json::value_t::array, "$")) return c.errors;
  if (doc.at("sweeps").empty()) c.errors.push_back("$.sweeps: empty");
  std::size_t si = 0;
  for (const json& sweep : doc.at("sweeps")) {
    const std::string ws = "$.sweeps[" + std::to_string(si++) + "]";
    c.has(sweep, "axis", json::value_t::string, ws);
    if (!c.has(sweep, "points", json::value_t::array, ws)) continue;
    std::size_t pi = 0;
    for (const json& pt : sweep.at("points")) {
      const std::string w = ws + ".points[" + std::to_string(pi++) + "]";
      c.has(pt, "value", json::value_t::number_float, w);
      c.has(pt, "params", json::value_t::object, w);
      c.has(pt, "bound_holds", json::value_t::boolean, w);
      c.report(pt, w);
      switch (id) {
        case ExperimentId::e1:
          c.stat(pt, "kl", seeds, w);
          c.has(pt, "ledger", json::value_t::object, w);
          break;
        case ExperimentId::e1_5:
          c.stat(pt, "kl", seeds, w);
          c.stat(pt, "homogeneous_kl", seeds, w);
          c.stat(pt, "drift_term", seeds, w);
          c.has(pt, "bound_value", json::value_t::number_float, w);
          break;
        case ExperimentId::e2:
          c.stat(pt, "coverage", seeds, w);
          c.stat(pt, "set_size", seeds, w);
          c.has(pt, "coverage_holds", json::value_t::boolean, w);
          c.has(pt, "setsize_holds", json::value_t::boolean, w);
          c.has(pt, "ledger", json::value_t::object, w);
          break;
        case ExperimentId::quant_check: break;
      }
    }
  }
  return c.errors;
}

}  // namespace fedlm
