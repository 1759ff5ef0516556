#pragma once

// Run configuration: every tunable of grouping, fitting, map generation and
// the hyperparameter sweeps, with strict JSON (de)serialisation.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ulmflow/hessian_grouping.hpp"
#include "ulmflow/maps.hpp"
#include "ulmflow/svi.hpp"

namespace ulmflow {

struct SweepConfig {
  std::vector<double> count_thresholds;  // c_T grid
  std::vector<int> box_half_widths;      // h_a grid

  /// c_T 0..100 step 5 and h_a 0..20 step 1.
  static SweepConfig defaults();
};

struct RunConfig {
  GroupingConfig grouping;
  SviConfig svi;
  EnhanceConfig enhance;
  SweepConfig sweep = SweepConfig::defaults();
  std::uint64_t seed = 0;
  int workers = 0;  // 0: ULMFLOW_WORKERS or hardware concurrency
  std::string output_dir;

  int resolved_workers() const;
};

/// Carries one diagnostic per violated rule.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json to_json(const GroupingConfig& cfg);
nlohmann::json to_json(const SviConfig& cfg);
nlohmann::json to_json(const EnhanceConfig& cfg);

/// Missing keys keep their defaults; unknown keys, wrong types and
/// constraint violations are all collected into one ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// FNV-1a 64 of the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

}  // namespace ulmflow
