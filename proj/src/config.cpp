#include "ulmflow/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "ulmflow/parallel.hpp"

namespace ulmflow {

using nlohmann::json;

SweepConfig SweepConfig::defaults() {
  SweepConfig s;
  for (int c = 0; c <= 100; c += 5) s.count_thresholds.push_back(c);
  for (int h = 0; h <= 20; ++h) s.box_half_widths.push_back(h);
  return s;
}

int RunConfig::resolved_workers() const { return workers > 0 ? workers : default_worker_count(); }

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += "\n  - " + x;
  return s;
}

/// Reads typed members of one JSON object and records every problem.
class Reader {
 public:
  Reader(const json& obj, std::string path, std::vector<std::string>& problems)
      : obj_(obj), path_(std::move(path)), problems_(problems) {
    if (!obj_.is_object()) problems_.push_back(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return;
    const json& v = obj_.at(key);
    const bool ok = [&] {
      if constexpr (std::is_same_v<T, bool>) return v.is_boolean();
      else if constexpr (std::is_integral_v<T>) return v.is_number_integer();
      else if constexpr (std::is_floating_point_v<T>) return v.is_number();
      else if constexpr (std::is_same_v<T, std::string>) return v.is_string();
      else return v.is_array();
    }();
    if (!ok) {
      problems_.push_back(path_ + "." + key + ": wrong type (" + v.type_name() + ")");
      return;
    }
    try {
      out = v.get<T>();
    } catch (const json::exception& e) {
      problems_.push_back(path_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return nullptr;
    return &obj_.at(key);
  }

  void reject_unknown() {
    if (!obj_.is_object()) return;
    for (const auto& [k, v] : obj_.items())
      if (!seen_.count(k)) problems_.push_back(path_ + "." + k + ": unknown key");
  }

 private:
  const json& obj_;
  std::string path_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

template <typename Fn>
void check(std::vector<std::string>& problems, Fn&& validate) {
  try {
    validate();
  } catch (const std::exception& e) {
    problems.push_back(e.what());
  }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error("invalid configuration:" + join(problems)), problems_(std::move(problems)) {}

json to_json(const GroupingConfig& g) {
  return {{"r_min", g.r_min},
          {"r_max", g.r_max},
          {"r_step", g.r_step},
          {"slab_half_thickness", g.slab_half_thickness},
          {"angle_threshold_deg", g.angle_threshold_deg},
          {"min_samples", g.min_samples},
          {"seed_stride", g.seed_stride}};
}

json to_json(const SviConfig& s) {
  return {{"mc_samples", s.mc_samples},
          {"learning_rate", s.learning_rate},
          {"iterations", s.iterations},
          {"lambda", s.lambda},
          {"restarts", s.restarts},
          {"radius_limit_low", s.radius_limit_low},
          {"radius_limit_high", s.radius_limit_high},
          {"prior_sigma_a", s.prior_sigma_a},
          {"prior_sigma_other", s.prior_sigma_other},
          {"initial_sigma", s.initial_sigma},
          {"optimize_sigma", s.optimize_sigma},
          {"adam_beta1", s.adam_beta1},
          {"adam_beta2", s.adam_beta2},
          {"adam_epsilon", s.adam_epsilon},
          {"tail_average", s.tail_average}};
}

json to_json(const EnhanceConfig& e) {
  return {{"count_threshold", e.count_threshold},
          {"copy_back_original", e.copy_back_original},
          {"pressure_smooth_sigma", e.pressure_smooth_sigma}};
}

json to_json(const RunConfig& c) {
  return {{"grouping", to_json(c.grouping)},
          {"svi", to_json(c.svi)},
          {"enhance", to_json(c.enhance)},
          {"sweep", {{"count_thresholds", c.sweep.count_thresholds}, {"box_half_widths", c.sweep.box_half_widths}}},
          {"seed", c.seed},
          {"workers", c.workers},
          {"output_dir", c.output_dir}};
}

RunConfig run_config_from_json(const json& j) {
  std::vector<std::string> problems;
  RunConfig c;
  Reader top(j, "config", problems);
  top.get("seed", c.seed);
  top.get("workers", c.workers);
  top.get("output_dir", c.output_dir);
  if (const json* g = top.child("grouping")) {
    Reader r(*g, "config.grouping", problems);
    r.get("r_min", c.grouping.r_min);
    r.get("r_max", c.grouping.r_max);
    r.get("r_step", c.grouping.r_step);
    r.get("slab_half_thickness", c.grouping.slab_half_thickness);
    r.get("angle_threshold_deg", c.grouping.angle_threshold_deg);
    r.get("min_samples", c.grouping.min_samples);
    r.get("seed_stride", c.grouping.seed_stride);
    r.reject_unknown();
  }
  if (const json* s = top.child("svi")) {
    Reader r(*s, "config.svi", problems);
    r.get("mc_samples", c.svi.mc_samples);
    r.get("learning_rate", c.svi.learning_rate);
    r.get("iterations", c.svi.iterations);
    r.get("lambda", c.svi.lambda);
    r.get("restarts", c.svi.restarts);
    r.get("radius_limit_low", c.svi.radius_limit_low);
    r.get("radius_limit_high", c.svi.radius_limit_high);
    r.get("prior_sigma_a", c.svi.prior_sigma_a);
    r.get("prior_sigma_other", c.svi.prior_sigma_other);
    r.get("initial_sigma", c.svi.initial_sigma);
    r.get("optimize_sigma", c.svi.optimize_sigma);
    r.get("adam_beta1", c.svi.adam_beta1);
    r.get("adam_beta2", c.svi.adam_beta2);
    r.get("adam_epsilon", c.svi.adam_epsilon);
    r.get("tail_average", c.svi.tail_average);
    r.reject_unknown();
  }
  if (const json* e = top.child("enhance")) {
    Reader r(*e, "config.enhance", problems);
    r.get("count_threshold", c.enhance.count_threshold);
    r.get("copy_back_original", c.enhance.copy_back_original);
    r.get("pressure_smooth_sigma", c.enhance.pressure_smooth_sigma);
    r.reject_unknown();
  }
  if (const json* s = top.child("sweep")) {
    Reader r(*s, "config.sweep", problems);
    r.get("count_thresholds", c.sweep.count_thresholds);
    r.get("box_half_widths", c.sweep.box_half_widths);
    r.reject_unknown();
  }
  top.reject_unknown();

  check(problems, [&] { c.grouping.validate(); });
  check(problems, [&] { c.svi.validate(); });
  check(problems, [&] { c.enhance.validate(); });
  for (double t : c.sweep.count_thresholds)
    if (!(t >= 0.0)) problems.push_back("config.sweep.count_thresholds: values must be >= 0");
  for (int h : c.sweep.box_half_widths)
    if (h < 0) problems.push_back("config.sweep.box_half_widths: values must be >= 0");
  if (c.workers < 0) problems.push_back("config.workers: must be >= 0");
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"config file not readable: " + path.string()});
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError({path.string() + ": " + e.what()});
  }
  return run_config_from_json(j);
}

std::string config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ulmflow
