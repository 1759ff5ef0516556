#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ulmflow/config.hpp"
#include "ulmflow/core_model.hpp"
#include "ulmflow/experiments.hpp"
#include "ulmflow/io.hpp"
#include "ulmflow/maps.hpp"
#include "ulmflow/metrics.hpp"
#include "ulmflow/random.hpp"
#include "ulmflow/simd/kernels.hpp"
#include "ulmflow/simulate.hpp"
#include "ulmflow/svi.hpp"

namespace ulmflow::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Failure : public std::runtime_error {
 public:
  Failure(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

[[noreturn]] void fail(int code, const std::string& msg) { throw Failure(code, msg); }

void require_dir(const fs::path& dir) {
  const fs::path d = dir.empty() ? fs::path(".") : dir;
  if (!fs::is_directory(d)) fail(kExitUsage, "output directory does not exist: " + d.string());
}

void require_parent(const fs::path& file) { require_dir(file.parent_path()); }

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return "";
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return hex64(h);
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) fail(kExitFailure, "cannot write " + p.string());
  f << j.dump(2) << "\n";
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw IoError(IoError::Kind::missing, "file not found: " + p.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::corrupt, p.string() + ": " + e.what());
  }
}

/// Minimal CSV table with a fixed header; every cell is text.
class CsvWriter {
 public:
  CsvWriter(const fs::path& p, const std::vector<std::string>& header) : f_(p, std::ios::trunc), width_(header.size()) {
    if (!f_) fail(kExitFailure, "cannot write " + p.string());
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    if (cells.size() != width_) throw std::logic_error("CsvWriter: row width mismatch");
    for (std::size_t i = 0; i < cells.size(); ++i) f_ << (i ? "," : "") << cells[i];
    f_ << "\n";
  }

 private:
  std::ofstream f_;
  std::size_t width_;
};

std::vector<std::map<std::string, std::string>> read_csv_table(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError(IoError::Kind::missing, "file not found: " + p.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw IoError(IoError::Kind::corrupt, "empty table: " + p.string());
  const auto header = split(line);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw IoError(IoError::Kind::corrupt, "ragged row in " + p.string());
    std::map<std::string, std::string> r;
    for (std::size_t i = 0; i < header.size(); ++i) r[header[i]] = cells[i];
    rows.push_back(std::move(r));
  }
  return rows;
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- run configuration flags -------------------------------------------------------

struct ConfigFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<double> r_min, r_max, r_step;
  std::optional<int> seed_stride, min_samples;
  std::optional<double> count_threshold;
  bool copy_back = false;
  bool file_has_grouping = false;

  void attach(CLI::App* app, bool pipeline) {
    app->add_option("--config", config_path, "RunConfig JSON file")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "master seed (overrides config)");
    app->add_option("--workers", workers, "worker threads (0: ULMFLOW_WORKERS or all cores)");
    if (!pipeline) return;
    app->add_option("--r-min", r_min, "smallest search radius, voxels");
    app->add_option("--r-max", r_max, "largest search radius, voxels");
    app->add_option("--r-step", r_step, "search radius step, voxels");
    app->add_option("--seed-stride", seed_stride, "use every k-th non-zero voxel as a seed");
    app->add_option("--min-samples", min_samples, "minimum samples per cross-section");
    app->add_option("--c-t", count_threshold, "count threshold c_T on fractional hit counts");
    app->add_flag("--copy-back", copy_back, "restore original speeds where the model map is empty");
  }

  bool grouping_overridden() const {
    return file_has_grouping || r_min || r_max || r_step || seed_stride || min_samples;
  }

  RunConfig resolve() {
    RunConfig c;
    if (!config_path.empty()) {
      c = load_run_config(config_path);
      const json j = read_json(config_path);
      file_has_grouping = j.is_object() && j.contains("grouping");
    }
    if (seed) c.seed = *seed;
    if (workers) c.workers = *workers;
    if (r_min) c.grouping.r_min = *r_min;
    if (r_max) c.grouping.r_max = *r_max;
    if (r_step) c.grouping.r_step = *r_step;
    if (seed_stride) c.grouping.seed_stride = *seed_stride;
    if (min_samples) c.grouping.min_samples = *min_samples;
    if (count_threshold) c.enhance.count_threshold = *count_threshold;
    if (copy_back) c.enhance.copy_back_original = true;
    return run_config_from_json(to_json(c));
  }
};

void echo_identity(std::ostream& out, std::uint64_t seed, const json& cfg) {
  out << "seed=" << seed << " config_hash=" << config_hash(cfg) << "\n";
}

// --- simulate ----------------------------------------------------------------------

struct SectionArgs {
  double radius = 200e-6;
  double g_sharp = 7.5e5;
  double cx = 0.0, cy = 0.0;
  int n = 20;
  double noise = 20e-6;
  std::uint64_t seed = 0;
  std::string out, prefix = "section";
};

int simulate_section(const SectionArgs& a, std::ostream& out) {
  std::vector<std::string> problems;
  if (!(a.radius > 0)) problems.push_back("radius: must be > 0");
  if (!(a.g_sharp > 0)) problems.push_back("g_sharp: must be > 0");
  if (a.n < 1) problems.push_back("n: must be >= 1");
  if (!(a.noise >= 0)) problems.push_back("noise: must be >= 0");
  if (!problems.empty()) throw ConfigError(problems);
  require_dir(a.out);

  const PoiseuilleParams p{a.g_sharp, a.radius, {a.cx, a.cy}};
  const json cfg = {{"kind", "section"}, {"g_sharp", a.g_sharp}, {"radius", a.radius},
                    {"center", {a.cx, a.cy}}, {"n", a.n}, {"noise_std", a.noise}, {"seed", a.seed}};
  const CrossSectionDraw d = sample_cross_section(p, a.n, a.noise, a.seed);
  const fs::path dir(a.out);
  write_samples_csv(dir / (a.prefix + "_samples.csv"), d.samples);
  json truth = cfg;
  truth["mean_speed"] = mean_speed(p);
  truth["config_hash"] = config_hash(cfg);
  write_json(dir / (a.prefix + "_truth.json"), truth);
  echo_identity(out, a.seed, cfg);
  out << "wrote " << (dir / (a.prefix + "_samples.csv")).string() << "\n";
  return kExitOk;
}

json tube_json(const TubeSpec& t) {
  return {{"axis_origin", {t.axis_origin.x, t.axis_origin.y, t.axis_origin.z}},
          {"axis_direction", {t.axis_direction.x, t.axis_direction.y, t.axis_direction.z}},
          {"radius", t.radius},
          {"peak_speed", t.peak_speed},
          {"length", t.length}};
}

struct TubesArgs {
  double angle = 0.0;
  int tracks = 10;
  double voxel_um = 5.0;
  std::vector<int> dims{76, 64, 64};
  std::uint64_t seed = 0;
  std::string out, prefix = "tubes";
};

int simulate_tubes(const TubesArgs& a, std::ostream& out) {
  std::vector<std::string> problems;
  if (a.tracks < 1) problems.push_back("tracks: must be >= 1");
  if (!(a.voxel_um > 0)) problems.push_back("voxel_um: must be > 0");
  if (a.dims.size() != 3 || a.dims[0] < 1 || a.dims[1] < 1 || a.dims[2] < 1)
    problems.push_back("dims: need three positive integers");
  if (!problems.empty()) throw ConfigError(problems);
  require_dir(a.out);

  TubePairConfig pc;
  pc.angle_deg = a.angle;
  pc.tracks_per_tube = a.tracks;
  pc.voxel_um = a.voxel_um;
  pc.dims = {a.dims[0], a.dims[1], a.dims[2]};
  pc.seed = a.seed;
  const json cfg = {{"kind", "tubes"}, {"angle_deg", a.angle}, {"tracks_per_tube", a.tracks},
                    {"voxel_um", a.voxel_um}, {"dims", a.dims}, {"seed", a.seed}};
  TubePhantom ph;
  try {
    ph = generate_tube_pair(pc);
  } catch (const std::invalid_argument& e) {
    throw ConfigError({e.what()});
  }
  const fs::path dir(a.out);
  write_bundle(dir / a.prefix, ph.bundle);
  write_field_set(dir / (a.prefix + "_truth"), to_field_set(ph.truth, ph.bundle.dims, a.voxel_um));
  write_trajectories_csv(dir / (a.prefix + "_trajectories.csv"), ph.tracks);
  json meta = cfg;
  meta["config_hash"] = config_hash(cfg);
  meta["tubes"] = {tube_json(ph.tubes[0]), tube_json(ph.tubes[1])};
  meta["trajectories"] = ph.tracks.size();
  write_json(dir / (a.prefix + "_meta.json"), meta);
  echo_identity(out, a.seed, cfg);
  out << "wrote " << sidecar_path(dir / a.prefix).string() << " and "
      << sidecar_path(dir / (a.prefix + "_truth")).string() << "\n";
  return kExitOk;
}

struct BifurcationArgs {
  double duration = 2.0;
  double start = 2.0;
  double rate = 200.0;
  double voxel_um = 5.0;
  int size = 200;
  std::uint64_t seed = 0;
  std::string out, prefix = "bifurcation";
};

int simulate_bifurcation(const BifurcationArgs& a, std::ostream& out) {
  BifurcationSpec spec;
  spec.duration = a.duration;
  spec.start_time = a.start;
  spec.injection_rate = a.rate;
  std::vector<std::string> problems;
  try {
    spec.validate();
  } catch (const std::exception& e) {
    problems.push_back(e.what());
  }
  if (!(a.voxel_um > 0)) problems.push_back("voxel_um: must be > 0");
  if (a.size < 1) problems.push_back("size: must be >= 1");
  if (!problems.empty()) throw ConfigError(problems);
  require_dir(a.out);

  const json cfg = {{"kind", "bifurcation"}, {"duration", a.duration}, {"start_time", a.start},
                    {"injection_rate", a.rate}, {"voxel_um", a.voxel_um}, {"size", a.size},
                    {"seed", a.seed}};
  const Dims dims{a.size, a.size, a.size};
  const auto trajs = generate_bifurcation(spec, a.seed);
  const VolumeBundle b = rasterize_trajectories(trajs, dims, {a.voxel_um, a.voxel_um, a.voxel_um});
  const fs::path dir(a.out);
  write_bundle(dir / a.prefix, b);
  write_field_set(dir / (a.prefix + "_truth"), to_field_set(bifurcation_ground_truth(spec, dims, a.voxel_um), dims, a.voxel_um));
  write_trajectories_csv(dir / (a.prefix + "_trajectories.csv"), trajs);
  json meta = cfg;
  meta["config_hash"] = config_hash(cfg);
  meta["trajectories"] = trajs.size();
  write_json(dir / (a.prefix + "_meta.json"), meta);
  echo_identity(out, a.seed, cfg);
  out << "wrote " << sidecar_path(dir / a.prefix).string() << " (" << trajs.size() << " trajectories)\n";
  return kExitOk;
}

// --- estimate ----------------------------------------------------------------------

const std::vector<std::string> kEstimateHeader{
    "file", "method", "seed", "status", "valid", "n_samples", "radius_m", "center_x1_m", "center_x2_m",
    "g_sharp_per_m_s", "mean_speed_mps", "std_a", "std_b1", "std_b2", "std_c", "uncertainty_a",
    "uncertainty_geo", "cost"};

int estimate(const std::vector<std::string>& files, const std::string& method, ConfigFlags& flags,
             const std::string& out_path, std::ostream& out) {
  const RunConfig cfg = flags.resolve();
  require_parent(out_path);
  CsvWriter csv(out_path, kEstimateHeader);
  for (std::size_t i = 0; i < files.size(); ++i) {
    SampleSet s;
    try {
      s = read_samples_csv(files[i]);
    } catch (const IoError& e) {
      fail(e.kind() == IoError::Kind::missing ? kExitUsage : kExitCorrupt, e.what());
    }
    const std::uint64_t seed = derive_seed(cfg.seed, {i});
    std::vector<std::string> row(kEstimateHeader.size());
    row[0] = files[i];
    row[1] = method;
    row[2] = std::to_string(seed);
    row[5] = std::to_string(s.size());
    auto put_params = [&](const PoiseuilleParams& p, double vbar) {
      row[6] = num(p.radius);
      row[7] = num(p.center.x);
      row[8] = num(p.center.y);
      row[9] = num(p.g_sharp);
      row[10] = num(vbar);
    };
    if (method == "direct") {
      if (s.empty()) {
        row[3] = "empty";
        row[4] = "0";
      } else {
        const DirectEstimate d = direct_estimate(s);
        row[3] = d.degenerate ? "degenerate" : "fitted";
        row[4] = d.degenerate ? "0" : "1";
        put_params(d.params, d.mean_speed);
      }
    } else {
      SviConfig sc = cfg.svi;
      sc.rng_seed = seed;
      const PosteriorEstimate pe = fit_svi(s, sc);
      row[3] = pe.status == SviStatus::fitted ? "fitted"
               : pe.status == SviStatus::too_few_samples ? "refused_too_few_samples"
                                                          : "refused_degenerate";
      row[4] = pe.valid ? "1" : "0";
      if (!pe.refused()) {
        put_params(pe.params_physical, pe.mean_speed);
        for (int k = 0; k < 4; ++k) row[11 + k] = num(pe.stds[k]);
        row[15] = num(pe.uncertainty_a);
        row[16] = num(pe.uncertainty_geo);
        row[17] = num(pe.cost);
      }
    }
    csv.row(row);
    out << files[i] << ": " << row[3] << (row[6].empty() ? "" : " radius_m=" + row[6]) << "\n";
  }
  echo_identity(out, cfg.seed, to_json(cfg));
  return kExitOk;
}

// --- enhance -----------------------------------------------------------------------

inline constexpr int kManifestVersion = 1;

struct EnhanceJob {
  std::string bundle;
  std::string method;
  std::string out;
  int h_a = 5;
  RunConfig cfg;
};

json run_enhance(const EnhanceJob& job) {
  const auto t_start = std::chrono::steady_clock::now();
  VolumeBundle bundle;
  try {
    bundle = read_bundle(job.bundle);
  } catch (const IoError& e) {
    fail(kExitCorrupt, std::string("cannot use bundle: ") + e.what());
  }
  const double t_read = elapsed_s(t_start);

  FieldSet outset;
  outset.dims = bundle.dims;
  outset.voxel_size_um = bundle.voxel_size_um;
  json sections = json::object();
  json durations = {{"read", t_read}};
  if (job.method == "model") {
    ModelPipelineConfig mc{job.cfg.grouping, job.cfg.svi, job.cfg.seed, job.cfg.resolved_workers()};
    auto t0 = std::chrono::steady_clock::now();
    const ModelSections ms = estimate_sections(bundle, mc);
    durations["grouping_and_fitting"] = elapsed_s(t0);
    t0 = std::chrono::steady_clock::now();
    const MapAccumulators acc = accumulate_sections(ms.sections, bundle.dims, bundle.pitch_m());
    const EnhancedMaps maps =
        finalize_maps(acc, stride_adjusted(job.cfg.enhance, mc.grouping),
                     job.cfg.enhance.copy_back_original ? &bundle.speed : nullptr);
    durations["maps"] = elapsed_s(t0);
    ScalarVolume hits(bundle.dims);
    for (std::size_t i = 0; i < hits.size(); ++i) hits[i] = static_cast<float>(acc.hit_count[i]);
    outset.add("speed", maps.speed);
    outset.add("count", hits);
    outset.add("pressure", maps.pressure);
    outset.add("uncertainty", maps.uncertainty);
    const GroupingStats& st = ms.stats;
    sections = {{"seeds_tested", st.seeds_tested},
                {"seeds_tubular", st.seeds_tubular},
                {"rejected_too_few_samples", st.rejected_too_few},
                {"rejected_direction", st.rejected_angle},
                {"candidates", st.candidates},
                {"accepted", ms.sections.size()},
                {"rejected_fit", st.candidates - st.accepted},
                {"fits", ms.fits},
                {"fits_refused", ms.fits_refused},
                {"direction_check_skipped", st.direction_check_skipped}};
  } else {
    const auto t0 = std::chrono::steady_clock::now();
    outset.add("speed", smoothing_enhance(bundle, job.h_a));
    durations["smoothing"] = elapsed_s(t0);
  }
  const auto t0 = std::chrono::steady_clock::now();
  write_field_set(job.out, outset);
  durations["write"] = elapsed_s(t0);
  durations["total"] = elapsed_s(t_start);

  json outputs = json::object();
  for (const auto& [name, data] : outset.fields)
    outputs[name] = {{"file", field_path(job.out, name).filename().string()},
                     {"fnv1a64", file_hash(field_path(job.out, name))}};
  const json cfg = to_json(job.cfg);
  return {{"format", "ulmflow-manifest"},
          {"version", kManifestVersion},
          {"command", "enhance"},
          {"method", job.method},
          {"bundle", fs::absolute(job.bundle).string()},
          {"out", fs::absolute(job.out).string()},
          {"h_a", job.h_a},
          {"config", cfg},
          {"config_hash", config_hash(cfg)},
          {"seed", job.cfg.seed},
          {"isa", std::string(simd::isa_name(simd::kernels().isa))},
          {"dims", {bundle.dims.h, bundle.dims.w, bundle.dims.t}},
          {"sections", sections},
          {"durations_s", durations},
          {"outputs", outputs}};
}

fs::path manifest_path(const std::string& out_stem) { return fs::path(out_stem + ".manifest.json"); }

EnhanceJob job_from_manifest(const fs::path& path) {
  json m;
  try {
    m = read_json(path);
  } catch (const IoError& e) {
    fail(kExitUsage, std::string("cannot read manifest: ") + e.what());
  }
  EnhanceJob job;
  try {
    if (m.at("format") != "ulmflow-manifest" || m.at("version") != kManifestVersion)
      throw ConfigError({"manifest: unsupported format or version"});
    job.method = m.at("method").get<std::string>();
    job.bundle = m.at("bundle").get<std::string>();
    job.out = m.at("out").get<std::string>();
    job.h_a = m.at("h_a").get<int>();
    job.cfg = run_config_from_json(m.at("config"));
  } catch (const json::exception& e) {
    throw ConfigError({std::string("manifest: ") + e.what()});
  }
  return job;
}

int enhance(EnhanceJob job, ConfigFlags& flags, const std::string& manifest_in, std::optional<int> h_a,
            std::ostream& out, std::ostream& err) {
  json recorded;
  if (!manifest_in.empty()) {
    const std::string out_override = job.out;
    job = job_from_manifest(manifest_in);
    recorded = read_json(manifest_in);
    if (!out_override.empty()) job.out = out_override;
    if (flags.workers) job.cfg.workers = *flags.workers;
  } else {
    if (job.bundle.empty() || job.out.empty()) fail(kExitUsage, "--bundle and --out are required without --manifest");
    job.cfg = flags.resolve();
    if (h_a) job.h_a = *h_a;
  }
  if (job.method != "model" && job.method != "smooth") throw ConfigError({"method: expected model or smooth"});
  if (job.h_a < 0) throw ConfigError({"h_a: must be >= 0"});
  require_parent(job.out);

  const json manifest = run_enhance(job);
  write_json(manifest_path(job.out), manifest);
  echo_identity(out, job.cfg.seed, manifest.at("config"));
  if (job.method == "model")
    out << "accepted sections: " << manifest["sections"]["accepted"] << " of " << manifest["sections"]["candidates"]
        << " candidates\n";
  out << "wrote " << sidecar_path(job.out).string() << " and " << manifest_path(job.out).string() << "\n";

  if (!recorded.is_null()) {
    bool same = recorded.value("isa", "") == manifest.at("isa");
    for (const auto& [name, o] : manifest.at("outputs").items())
      same = same && recorded["outputs"].contains(name) && recorded["outputs"][name]["fnv1a64"] == o["fnv1a64"];
    if (!same) {
      err << "rerun outputs differ from the manifest record\n";
      return kExitFailure;
    }
    out << "rerun outputs match the manifest record\n";
  }
  return kExitOk;
}

// --- evaluate ----------------------------------------------------------------------

FieldSet read_eval_input(const std::string& stem, bool truth) {
  try {
    return read_field_set(stem);
  } catch (const IoError& e) {
    if (truth || e.kind() == IoError::Kind::missing) fail(kExitMismatch, e.what());
    fail(kExitCorrupt, e.what());
  }
}

struct EvaluateArgs {
  std::string pred, truth, estimates, truth_params, out;
  std::vector<std::string> metrics{"dice", "mse"};
};

int evaluate(const EvaluateArgs& a, std::ostream& out) {
  if (a.pred.empty() != a.truth.empty()) fail(kExitMismatch, "--pred and --truth must be given together");
  if (a.estimates.empty() != a.truth_params.empty())
    fail(kExitMismatch, "--estimates and --truth-params must be given together");
  if (a.pred.empty() && a.estimates.empty()) fail(kExitUsage, "nothing to evaluate");
  for (const auto& m : a.metrics)
    if (m != "dice" && m != "mse") throw ConfigError({"metrics: unknown metric '" + m + "'"});
  require_parent(a.out);
  CsvWriter csv(a.out, {"source", "metric", "value"});

  if (!a.pred.empty()) {
    const FieldSet truth = read_eval_input(a.truth, true);
    const FieldSet pred = read_eval_input(a.pred, false);
    if (!(truth.dims == pred.dims))
      fail(kExitMismatch, "dims mismatch: prediction " + std::to_string(pred.dims.h) + "x" +
                              std::to_string(pred.dims.w) + "x" + std::to_string(pred.dims.t) + ", truth " +
                              std::to_string(truth.dims.h) + "x" + std::to_string(truth.dims.w) + "x" +
                              std::to_string(truth.dims.t));
    GroundTruth gt;
    ScalarVolume speed;
    try {
      gt = to_ground_truth(truth);
    } catch (const IoError& e) {
      fail(kExitMismatch, std::string("truth: ") + e.what());
    }
    try {
      speed = pred.scalar("speed");
    } catch (const IoError& e) {
      fail(kExitCorrupt, std::string("prediction: ") + e.what());
    }
    const MaskVolume be = support_mask(speed);
    for (const auto& m : a.metrics) {
      double v = 0.0;
      if (m == "dice") {
        v = dice_loss(be, gt.mask);
      } else {
        try {
          v = map_mse(speed, gt.speed, be, gt.mask, gt.centerline_speed);
        } catch (const std::invalid_argument& e) {
          v = std::nan("");
          out << "mse undefined: " << e.what() << "\n";
        }
      }
      csv.row({"volume", m, num(v)});
      out << m << "=" << num(v) << "\n";
    }
  }

  if (!a.estimates.empty()) {
    json tp;
    try {
      tp = read_json(a.truth_params);
    } catch (const IoError& e) {
      fail(kExitMismatch, e.what());
    }
    PoiseuilleParams truth;
    try {
      truth = {tp.at("g_sharp").get<double>(), tp.at("radius").get<double>(),
               {tp.at("center").at(0).get<double>(), tp.at("center").at(1).get<double>()}};
    } catch (const json::exception& e) {
      fail(kExitMismatch, std::string("truth parameters: ") + e.what());
    }
    std::vector<std::map<std::string, std::string>> rows;
    try {
      rows = read_csv_table(a.estimates);
    } catch (const IoError& e) {
      fail(e.kind() == IoError::Kind::missing ? kExitUsage : kExitCorrupt, e.what());
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto& r = rows[i];
      const std::string src = "estimate_" + std::to_string(i) + ":" + r["method"];
      std::array<double, 4> e;
      e.fill(std::nan(""));
      if (!r["radius_m"].empty()) {
        const PoiseuilleParams est{std::stod(r["g_sharp_per_m_s"]), std::stod(r["radius_m"]),
                                   {std::stod(r["center_x1_m"]), std::stod(r["center_x2_m"])}};
        const ParamErrors pe = normalized_errors(est, std::stod(r["mean_speed_mps"]), truth, mean_speed(truth));
        e = {pe.radius_err, pe.center_err, pe.gsharp_err, pe.vmean_err};
      }
      for (int k = 0; k < kNumParams; ++k) csv.row({src, std::string(kParamNames[k]) + "_err", num(e[k])});
      out << src << " radius_err=" << num(e[0]) << "\n";
    }
  }
  return kExitOk;
}

// --- repro -------------------------------------------------------------------------

struct ReproArgs {
  std::string figure, out;
  std::optional<int> replicates;
  double noise = 20e-6;
  int n_min = 3, n_max = 20;
  int h_a = 5;
  int subsets = 10;
};

json cross_section_summary_json(const CrossSectionSummary& s, std::uint64_t seed) {
  json params = json::object();
  for (int k = 0; k < kNumParams; ++k)
    params[kParamNames[k]] = {{"b_r", s.better_ratio[k]}, {"wilcoxon_p", s.wilcoxon_p[k]}};
  json per = json::array();
  for (const auto& pc : s.per_count) {
    json row = {{"n", pc.n}, {"refused", pc.refused}};
    for (int k = 0; k < kNumParams; ++k)
      row[kParamNames[k]] = {{"model_median", pc.model_median[k]}, {"model_p25", pc.model_p25[k]},
                             {"model_p75", pc.model_p75[k]},       {"direct_median", pc.direct_median[k]},
                             {"direct_p25", pc.direct_p25[k]},     {"direct_p75", pc.direct_p75[k]}};
    per.push_back(row);
  }
  return {{"seed", seed},
          {"pairs", s.pairs},
          {"parameters", params},
          {"spearman_sigma_a_vs_gsharp_err", {{"rho", s.sigma_a_vs_gsharp.rho}, {"p_value", s.sigma_a_vs_gsharp.p_value}}},
          {"exp_fit_gsharp_err_vs_sigma_a", {{"amplitude", s.gsharp_err_vs_sigma_a.amplitude}, {"rate", s.gsharp_err_vs_sigma_a.rate}}},
          {"radius_median_win_share", s.radius_median_win_share},
          {"per_count", per}};
}

int repro_cross_section(const ReproArgs& a, const RunConfig& cfg, std::ostream& out) {
  CrossSectionConfig cs;
  cs.svi = cfg.svi;
  cs.seed = cfg.seed;
  cs.workers = cfg.resolved_workers();
  cs.noise_std = a.noise;
  cs.n_min = a.n_min;
  cs.n_max = a.n_max;
  if (a.replicates) cs.replicates = *a.replicates;
  std::vector<std::string> problems;
  if (cs.replicates < 1) problems.push_back("replicates: must be >= 1");
  if (cs.n_min < 1 || cs.n_max < cs.n_min) problems.push_back("n range: need 1 <= n_min <= n_max");
  if (!(cs.noise_std >= 0)) problems.push_back("noise: must be >= 0");
  if (!problems.empty()) throw ConfigError(problems);

  const auto t0 = std::chrono::steady_clock::now();
  const CrossSectionStudy st = run_cross_section_study(cs);
  const double secs = elapsed_s(t0);
  const fs::path dir(a.out);
  json summary = cross_section_summary_json(st.summary, cfg.seed);
  summary["replicates"] = cs.replicates;
  summary["noise_std"] = cs.noise_std;
  summary["runtime_s"] = secs;
  summary["config_hash"] = config_hash(to_json(cfg));

  if (a.figure == "fig2") {
    std::vector<std::string> head{"n", "replicate", "data_seed", "fit_seed", "refused", "physical", "valid"};
    for (const char* p : kParamNames) head.push_back(std::string("model_err_") + p);
    for (const char* p : kParamNames) head.push_back(std::string("direct_err_") + p);
    for (const char* c : {"sigma_a", "uncertainty_geo", "cost"}) head.push_back(c);
    CsvWriter csv(dir / "fig2_rows.csv", head);
    for (const auto& r : st.rows) {
      std::vector<std::string> row{std::to_string(r.n), std::to_string(r.replicate), std::to_string(r.data_seed),
                                   std::to_string(r.fit_seed), std::to_string(r.refused),
                                   std::to_string(r.physical), std::to_string(r.valid)};
      for (double e : r.model_err) row.push_back(num(e));
      for (double e : r.direct_err) row.push_back(num(e));
      for (double v : {r.sigma_a, r.uncertainty_geo, r.cost}) row.push_back(num(v));
      csv.row(row);
    }
    write_json(dir / "fig2_summary.json", summary);
  } else {
    CsvWriter csv(dir / "figS4_per_count.csv",
                  {"seed", "n", "parameter", "refused", "model_median", "model_p25", "model_p75", "direct_median",
                   "direct_p25", "direct_p75"});
    for (const auto& pc : st.summary.per_count)
      for (int k = 0; k < kNumParams; ++k)
        csv.row({std::to_string(cfg.seed), std::to_string(pc.n), kParamNames[k], std::to_string(pc.refused),
                 num(pc.model_median[k]), num(pc.model_p25[k]), num(pc.model_p75[k]), num(pc.direct_median[k]),
                 num(pc.direct_p25[k]), num(pc.direct_p75[k])});
    write_json(dir / "figS4_summary.json", summary);
  }

  echo_identity(out, cfg.seed, to_json(cfg));
  for (int k = 0; k < kNumParams; ++k)
    out << kParamNames[k] << ": b_r=" << num(st.summary.better_ratio[k])
        << " wilcoxon_p=" << num(st.summary.wilcoxon_p[k]) << "\n";
  out << "spearman(sigma_a, g_sharp err): rho=" << num(st.summary.sigma_a_vs_gsharp.rho)
      << " p=" << num(st.summary.sigma_a_vs_gsharp.p_value) << "\n";
  out << "exp fit: amplitude=" << num(st.summary.gsharp_err_vs_sigma_a.amplitude)
      << " rate=" << num(st.summary.gsharp_err_vs_sigma_a.rate) << "\n";
  out << "radius median win share (n >= 4): " << num(st.summary.radius_median_win_share) << "\n";
  return kExitOk;
}

json optimum_json(const MethodOptimum& m, double value, const char* key) {
  return {{key, value}, {"mean_dice_loss", m.mean_dice}, {"mean_mse", m.mean_mse}};
}

int repro_tubes(const ReproArgs& a, const RunConfig& cfg, std::ostream& out) {
  TubeStudyConfig tc = default_tube_study();
  tc.model.grouping = cfg.grouping;
  tc.model.svi = cfg.svi;
  tc.model.workers = cfg.resolved_workers();
  tc.enhance = cfg.enhance;
  tc.count_thresholds = cfg.sweep.count_thresholds;
  tc.box_half_widths = cfg.sweep.box_half_widths;
  tc.seed = cfg.seed;
  if (a.replicates) {
    if (*a.replicates < 1) throw ConfigError({"replicates: must be >= 1"});
    tc.datasets_per_setting = *a.replicates;
  }
  if (tc.count_thresholds.empty() || tc.box_half_widths.empty())
    throw ConfigError({"sweep: grids must not be empty"});

  const auto t0 = std::chrono::steady_clock::now();
  const TubeStudy st = run_tube_study(tc);
  const double secs = elapsed_s(t0);
  const fs::path dir(a.out);
  CsvWriter ds(dir / "fig3_datasets.csv",
               {"angle_deg", "tracks", "replicate", "phantom_seed", "fit_seed", "accepted_sections", "fits"});
  CsvWriter ms(dir / "fig3_model_sweep.csv",
               {"angle_deg", "tracks", "replicate", "phantom_seed", "fit_seed", "c_T", "dice_loss", "mse"});
  CsvWriter ss(dir / "fig3_smooth_sweep.csv", {"angle_deg", "tracks", "replicate", "phantom_seed", "h_a", "dice_loss", "mse"});
  for (const auto& d : st.datasets) {
    const std::vector<std::string> key{num(d.angle_deg), std::to_string(d.tracks), std::to_string(d.replicate),
                                       std::to_string(d.phantom_seed)};
    ds.row({key[0], key[1], key[2], key[3], std::to_string(d.fit_seed), std::to_string(d.accepted_sections),
            std::to_string(d.fits)});
    for (std::size_t i = 0; i < d.model.size(); ++i)
      ms.row({key[0], key[1], key[2], key[3], std::to_string(d.fit_seed), num(st.count_thresholds[i]),
              num(d.model[i].dice), num(d.model[i].mse)});
    for (std::size_t i = 0; i < d.smooth.size(); ++i)
      ss.row({key[0], key[1], key[2], key[3], std::to_string(st.box_half_widths[i]), num(d.smooth[i].dice),
              num(d.smooth[i].mse)});
  }
  json per = json::array();
  echo_identity(out, cfg.seed, to_json(cfg));
  for (const auto& s : st.per_saturation) {
    per.push_back({{"tracks", s.tracks},
                   {"model", optimum_json(s.model, st.count_thresholds[s.model.index], "c_T")},
                   {"smooth", optimum_json(s.smooth, st.box_half_widths[s.smooth.index], "h_a")}});
    out << s.tracks << " tracks: model c_T=" << st.count_thresholds[s.model.index]
        << " dice=" << num(s.model.mean_dice) << " mse=" << num(s.model.mean_mse)
        << " | smooth h_a=" << st.box_half_widths[s.smooth.index] << " dice=" << num(s.smooth.mean_dice)
        << " mse=" << num(s.smooth.mean_mse) << "\n";
  }
  write_json(dir / "fig3_summary.json",
             {{"seed", cfg.seed},
              {"config_hash", config_hash(to_json(cfg))},
              {"datasets", st.datasets.size()},
              {"runtime_s", secs},
              {"per_saturation", per},
              {"model_overall", optimum_json(st.model_overall, st.count_thresholds[st.model_overall.index], "c_T")},
              {"smooth_overall", optimum_json(st.smooth_overall, st.box_half_widths[st.smooth_overall.index], "h_a")}});
  return kExitOk;
}

int repro_bifurcation(const ReproArgs& a, const RunConfig& cfg, bool grouping_overridden, std::ostream& out) {
  BifurcationStudyConfig bc = default_bifurcation_study();
  if (grouping_overridden) bc.model.grouping = cfg.grouping;
  bc.model.svi = cfg.svi;
  bc.model.workers = cfg.resolved_workers();
  bc.enhance = cfg.enhance;
  bc.box_half_width = a.h_a;
  bc.subsets = a.subsets;
  bc.seed = cfg.seed;
  std::vector<std::string> problems;
  if (bc.subsets < 1) problems.push_back("subsets: must be >= 1");
  if (bc.box_half_width < 0) problems.push_back("h_a: must be >= 0");
  if (!problems.empty()) throw ConfigError(problems);

  const auto t0 = std::chrono::steady_clock::now();
  const BifurcationStudy st = run_bifurcation_study(bc);
  const double secs = elapsed_s(t0);
  const fs::path dir(a.out);
  CsvWriter csv(dir / "fig4_subsets.csv", {"seed", "phantom_seed", "subset", "t0_s", "t1_s", "trajectories",
                                           "accepted_sections", "mse_model", "mse_smooth"});
  for (const auto& r : st.subsets)
    csv.row({std::to_string(cfg.seed), std::to_string(st.phantom_seed), std::to_string(r.subset), num(r.t0),
             num(r.t1), std::to_string(r.trajectories), std::to_string(r.accepted_sections), num(r.mse_model),
             num(r.mse_smooth)});
  write_json(dir / "fig4_summary.json",
             {{"seed", cfg.seed},
              {"phantom_seed", st.phantom_seed},
              {"config_hash", config_hash(to_json(cfg))},
              {"grouping", to_json(bc.model.grouping)},
              {"c_T", bc.enhance.count_threshold},
              {"h_a", bc.box_half_width},
              {"trajectories", st.trajectories},
              {"reference_sections", st.reference_sections},
              {"model_wins", st.model_wins},
              {"subsets", st.subsets.size()},
              {"wilcoxon_p", st.wilcoxon.p_value},
              {"wilcoxon_exact", st.wilcoxon.exact},
              {"runtime_s", secs}});
  echo_identity(out, cfg.seed, to_json(cfg));
  out << "model wins " << st.model_wins << "/" << st.subsets.size() << ", wilcoxon p=" << num(st.wilcoxon.p_value)
      << "\n";
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"ulmflow: model-based flow enhancement for ultrasound localization microscopy"};
  app.require_subcommand(1);

  auto* sim = app.add_subcommand("simulate", "generate synthetic data");
  sim->require_subcommand(1);
  SectionArgs sa;
  auto* sim_section = sim->add_subcommand("section", "one cross-section of flux-weighted samples (CSV)");
  sim_section->add_option("--radius", sa.radius, "vessel radius, m");
  sim_section->add_option("--g-sharp", sa.g_sharp, "G#, 1/(m s)");
  sim_section->add_option("--center-x1", sa.cx, "center x1, m");
  sim_section->add_option("--center-x2", sa.cy, "center x2, m");
  sim_section->add_option("--n", sa.n, "number of samples");
  sim_section->add_option("--noise", sa.noise, "position noise std, m");
  sim_section->add_option("--seed", sa.seed);
  sim_section->add_option("--out", sa.out, "output directory")->required();
  sim_section->add_option("--prefix", sa.prefix);
  TubesArgs ta;
  auto* sim_tubes = sim->add_subcommand("tubes", "two-tube phantom (bundle, truth, trajectories)");
  sim_tubes->add_option("--angle", ta.angle, "tilt of the small tube, degrees");
  sim_tubes->add_option("--tracks", ta.tracks, "trajectories per tube");
  sim_tubes->add_option("--voxel-um", ta.voxel_um);
  sim_tubes->add_option("--dims", ta.dims, "h w t")->expected(3);
  sim_tubes->add_option("--seed", ta.seed);
  sim_tubes->add_option("--out", ta.out, "output directory")->required();
  sim_tubes->add_option("--prefix", ta.prefix);
  BifurcationArgs ba;
  auto* sim_bif = sim->add_subcommand("bifurcation", "bifurcation phantom (bundle, truth, trajectories)");
  sim_bif->add_option("--duration", ba.duration, "recording window, s");
  sim_bif->add_option("--start", ba.start, "recording start after first injection, s");
  sim_bif->add_option("--rate", ba.rate, "injections per second");
  sim_bif->add_option("--voxel-um", ba.voxel_um);
  sim_bif->add_option("--size", ba.size, "voxels per side");
  sim_bif->add_option("--seed", ba.seed);
  sim_bif->add_option("--out", ba.out, "output directory")->required();
  sim_bif->add_option("--prefix", ba.prefix);

  auto* est = app.add_subcommand("estimate", "fit cross-section samples");
  std::vector<std::string> est_files;
  std::string est_method = "svi", est_out;
  ConfigFlags est_flags;
  est->add_option("--samples", est_files, "CSV files with x1_m,x2_m,speed_mps,weight")->required();
  est->add_option("--method", est_method)->check(CLI::IsMember({"direct", "svi"}));
  est->add_option("--out", est_out, "estimates CSV")->required();
  est_flags.attach(est, false);

  auto* enh = app.add_subcommand("enhance", "enhance a ULM speed bundle");
  EnhanceJob job;
  job.method = "model";
  std::string manifest_in;
  std::optional<int> h_a;
  ConfigFlags enh_flags;
  enh->add_option("--bundle", job.bundle, "input bundle stem");
  enh->add_option("--method", job.method)->check(CLI::IsMember({"model", "smooth"}));
  enh->add_option("--out", job.out, "output stem");
  enh->add_option("--h-a", h_a, "box half width for the smoothing method, voxels");
  enh->add_option("--manifest", manifest_in, "rerun exactly from a previous run manifest");
  enh_flags.attach(enh, true);

  auto* ev = app.add_subcommand("evaluate", "score enhanced volumes or parameter estimates");
  EvaluateArgs ea;
  ev->add_option("--pred", ea.pred, "predicted volume stem");
  ev->add_option("--truth", ea.truth, "ground-truth stem (mask, speed, centerline_speed)");
  ev->add_option("--metrics", ea.metrics, "dice,mse")->delimiter(',');
  ev->add_option("--estimates", ea.estimates, "estimates CSV from the estimate command");
  ev->add_option("--truth-params", ea.truth_params, "truth JSON from simulate section");
  ev->add_option("--out", ea.out, "metrics CSV")->required();

  auto* rep = app.add_subcommand("repro", "run a simulation study end to end");
  ReproArgs ra;
  ConfigFlags rep_flags;
  rep->add_option("figure", ra.figure)->required()->check(CLI::IsMember({"fig2", "figS4", "fig3", "fig4"}));
  rep->add_option("--out", ra.out, "output directory")->required();
  rep->add_option("--replicates", ra.replicates, "replicates per n (fig2, figS4) or datasets per setting (fig3)");
  rep->add_option("--noise", ra.noise, "position noise std, m (fig2, figS4)");
  rep->add_option("--n-min", ra.n_min);
  rep->add_option("--n-max", ra.n_max);
  rep->add_option("--h-a", ra.h_a, "box half width of the smoothing method (fig4)");
  rep->add_option("--subsets", ra.subsets, "number of short windows (fig4)");
  rep_flags.attach(rep, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sim_section) return simulate_section(sa, out);
    if (*sim_tubes) return simulate_tubes(ta, out);
    if (*sim_bif) return simulate_bifurcation(ba, out);
    if (*est) return estimate(est_files, est_method, est_flags, est_out, out);
    if (*enh) return enhance(job, enh_flags, manifest_in, h_a, out, err);
    if (*ev) return evaluate(ea, out);
    if (*rep) {
      const RunConfig cfg = rep_flags.resolve();
      require_dir(ra.out);
      if (ra.figure == "fig3") return repro_tubes(ra, cfg, out);
      if (ra.figure == "fig4") return repro_bifurcation(ra, cfg, rep_flags.grouping_overridden(), out);
      return repro_cross_section(ra, cfg, out);
    }
  } catch (const Failure& f) {
    err << "error: " << f.what() << "\n";
    return f.code();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == IoError::Kind::mismatch ? kExitMismatch : kExitCorrupt;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace ulmflow::cli
