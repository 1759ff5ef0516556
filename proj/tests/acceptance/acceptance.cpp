// Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned here.
//
//   ulmflow_acceptance            run criteria 1-6
//   ulmflow_acceptance 1 6        run a subset
//
// Exit status is 0 only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/oracles.hpp"
#include "cli.hpp"
#include "ulmflow/experiments.hpp"
#include "ulmflow/io.hpp"
#include "ulmflow/parallel.hpp"
#include "ulmflow/random.hpp"
#include "ulmflow/simd/kernels.hpp"

using namespace ulmflow;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 2024;

// criterion 1
constexpr double kMinBetterRatio = 0.70;
constexpr double kMaxWilcoxonP1 = 1e-3;
constexpr double kMaxRuntime1 = 600.0;
// criterion 2
constexpr double kMaxSpearmanP = 0.01;
// criterion 3
constexpr double kMinMedianWinShare = 0.80;
// criterion 4
constexpr double kMaxRuntime4 = 1800.0;
// criterion 5
constexpr double kMaxWilcoxonP5 = 0.05;
// criterion 6
constexpr double kGradientRel = 1e-4;
constexpr double kRoundTrip = 1e-12;
constexpr double kRecovery = 0.02;
constexpr double kFluxRatio = 0.01;
constexpr double kKs = 0.01;
constexpr double kEigenResidual = 1e-10;
constexpr double kSplat = 1e-9;
constexpr double kMaxRuntime6 = 120.0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int workers() { return default_worker_count(); }

struct Verdict {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    detail << (ok ? "" : "!") << what << "; ";
  }
};

bool report(int id, const char* name, Verdict& v) {
  std::string d = v.detail.str();
  if (d.size() >= 2) d.resize(d.size() - 2);
  std::printf("%s %d %s: %s\n", v.pass ? "PASS" : "FAIL", id, name, d.c_str());
  std::fflush(stdout);
  return v.pass;
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

// --- criteria 1-3: one shared cross-section run ---------------------------------

struct CrossSectionRun {
  CrossSectionStudy study;
  double seconds = 0.0;
  int replicates = 0;
};

const CrossSectionRun& cross_section_run() {
  static const CrossSectionRun run = [] {
    CrossSectionConfig cfg;
    cfg.seed = kSeed;
    cfg.workers = workers();
    CrossSectionRun r;
    r.replicates = cfg.replicates;
    const auto t0 = std::chrono::steady_clock::now();
    r.study = run_cross_section_study(cfg);
    r.seconds = seconds_since(t0);
    return r;
  }();
  return run;
}

bool criterion1() {
  const auto& run = cross_section_run();
  const auto& s = run.study.summary;
  Verdict v;
  for (int k = 0; k < kNumParams; ++k) {
    v.require(s.better_ratio[k] >= kMinBetterRatio,
              std::string(kParamNames[k]) + " b_r=" + fmt(s.better_ratio[k]));
    v.require(s.wilcoxon_p[k] < kMaxWilcoxonP1, std::string(kParamNames[k]) + " p=" + fmt(s.wilcoxon_p[k]));
  }
  v.require(run.seconds < kMaxRuntime1, "runtime " + fmt(run.seconds) + " s");
  return report(1, "cross-section estimation vs direct baseline", v);
}

bool criterion2() {
  const auto& s = cross_section_run().study.summary;
  Verdict v;
  v.require(s.sigma_a_vs_gsharp.rho > 0.0, "spearman rho=" + fmt(s.sigma_a_vs_gsharp.rho));
  v.require(s.sigma_a_vs_gsharp.p_value < kMaxSpearmanP, "p=" + fmt(s.sigma_a_vs_gsharp.p_value));
  v.require(s.gsharp_err_vs_sigma_a.rate > 0.0, "exp rate=" + fmt(s.gsharp_err_vs_sigma_a.rate));
  return report(2, "uncertainty tracks g_sharp error", v);
}

bool criterion3() {
  const auto& run = cross_section_run();
  const auto& s = run.study.summary;
  Verdict v;
  v.require(s.radius_median_win_share >= kMinMedianWinShare,
            "radius median win share=" + fmt(s.radius_median_win_share));
  int refused3 = -1;
  for (const auto& pc : s.per_count)
    if (pc.n == 3) refused3 = pc.refused;
  v.require(refused3 == run.replicates, "n=3 refused " + std::to_string(refused3) + "/" +
                                            std::to_string(run.replicates));
  return report(3, "sample-count behaviour", v);
}

// --- criteria 4-5 ---------------------------------------------------------------

struct TubeRun {
  TubeStudy study;
  double seconds = 0.0;
};

const TubeRun& tube_run() {
  static const TubeRun run = [] {
    TubeStudyConfig cfg = default_tube_study();
    cfg.seed = kSeed;
    cfg.model.workers = workers();
    TubeRun r;
    const auto t0 = std::chrono::steady_clock::now();
    r.study = run_tube_study(cfg);
    r.seconds = seconds_since(t0);
    return r;
  }();
  return run;
}

bool criterion4() {
  const auto& run = tube_run();
  const auto& st = run.study;
  Verdict v;
  v.require(st.datasets.size() == 8, std::to_string(st.datasets.size()) + " datasets");
  for (const auto& s : st.per_saturation) {
    const std::string tag = std::to_string(s.tracks) + " tracks ";
    v.require(s.model.mean_dice < s.smooth.mean_dice,
              tag + "dice " + fmt(s.model.mean_dice) + " (c_T=" + fmt(st.count_thresholds[s.model.index]) +
                  ") vs " + fmt(s.smooth.mean_dice) + " (h_a=" + std::to_string(st.box_half_widths[s.smooth.index]) +
                  ")");
    v.require(s.model.mean_mse < s.smooth.mean_mse,
              tag + "mse " + fmt(s.model.mean_mse) + " vs " + fmt(s.smooth.mean_mse));
  }
  v.require(st.per_saturation.size() == 2, "saturations " + std::to_string(st.per_saturation.size()));
  v.require(run.seconds < kMaxRuntime4, "runtime " + fmt(run.seconds) + " s");
  return report(4, "tube enhancement model vs smoothing", v);
}

bool criterion5() {
  // hyperparameters carried over from the tube sweeps
  const auto& tubes = tube_run().study;
  BifurcationStudyConfig cfg = default_bifurcation_study();
  cfg.seed = kSeed;
  cfg.model.workers = workers();
  cfg.enhance.count_threshold = tubes.count_thresholds[tubes.model_overall.index];
  cfg.box_half_width = tubes.box_half_widths[tubes.smooth_overall.index];
  const auto t0 = std::chrono::steady_clock::now();
  const BifurcationStudy st = run_bifurcation_study(cfg);
  const double secs = seconds_since(t0);
  Verdict v;
  v.require(2 * st.model_wins > static_cast<int>(st.subsets.size()),
            "model wins " + std::to_string(st.model_wins) + "/" + std::to_string(st.subsets.size()));
  v.require(st.wilcoxon.p_value < kMaxWilcoxonP5, "wilcoxon p=" + fmt(st.wilcoxon.p_value));
  v.detail << "c_T=" << fmt(cfg.enhance.count_threshold) << " h_a=" << cfg.box_half_width << " runtime "
           << fmt(secs) << " s; ";
  return report(5, "bifurcation consistency", v);
}

// --- criterion 6: property suite ----------------------------------------------------

SampleSet random_samples(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  SampleSet s;
  for (int i = 0; i < n; ++i) s.push_back({{g(rng), g(rng)}, g(rng), 0.5 + std::abs(g(rng))});
  return s;
}

double worst_gradient_error() {
  std::mt19937_64 rng(61);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const SampleSet s = normalize_samples(random_samples(12, rng)).samples;
    VariationalState st;
    for (int j = 0; j < 4; ++j) {
      st.mean[j] = g(rng);
      st.rho[j] = g(rng) - 1.0;
    }
    std::vector<ParamVec> eps(8);
    for (auto& e : eps)
      for (double& x : e) x = g(rng);
    Prior prior;
    prior.sigma = {10, 100, 100, 100};
    const SviGradient grad = svi_cost_gradient(st, s, prior, eps, 0.1);
    for (int k = 0; k < 8; ++k) {
      const double h = 1e-5;
      VariationalState up = st, dn = st;
      (k < 4 ? up.mean[k] : up.rho[k - 4]) += h;
      (k < 4 ? dn.mean[k] : dn.rho[k - 4]) -= h;
      const double fd = (svi_cost(up, s, prior, eps, 0.1) - svi_cost(dn, s, prior, eps, 0.1)) / (2 * h);
      worst = std::max(worst, std::abs(fd - grad[k]) / std::max(1e-3, std::abs(fd)));
    }
  }
  return worst;
}

double worst_round_trip() {
  std::mt19937_64 rng(62);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const PoiseuilleParams p{std::pow(10.0, 4 + 3 * std::abs(u(rng))), 1e-4 * (1.5 + u(rng)),
                             {1e-4 * u(rng), 1e-4 * u(rng)}};
    const auto back = quadratic_to_poiseuille(poiseuille_to_quadratic(p));
    if (!back) return INFINITY;
    worst = std::max({worst, std::abs(back->g_sharp - p.g_sharp) / p.g_sharp,
                      std::abs(back->radius - p.radius) / p.radius, norm(back->center - p.center) / p.radius});
  }
  return worst;
}

double worst_recovery() {
  const PoiseuilleParams truth{7.5e5, 200e-6, {0.0, 0.0}};
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto draw = sample_cross_section(truth, 20, 0.0, derive_seed(kSeed, {6, seed}));
    SviConfig cfg;
    cfg.rng_seed = derive_seed(kSeed, {7, seed});
    const auto pe = fit_svi(draw.samples, cfg);
    if (pe.refused()) return INFINITY;
    const auto e = normalized_errors(pe.params_physical, pe.mean_speed, truth, mean_speed(truth));
    worst = std::max({worst, e.radius_err, e.center_err, e.gsharp_err, e.vmean_err});
  }
  return worst;
}

double flux_ratio_error() {
  const PoiseuilleParams p{7.5e5, 200e-6, {}};
  const auto d = sample_cross_section(p, 1'000'000, 0.0, derive_seed(kSeed, {8}));
  double sum = 0.0;
  for (const auto& s : d.samples) sum += s.speed;
  return std::abs(sum / double(d.samples.size()) / mean_speed(p) - 4.0 / 3.0) / (4.0 / 3.0);
}

double radial_ks() {
  std::mt19937_64 rng(derive_seed(kSeed, {9}));
  std::vector<double> r;
  for (int i = 0; i < 100'000; ++i) r.push_back(norm(sample_flux_weighted_offset(1.0, rng)));
  return oracle::ks_distance(r, [](double x) { return flux_weighted_radius_cdf(x, 1.0); });
}

double worst_eigen_residual() {
  std::mt19937_64 rng(63);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 2000; ++i) {
    Mat3 h{};
    for (int a = 0; a < 3; ++a)
      for (int b = a; b < 3; ++b) h[a][b] = h[b][a] = g(rng);
    worst = std::max(worst, eigen_residual(h, eigen3_symmetric(h)));
  }
  return worst;
}

double worst_splat_error() {
  std::mt19937_64 rng(64);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  const Dims dims{40, 40, 40};
  const double pitch = 5e-6;
  for (int trial = 0; trial < 20; ++trial) {
    MapAccumulators acc(dims);
    SectionGeometry sec;
    sec.center = Vec3{20 + 3 * u(rng), 20 + 3 * u(rng), 20 + 3 * u(rng)} * pitch;
    const Vec3 n = normalized(Vec3{u(rng), u(rng), u(rng)});
    const Vec3 helper = std::abs(n.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    const Vec3 e1 = normalized(cross(helper, n));
    sec.normal = n;
    sec.in_plane_basis = {e1, cross(n, e1)};
    PosteriorEstimate pe;
    pe.params_physical = {5e8, (4 + 6 * std::abs(u(rng))) * pitch, {u(rng) * pitch, u(rng) * pitch}};
    pe.uncertainty_geo = 0.1;
    pe.valid = true;
    const SplatResult r = splat_section(acc, sec, pe, pitch);
    double total = 0.0;
    for (double w : acc.hit_count.values()) total += w;
    worst = std::max(worst, std::abs(total - double(r.deposited)));
  }
  return worst;
}

bool dice_mse_identities() {
  const Dims d{6, 5, 4};
  MaskVolume m(d);
  ScalarVolume v(d), vc(d, 0.03f);
  for (std::size_t i = 0; i < m.size(); i += 3) {
    m[i] = 1;
    v[i] = 0.01f + 0.001f * float(i % 7);
  }
  ScalarVolume zero(d);
  ScalarVolume peak(d);
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) peak[i] = vc[i];
  return dice_loss(m, m) == 0.0 && dice_loss(m, MaskVolume(d)) == 1.0 && map_mse(v, v, m, m, vc) == 0.0 &&
         map_mse(zero, peak, MaskVolume(d), m, vc) == 1.0;
}

bool wilcoxon_matches_enumeration() {
  std::mt19937_64 rng(65);
  std::uniform_int_distribution<int> small(-3, 3);
  std::normal_distribution<double> g(0.2, 1.0);
  for (int trial = 0; trial < 400; ++trial) {
    std::vector<std::pair<double, double>> p;
    const int n = 1 + trial % 12;
    for (int i = 0; i < n; ++i) p.push_back({trial % 2 ? double(small(rng)) : g(rng), 0.0});
    const double a = wilcoxon_signed_rank(p).p_value;
    const double b = oracle::wilcoxon_enumerate(p);
    if (std::abs(a - b) > 1e-12 * std::max(1.0, b)) return false;
  }
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

bool manifest_rerun_identical() {
  const fs::path dir = fs::temp_directory_path() / "ulmflow_acceptance_manifest";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ostringstream out, err;
  auto call = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "ulmflow");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::run(int(argv.size()), argv.data(), out, err);
  };
  const std::string d = dir.string();
  if (call({"simulate", "tubes", "--dims", "40", "20", "20", "--voxel-um", "10", "--tracks", "20", "--seed", "5",
            "--out", d}) != 0)
    return false;
  if (call({"enhance", "--bundle", d + "/tubes", "--method", "model", "--out", d + "/a", "--seed", "5", "--r-min",
            "4", "--r-max", "8", "--r-step", "4", "--seed-stride", "2"}) != 0)
    return false;
  if (call({"enhance", "--manifest", d + "/a.manifest.json", "--out", d + "/b"}) != 0) return false;
  for (const char* f : {"speed", "count", "pressure", "uncertainty"})
    if (slurp(d + "/a." + f + ".f32") != slurp(d + "/b." + f + ".f32")) return false;
  return true;
}

bool criterion6() {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  const double grad = worst_gradient_error();
  v.require(grad < kGradientRel, "gradient rel " + fmt(grad));
  const double rt = worst_round_trip();
  v.require(rt < kRoundTrip, "round trip " + fmt(rt));
  const double rec = worst_recovery();
  v.require(rec < kRecovery, "noiseless N=20 recovery " + fmt(rec));
  const double flux = flux_ratio_error();
  v.require(flux < kFluxRatio, "4/3 mean ratio err " + fmt(flux));
  const double ks = radial_ks();
  v.require(ks < kKs, "radial KS " + fmt(ks));
  const double eig = worst_eigen_residual();
  v.require(eig < kEigenResidual, "eigen residual " + fmt(eig));
  const double splat = worst_splat_error();
  v.require(splat < kSplat, "splat conservation " + fmt(splat));
  v.require(dice_mse_identities(), "dice/mse identities");
  v.require(wilcoxon_matches_enumeration(), "wilcoxon exact == enumeration");
  v.require(manifest_rerun_identical(), "manifest rerun bit-identical");
  const double secs = seconds_since(t0);
  v.require(secs < kMaxRuntime6, "runtime " + fmt(secs) + " s");
  return report(6, "property suite", v);
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto selected = [&](int id) { return only.empty() || only.count(id) != 0; };
  std::printf("seed=%llu workers=%d isa=%s\n", static_cast<unsigned long long>(kSeed), workers(),
              std::string(simd::isa_name(simd::kernels().isa)).c_str());
  bool all = true;
  // cheap criteria first so their lines appear early
  if (selected(6)) all = criterion6() && all;
  if (selected(1)) all = criterion1() && all;
  if (selected(2)) all = criterion2() && all;
  if (selected(3)) all = criterion3() && all;
  if (selected(4)) all = criterion4() && all;
  if (selected(5)) all = criterion5() && all;
  return all ? 0 : 1;
}
