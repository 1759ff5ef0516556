#include "ulmflow/experiments.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "ulmflow/config.hpp"
#include "ulmflow/parallel.hpp"
#include "ulmflow/random.hpp"

namespace ulmflow {

const std::array<const char*, kNumParams> kParamNames{"radius", "center", "g_sharp", "mean_speed"};

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::array<double, kNumParams> as_array(const ParamErrors& e) {
  return {e.radius_err, e.center_err, e.gsharp_err, e.vmean_err};
}

}  // namespace

// --- cross-section estimation --------------------------------------------------

CrossSectionStudy run_cross_section_study(const CrossSectionConfig& cfg) {
  if (cfg.n_min < 1 || cfg.n_max < cfg.n_min || cfg.replicates < 1)
    throw std::invalid_argument("CrossSectionConfig: need 1 <= n_min <= n_max and replicates >= 1");
  cfg.svi.validate();
  const double truth_vbar = mean_speed(cfg.truth);
  const std::size_t counts = static_cast<std::size_t>(cfg.n_max - cfg.n_min + 1);
  const std::size_t reps = static_cast<std::size_t>(cfg.replicates);

  CrossSectionStudy study;
  study.rows.resize(counts * reps);
  parallel_for(study.rows.size(), cfg.workers, [&](std::size_t i) {
    CrossSectionRow& row = study.rows[i];
    row.n = cfg.n_min + static_cast<int>(i / reps);
    row.replicate = static_cast<int>(i % reps);
    const auto n_key = static_cast<std::uint64_t>(row.n);
    const auto r_key = static_cast<std::uint64_t>(row.replicate);
    row.data_seed = derive_seed(cfg.seed, {0, n_key, r_key});
    row.fit_seed = derive_seed(cfg.seed, {1, n_key, r_key});

    const CrossSectionDraw draw = sample_cross_section(cfg.truth, row.n, cfg.noise_std, row.data_seed);
    const DirectEstimate direct = direct_estimate(draw.samples);
    row.direct_err = as_array(normalized_errors(direct.params, direct.mean_speed, cfg.truth, truth_vbar));

    SviConfig sc = cfg.svi;
    sc.rng_seed = row.fit_seed;
    const PosteriorEstimate pe = fit_svi(draw.samples, sc);
    row.refused = pe.refused();
    row.physical = !row.refused && pe.params_physical.radius > 0.0;
    row.valid = pe.valid;
    row.sigma_a = pe.uncertainty_a;
    row.uncertainty_geo = pe.uncertainty_geo;
    row.cost = pe.cost;
    if (row.physical)
      row.model_err = as_array(normalized_errors(pe.params_physical, pe.mean_speed, cfg.truth, truth_vbar));
    else
      row.model_err.fill(kInf);
  });
  study.summary = summarize_cross_section(study.rows);
  return study;
}

CrossSectionSummary summarize_cross_section(const std::vector<CrossSectionRow>& rows) {
  CrossSectionSummary s;
  std::array<std::vector<std::pair<double, double>>, kNumParams> pairs;
  std::vector<double> sig, gerr;
  int n_lo = std::numeric_limits<int>::max(), n_hi = std::numeric_limits<int>::min();
  for (const auto& r : rows) {
    n_lo = std::min(n_lo, r.n);
    n_hi = std::max(n_hi, r.n);
    if (r.n < kMinSviSamples) continue;
    for (int k = 0; k < kNumParams; ++k) pairs[k].push_back({r.model_err[k], r.direct_err[k]});
    if (r.physical) {
      sig.push_back(r.sigma_a);
      gerr.push_back(r.model_err[2]);
    }
  }
  s.pairs = pairs[0].size();
  if (s.pairs > 0)
    for (int k = 0; k < kNumParams; ++k) {
      s.better_ratio[k] = better_ratio(pairs[k]);
      s.wilcoxon_p[k] = wilcoxon_signed_rank(pairs[k]).p_value;
    }
  if (sig.size() >= 3) {
    s.sigma_a_vs_gsharp = spearman(sig, gerr);
    s.gsharp_err_vs_sigma_a = exp_fit(sig, gerr, 1e-12);
  }

  int counted = 0, wins = 0;
  for (int n = n_lo; n <= n_hi && n_lo <= n_hi; ++n) {
    PerCountSummary pc;
    pc.n = n;
    std::array<std::vector<double>, kNumParams> m, d;
    for (const auto& r : rows) {
      if (r.n != n) continue;
      pc.refused += r.refused;
      for (int k = 0; k < kNumParams; ++k) {
        m[k].push_back(r.model_err[k]);
        d[k].push_back(r.direct_err[k]);
      }
    }
    if (m[0].empty()) continue;
    for (int k = 0; k < kNumParams; ++k) {
      pc.model_median[k] = median(m[k]);
      pc.direct_median[k] = median(d[k]);
      pc.model_p25[k] = percentile(m[k], 25.0);
      pc.model_p75[k] = percentile(m[k], 75.0);
      pc.direct_p25[k] = percentile(d[k], 25.0);
      pc.direct_p75[k] = percentile(d[k], 75.0);
    }
    if (n >= kMinSviSamples) {
      ++counted;
      wins += pc.model_median[0] <= pc.direct_median[0];
    }
    s.per_count.push_back(pc);
  }
  s.radius_median_win_share = counted > 0 ? double(wins) / counted : 0.0;
  return s;
}

// --- tube enhancement ---------------------------------------------------------------

TubeStudyConfig default_tube_study() {
  TubeStudyConfig c;
  c.model.grouping.r_min = 2.0;
  c.model.grouping.r_max = 24.0;
  c.model.grouping.r_step = 2.0;
  const SweepConfig s = SweepConfig::defaults();
  c.count_thresholds = s.count_thresholds;
  c.box_half_widths = s.box_half_widths;
  return c;
}

MethodOptimum best_by_dice(const std::vector<const std::vector<SweepPoint>*>& curves) {
  MethodOptimum best;
  if (curves.empty()) return best;
  const std::size_t len = curves.front()->size();
  bool have = false;
  for (std::size_t i = 0; i < len; ++i) {
    double dice = 0.0, mse = 0.0;
    for (const auto* c : curves) {
      dice += (*c)[i].dice;
      mse += (*c)[i].mse;
    }
    dice /= double(curves.size());
    mse /= double(curves.size());
    if (!have || dice < best.mean_dice) {
      best = {i, dice, mse};
      have = true;
    }
  }
  return best;
}

namespace {

SweepPoint score(const ScalarVolume& v, const GroundTruth& gt) {
  const MaskVolume be = support_mask(v);
  return {dice_loss(be, gt.mask), map_mse(v, gt.speed, be, gt.mask, gt.centerline_speed)};
}

}  // namespace

TubeStudy run_tube_study(const TubeStudyConfig& cfg) {
  if (cfg.count_thresholds.empty() || cfg.box_half_widths.empty())
    throw std::invalid_argument("TubeStudyConfig: sweep grids must not be empty");
  TubeStudy study;
  study.count_thresholds = cfg.count_thresholds;
  study.box_half_widths = cfg.box_half_widths;
  for (std::size_t ai = 0; ai < cfg.angles_deg.size(); ++ai)
    for (std::size_t ti = 0; ti < cfg.tracks.size(); ++ti)
      for (int rep = 0; rep < cfg.datasets_per_setting; ++rep) {
        TubeDatasetResult res;
        res.angle_deg = cfg.angles_deg[ai];
        res.tracks = cfg.tracks[ti];
        res.replicate = rep;
        res.phantom_seed = derive_seed(cfg.seed, {0, ai, ti, static_cast<std::uint64_t>(rep)});
        res.fit_seed = derive_seed(cfg.seed, {1, ai, ti, static_cast<std::uint64_t>(rep)});

        TubePairConfig pc = cfg.phantom;
        pc.angle_deg = res.angle_deg;
        pc.tracks_per_tube = res.tracks;
        pc.seed = res.phantom_seed;
        const TubePhantom ph = generate_tube_pair(pc);

        ModelPipelineConfig mc = cfg.model;
        mc.seed = res.fit_seed;
        const ModelSections ms = estimate_sections(ph.bundle, mc);
        res.accepted_sections = ms.sections.size();
        res.fits = ms.fits;
        const MapAccumulators acc = accumulate_sections(ms.sections, ph.bundle.dims, ph.bundle.pitch_m());
        for (double ct : cfg.count_thresholds) {
          EnhanceConfig ec = cfg.enhance;
          ec.count_threshold = ct;
          ec.copy_back_original = false;
          ec = stride_adjusted(ec, mc.grouping);
          res.model.push_back(score(finalize_maps(acc, ec).speed, ph.truth));
        }
        for (int h : cfg.box_half_widths) res.smooth.push_back(score(smoothing_enhance(ph.bundle, h), ph.truth));
        study.datasets.push_back(std::move(res));
      }

  std::vector<const std::vector<SweepPoint>*> all_m, all_s;
  for (const auto& d : study.datasets) {
    all_m.push_back(&d.model);
    all_s.push_back(&d.smooth);
  }
  study.model_overall = best_by_dice(all_m);
  study.smooth_overall = best_by_dice(all_s);
  for (int tracks : cfg.tracks) {
    std::vector<const std::vector<SweepPoint>*> m, s;
    for (const auto& d : study.datasets)
      if (d.tracks == tracks) {
        m.push_back(&d.model);
        s.push_back(&d.smooth);
      }
    study.per_saturation.push_back({tracks, best_by_dice(m), best_by_dice(s)});
  }
  return study;
}

// --- bifurcation consistency ---------------------------------------------------------

BifurcationStudyConfig default_bifurcation_study() {
  BifurcationStudyConfig c;
  c.model.grouping.r_min = 4.0;
  c.model.grouping.r_max = 36.0;
  c.model.grouping.r_step = 8.0;
  c.model.grouping.seed_stride = 8;
  return c;
}

BifurcationStudy run_bifurcation_study(const BifurcationStudyConfig& cfg) {
  cfg.spec.validate();
  if (cfg.subsets < 1) throw std::invalid_argument("BifurcationStudyConfig: subsets must be >= 1");
  BifurcationStudy study;
  study.phantom_seed = derive_seed(cfg.seed, {0});
  const std::vector<Trajectory> trajs = generate_bifurcation(cfg.spec, study.phantom_seed);
  study.trajectories = trajs.size();
  const std::array<double, 3> vs{cfg.voxel_um, cfg.voxel_um, cfg.voxel_um};
  const GroundTruth gt = bifurcation_ground_truth(cfg.spec, cfg.dims, cfg.voxel_um);

  auto model_map = [&](const VolumeBundle& b, std::uint64_t key, std::size_t* sections) {
    ModelPipelineConfig mc = cfg.model;
    mc.seed = derive_seed(cfg.seed, {1, key});
    const ModelSections ms = estimate_sections(b, mc);
    if (sections) *sections = ms.sections.size();
    const MapAccumulators acc = accumulate_sections(ms.sections, b.dims, b.pitch_m());
    EnhanceConfig ec = stride_adjusted(cfg.enhance, mc.grouping);
    ec.copy_back_original = false;
    return finalize_maps(acc, ec).speed;
  };

  const VolumeBundle full = rasterize_trajectories(trajs, cfg.dims, vs);
  const ScalarVolume ref_model = model_map(full, 0, &study.reference_sections);
  const ScalarVolume ref_smooth = smoothing_enhance(full, cfg.box_half_width);
  const MaskVolume ref_model_mask = support_mask(ref_model);
  const MaskVolume ref_smooth_mask = support_mask(ref_smooth);

  std::vector<std::pair<double, double>> pairs;
  const double step = cfg.spec.duration / cfg.subsets;
  for (int k = 0; k < cfg.subsets; ++k) {
    BifurcationSubsetResult r;
    r.subset = k;
    r.t0 = cfg.spec.start_time + k * step;
    r.t1 = cfg.spec.start_time + (k + 1) * step;
    const auto part = slice_trajectories(trajs, r.t0, r.t1);
    r.trajectories = part.size();
    const VolumeBundle b = rasterize_trajectories(part, cfg.dims, vs);
    const ScalarVolume m = model_map(b, static_cast<std::uint64_t>(k) + 1, &r.accepted_sections);
    const ScalarVolume s = smoothing_enhance(b, cfg.box_half_width);
    r.mse_model = map_mse(m, ref_model, support_mask(m), ref_model_mask, gt.centerline_speed);
    r.mse_smooth = map_mse(s, ref_smooth, support_mask(s), ref_smooth_mask, gt.centerline_speed);
    study.model_wins += r.mse_model < r.mse_smooth;
    pairs.push_back({r.mse_model, r.mse_smooth});
    study.subsets.push_back(r);
  }
  study.wilcoxon = wilcoxon_signed_rank(pairs);
  return study;
}

}  // namespace ulmflow
