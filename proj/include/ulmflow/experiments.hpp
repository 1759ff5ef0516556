#pragma once

// End-to-end simulation studies: cross-section estimation (fig2 / figS4),
// tube-pair enhancement sweeps (fig3) and bifurcation consistency (fig4).

#include <array>
#include <cstdint>
#include <vector>

#include "ulmflow/core_model.hpp"
#include "ulmflow/hessian_grouping.hpp"
#include "ulmflow/maps.hpp"
#include "ulmflow/metrics.hpp"
#include "ulmflow/simulate.hpp"
#include "ulmflow/svi.hpp"

namespace ulmflow {

// --- cross-section estimation --------------------------------------------------

struct CrossSectionConfig {
  PoiseuilleParams truth{7.5e5, 200e-6, {0.0, 0.0}};
  double noise_std = 20e-6;
  int n_min = 3;
  int n_max = 20;
  int replicates = 200;
  SviConfig svi;
  std::uint64_t seed = 0;
  int workers = 1;
};

inline constexpr int kNumParams = 4;  // radius, center, g_sharp, mean speed

struct CrossSectionRow {
  int n = 0;
  int replicate = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t fit_seed = 0;
  bool refused = false;
  bool physical = false;  // model output converts to a Poiseuille profile
  bool valid = false;
  std::array<double, kNumParams> model_err{};  // +inf when refused or non-physical
  std::array<double, kNumParams> direct_err{};
  double sigma_a = 0.0;
  double uncertainty_geo = 0.0;
  double cost = 0.0;
};

struct PerCountSummary {
  int n = 0;
  int refused = 0;
  std::array<double, kNumParams> model_median{};
  std::array<double, kNumParams> direct_median{};
  std::array<double, kNumParams> model_p25{}, model_p75{};
  std::array<double, kNumParams> direct_p25{}, direct_p75{};
};

struct CrossSectionSummary {
  std::array<double, kNumParams> better_ratio{};  // over n >= 4
  std::array<double, kNumParams> wilcoxon_p{};
  std::size_t pairs = 0;
  SpearmanResult sigma_a_vs_gsharp;  // fitted rows with a physical output
  ExpFit gsharp_err_vs_sigma_a;      // err = amplitude * exp(rate * sigma_a)
  std::vector<PerCountSummary> per_count;
  /// Share of n >= 4 where the model median radius error <= the direct one.
  double radius_median_win_share = 0.0;
};

struct CrossSectionStudy {
  std::vector<CrossSectionRow> rows;  // ordered by (n, replicate)
  CrossSectionSummary summary;
};

extern const std::array<const char*, kNumParams> kParamNames;

CrossSectionStudy run_cross_section_study(const CrossSectionConfig& cfg);
CrossSectionSummary summarize_cross_section(const std::vector<CrossSectionRow>& rows);

// --- tube enhancement ---------------------------------------------------------------

struct TubeStudyConfig {
  std::vector<double> angles_deg{0.0, 45.0};
  std::vector<int> tracks{5, 10};
  int datasets_per_setting = 2;
  TubePairConfig phantom;  // angle, tracks and seed are overridden per dataset
  ModelPipelineConfig model;
  EnhanceConfig enhance;   // count_threshold is swept
  std::vector<double> count_thresholds;
  std::vector<int> box_half_widths;
  std::uint64_t seed = 0;
};

struct SweepPoint {
  double dice = 0.0;
  double mse = 0.0;
};

struct TubeDatasetResult {
  double angle_deg = 0.0;
  int tracks = 0;
  int replicate = 0;
  std::uint64_t phantom_seed = 0;
  std::uint64_t fit_seed = 0;
  std::size_t accepted_sections = 0;
  std::size_t fits = 0;
  std::vector<SweepPoint> model;   // per count threshold
  std::vector<SweepPoint> smooth;  // per box half width
};

struct MethodOptimum {
  std::size_t index = 0;  // into the sweep grid
  double mean_dice = 0.0;
  double mean_mse = 0.0;
};

struct TubeSaturationSummary {
  int tracks = 0;
  MethodOptimum model;
  MethodOptimum smooth;
};

struct TubeStudy {
  std::vector<TubeDatasetResult> datasets;
  std::vector<TubeSaturationSummary> per_saturation;
  MethodOptimum model_overall;  // best over all datasets
  MethodOptimum smooth_overall;
  std::vector<double> count_thresholds;
  std::vector<int> box_half_widths;
};

/// Radii 2..24 voxels step 2, the default tube grouping.
TubeStudyConfig default_tube_study();
TubeStudy run_tube_study(const TubeStudyConfig& cfg);

/// Lowest mean Dice over `datasets` for one method; ties keep the first index.
MethodOptimum best_by_dice(const std::vector<const std::vector<SweepPoint>*>& curves);

// --- bifurcation consistency ---------------------------------------------------------

struct BifurcationStudyConfig {
  BifurcationSpec spec;
  int subsets = 10;
  Dims dims{200, 200, 200};
  double voxel_um = 5.0;
  ModelPipelineConfig model;
  EnhanceConfig enhance;  // count_threshold = chosen c_T
  int box_half_width = 5;
  std::uint64_t seed = 0;
};

struct BifurcationSubsetResult {
  int subset = 0;
  double t0 = 0.0, t1 = 0.0;
  std::size_t trajectories = 0;
  std::size_t accepted_sections = 0;
  double mse_model = 0.0;
  double mse_smooth = 0.0;
};

struct BifurcationStudy {
  std::uint64_t phantom_seed = 0;
  std::size_t trajectories = 0;
  std::size_t reference_sections = 0;
  std::vector<BifurcationSubsetResult> subsets;
  WilcoxonResult wilcoxon;
  int model_wins = 0;
};

/// r in {4, 12, 20, 28, 36} voxels, every 8th non-zero voxel as seed.
BifurcationStudyConfig default_bifurcation_study();
BifurcationStudy run_bifurcation_study(const BifurcationStudyConfig& cfg);

}  // namespace ulmflow
