#pragma once

// Map generation from accepted cross-section estimates, the smoothing
// baseline, and the end-to-end model-based enhancement pipeline.

#include <cstdint>
#include <vector>

#include "ulmflow/hessian_grouping.hpp"
#include "ulmflow/svi.hpp"
#include "ulmflow/volume.hpp"

namespace ulmflow {

struct MapAccumulators {
  DoubleVolume speed_sum;
  DoubleVolume pressure_sum;
  DoubleVolume uncert_sum;
  DoubleVolume hit_count;

  MapAccumulators() = default;
  explicit MapAccumulators(Dims d) : speed_sum(d), pressure_sum(d), uncert_sum(d), hit_count(d) {}
  const Dims& dims() const { return hit_count.dims(); }
  MapAccumulators& operator+=(const MapAccumulators& o);
};

struct EnhanceConfig {
  double count_threshold = 0.0;  // c_T, against fractional hit counts
  bool copy_back_original = false;
  double pressure_smooth_sigma = 1.0;  // voxels; 0 disables

  void validate() const;
};

struct TrilinearStencil {
  std::array<std::size_t, 8> index{};
  std::array<double, 8> weight{};
};

/// Weights of the 8 voxel centers around `p` (continuous voxel coordinates).
/// Empty when p lies outside [0, dim - 1] on any axis.
std::optional<TrilinearStencil> trilinear_stencil(Vec3 p, Dims dims);

/// Lumen-disk geometry of one accepted section, kept after the samples are
/// discarded.
struct SectionGeometry {
  Vec3 center{};
  Vec3 normal{};
  std::array<Vec3, 2> in_plane_basis{};
  double search_radius = 0.0;
  int radius_index = 0;
  int shift_index = 0;
  std::size_t seed_voxel = 0;
};

SectionGeometry section_geometry(const SectionCandidate& c);

struct SplatResult {
  std::size_t deposited = 0;
  std::size_t dropped = 0;
};

/// Deposits the fitted profile on plane points spaced one voxel apart over
/// the estimated lumen disk. Throws std::invalid_argument unless
/// estimate.valid.
SplatResult splat_section(MapAccumulators& acc, const SectionGeometry& section,
                          const PosteriorEstimate& estimate, double pitch_m);

struct EnhancedMaps {
  ScalarVolume speed;
  ScalarVolume pressure;
  ScalarVolume uncertainty;
};

/// sum / hit where hit > c_T, else 0. `original` is required only for
/// copy-back and must match the accumulator dims.
EnhancedMaps finalize_maps(const MapAccumulators& acc, const EnhanceConfig& cfg,
                           const ScalarVolume* original = nullptr);

/// Normalized Gaussian smoothing restricted to the non-zero support.
ScalarVolume support_gaussian_smooth(const ScalarVolume& v, double sigma);

/// Cubic (2 h_a + 1)^3 moving average with zero padding.
DoubleVolume box_smooth(const DoubleVolume& v, int h_a);
ScalarVolume box_smooth(const ScalarVolume& v, int h_a);

/// box(speed * count) / box(count), zero where no count falls in the window.
ScalarVolume smoothing_enhance(const VolumeBundle& bundle, int h_a);

/// Settings of the model-based pipeline (grouping, fitting, seeds).
struct ModelPipelineConfig {
  GroupingConfig grouping;
  SviConfig svi;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct AcceptedSection {
  SectionGeometry geometry;
  PosteriorEstimate estimate;
};

struct ModelSections {
  std::vector<AcceptedSection> sections;  // ordered by (radius, seed voxel, shift)
  GroupingStats stats;
  std::size_t fits = 0;
  std::size_t fits_refused = 0;
};

/// Seed of the fit for one candidate.
std::uint64_t candidate_seed(std::uint64_t master, int radius_index, std::size_t seed_voxel,
                             int shift_index);

/// Grouping plus one fit_svi per candidate; a candidate is accepted when the
/// fit is valid and its radius lies in [0.5 r, 2 r] voxels.
ModelSections estimate_sections(const VolumeBundle& bundle, const ModelPipelineConfig& cfg);

/// c_T as applied to hits from a seed-subsampled grouping. Each seed stands in
/// for `seed_stride` voxels, so hit counts shrink by that factor on average
/// and the threshold shrinks with them; stride 1 leaves c_T unchanged.
EnhanceConfig stride_adjusted(EnhanceConfig cfg, const GroupingConfig& grouping);

/// Splats every section in order into fresh accumulators.
MapAccumulators accumulate_sections(const std::vector<AcceptedSection>& sections, Dims dims,
                                    double pitch_m);

}  // namespace ulmflow
