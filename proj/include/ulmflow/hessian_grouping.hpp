#pragma once

// Cross-section detection on a sparse speed volume by multi-scale Hessian
// analysis, and grouping of the in-plane samples of each detected section.
//
// Coordinates here are continuous voxel indices: the center of voxel
// (ih, iw, it) sits at (ih, iw, it). Voxels are treated as isotropic with
// pitch VolumeBundle::pitch_m().

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "ulmflow/core_model.hpp"
#include "ulmflow/volume.hpp"

namespace ulmflow {

/// Sampled 1D Gaussian and derivative kernels on offsets [-radius, radius],
/// radius = ceil(3 sigma). Under correlation with a field f:
///   g0 sums to 1, g1 reproduces df/dx on linear fields, g2 reproduces
///   d2f/dx2 on quadratic fields (and sums to 0).
struct GaussianKernels {
  double sigma = 0.0;
  int radius = 0;
  std::vector<double> g0, g1, g2;

  double at0(int k) const { return g0[static_cast<std::size_t>(k + radius)]; }
  double at1(int k) const { return g1[static_cast<std::size_t>(k + radius)]; }
  double at2(int k) const { return g2[static_cast<std::size_t>(k + radius)]; }
};

/// Throws std::invalid_argument unless sigma > 0.
GaussianKernels gaussian_derivative_kernels(double sigma);

/// Non-zero voxels bucketed into cubic bricks for box queries.
class SparseIndex {
 public:
  static constexpr int kBrick = 8;

  explicit SparseIndex(const ScalarVolume& field);

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return voxels_.size(); }
  /// Non-zero linear indices in ascending order.
  const std::vector<std::size_t>& voxels() const { return voxels_; }

  /// Calls fn(linear_index) for every non-zero voxel in the inclusive box
  /// [lo, hi] (clipped to the grid).
  template <typename Fn>
  void for_each_in_box(std::array<int, 3> lo, std::array<int, 3> hi, Fn&& fn) const;

 private:
  Dims dims_;
  std::array<int, 3> bricks_{};
  std::vector<std::size_t> voxels_;
  std::vector<std::uint32_t> brick_start_;  // CSR offsets into brick_members_
  std::vector<std::size_t> brick_members_;
};

struct HessianResult {
  Mat3 hessian{};
  Vec3 gradient{};
};

/// Second- and first-derivative responses at `voxel` by direct correlation
/// over the non-zero voxels of the kernel support (zero padding outside).
HessianResult hessian_at(const ScalarVolume& field, const SparseIndex& index,
                         std::array<int, 3> voxel, const GaussianKernels& kernels);

/// Dense reference used for checking: same correlation over every voxel.
HessianResult hessian_at_dense(const ScalarVolume& field, std::array<int, 3> voxel,
                               const GaussianKernels& kernels);

struct SymmetricEigen3 {
  std::array<double, 3> values{};  // |values[0]| <= |values[1]| <= |values[2]|
  std::array<Vec3, 3> vectors{};   // orthonormal, vectors[k] pairs with values[k]
};

/// Cyclic Jacobi rotations to machine precision.
SymmetricEigen3 eigen3_symmetric(const Mat3& h);

/// ||V diag(values) V^T - H||_F / ||H||_F (0 when H = 0).
double eigen_residual(const Mat3& h, const SymmetricEigen3& e);

/// Unit shift direction alpha1 v2 + alpha2 v3 with
/// alpha_k = sign(g . v_k) sqrt(lambda_k^2 / (lambda2^2 + lambda3^2)); sign(0) = +1.
/// Throws std::invalid_argument when both eigenvalues are zero.
Vec3 shift_direction(double lambda2, double lambda3, Vec3 v2, Vec3 v3, Vec3 gradient);

struct GroupingConfig {
  double r_min = 2.0;
  double r_max = 24.0;
  double r_step = 2.0;
  double slab_half_thickness = 0.5;
  double angle_threshold_deg = 40.0;
  int min_samples = 4;
  /// Seeds are every `seed_stride`-th non-zero voxel in linear order.
  int seed_stride = 1;

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
  std::vector<double> radii() const;
};

inline constexpr std::array<double, 5> kShiftRatios{0.0, 0.25, 0.5, 0.75, 1.0};

struct SectionCandidate {
  Vec3 center{};  // continuous voxel coordinates
  Vec3 normal{};
  std::array<Vec3, 2> in_plane_basis{};
  double search_radius = 0.0;  // voxels
  double shift_ratio = 0.0;
  int radius_index = 0;
  int shift_index = 0;
  std::size_t seed_voxel = 0;  // linear index of the Hessian seed
  SampleSet samples;
};

/// Non-zero voxels within in-plane distance r and out-of-plane distance
/// slab_half_thickness (both in voxels) of `center`. Positions are projected
/// on `basis` relative to `center` and scaled to meters; weights are counts.
SampleSet collect_section_samples(const VolumeBundle& bundle, const SparseIndex& index,
                                  Vec3 center, Vec3 normal, const std::array<Vec3, 2>& basis,
                                  double r, double slab_half_thickness);

/// Mean angle (degrees) between the trajectory directions of the voxels
/// selected like collect_section_samples and the normal, directions taken
/// up to sign. NaN when the bundle has no direction field or no voxel.
double mean_direction_angle_deg(const VolumeBundle& bundle, const SparseIndex& index, Vec3 center,
                                Vec3 normal, const std::array<Vec3, 2>& basis, double r,
                                double slab_half_thickness);

struct GroupingStats {
  std::size_t seeds_tested = 0;
  std::size_t seeds_tubular = 0;
  std::size_t rejected_too_few = 0;   // justification (1)
  std::size_t rejected_angle = 0;     // justification (2)
  std::size_t candidates = 0;         // handed to the visitor
  std::size_t accepted = 0;           // visitor returned true
  bool direction_check_skipped = false;

  GroupingStats& operator+=(const GroupingStats& o);
};

/// Receives each candidate that passed justifications (1) and (2) with the
/// direct estimate of its samples; returns whether justification (3) holds.
/// A true result ends the shift loop for this (radius, seed).
using CandidateVisitor = std::function<bool(const SectionCandidate&, const DirectEstimate&)>;

/// Runs the full grouping loop. For each radius the seed voxels are
/// processed on `workers` threads; the visitor must be thread-safe when
/// workers > 1. Within one (radius, seed) shifts are visited in order.
GroupingStats group_trajectories(const VolumeBundle& bundle, const GroupingConfig& cfg,
                                 const CandidateVisitor& visitor, int workers = 1);

}  // namespace ulmflow

#include "ulmflow/detail/sparse_index_impl.hpp"
