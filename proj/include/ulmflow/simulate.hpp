#pragma once

// Synthetic ULM data: flux-weighted cross-section draws, straight tube pairs,
// and a kinematic bifurcation phantom, plus the line rasteriser that turns
// trajectories into a speed/count volume.
//
// Physical positions are in meters with axes (x, y, z) <-> volume (h, w, t);
// voxel i spans [i * pitch, (i + 1) * pitch) along each axis.

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ulmflow/core_model.hpp"
#include "ulmflow/volume.hpp"

namespace ulmflow {

/// Offset from the axis drawn with density proportional to the local
/// Poiseuille speed (microbubbles are carried by the flux).
Vec2 sample_flux_weighted_offset(double radius, std::mt19937_64& rng);

/// Analytic CDF of the flux-weighted radial distance, (2 r^2 R^2 - r^4) / R^4.
double flux_weighted_radius_cdf(double r, double radius);

struct CrossSectionDraw {
  SampleSet samples;    // positions with localisation noise
  SampleSet noiseless;  // same draws before noise
  PoiseuilleParams truth;
};

CrossSectionDraw sample_cross_section(const PoiseuilleParams& p, int n, double noise_std,
                                      std::uint64_t seed);

struct TrajectoryPoint {
  double time = 0.0;  // s
  Vec3 position{};    // m
  double speed = 0.0;
};

struct Trajectory {
  int id = 0;
  std::vector<TrajectoryPoint> points;
};

struct TubeSpec {
  Vec3 axis_origin{};
  Vec3 axis_direction{0.0, 0.0, 1.0};
  double radius = 0.0;
  double peak_speed = 0.0;
  double length = 0.0;
};

/// Two straight tubes, radii 100/50 um, peaks 30/15 mm/s, 25 um between the
/// nearest walls; the small one is tilted by `angle_deg` in the (w, t) plane.
struct TubePairConfig {
  double large_radius = 100e-6;
  double small_radius = 50e-6;
  double large_peak = 0.030;
  double small_peak = 0.015;
  double edge_gap = 25e-6;
  double angle_deg = 0.0;
  int tracks_per_tube = 10;
  double voxel_um = 5.0;
  Dims dims{76, 64, 64};
  std::uint64_t seed = 0;
};

struct GroundTruth {
  MaskVolume mask;               // B_T
  ScalarVolume speed;            // V_T
  ScalarVolume centerline_speed;  // V_c of the nearest vessel axis, every voxel
};

struct TubePhantom {
  std::array<TubeSpec, 2> tubes;
  std::vector<Trajectory> tracks;
  VolumeBundle bundle;
  GroundTruth truth;
};

std::array<TubeSpec, 2> tube_pair_specs(const TubePairConfig& cfg);

/// Throws std::invalid_argument when the two lumens overlap.
TubePhantom generate_tube_pair(const std::array<TubeSpec, 2>& specs, int tracks_per_tube,
                               Dims dims, double voxel_um, std::uint64_t seed);
TubePhantom generate_tube_pair(const TubePairConfig& cfg);

GroundTruth tube_ground_truth(std::span<const TubeSpec> tubes, Dims dims, double voxel_um);

struct BifurcationSpec {
  double domain_side = 1e-3;
  double main_radius = 150e-6;
  double daughter_radius = 119e-6;
  std::array<double, 3> center_speeds{0.0279, 0.0236, 0.0208};  // main, daughter 1, daughter 2
  double branch_angle = 0.5235987755982988;                       // rad from the main axis
  double junction_fraction = 0.5;  // junction depth along the main axis / domain side
  double injection_rate = 200.0;   // trajectories / s
  double start_time = 2.0;         // recording starts this long after injection begins
  double duration = 2.0;           // recording window, s
  double time_step = 2e-3;         // s

  void validate() const;
};

/// One straight branch segment of the bifurcation.
struct Branch {
  Vec3 origin{};
  Vec3 direction{};
  double length = 0.0;
  double radius = 0.0;
  double peak_speed = 0.0;
};

std::array<Branch, 3> bifurcation_branches(const BifurcationSpec& spec);

/// Trajectories with point times inside [start_time, start_time + duration).
/// Injection times follow a Poisson process at `injection_rate` from t = 0.
std::vector<Trajectory> generate_bifurcation(const BifurcationSpec& spec, std::uint64_t seed);

/// Keeps the points with time in [t0, t1); drops trajectories left empty.
std::vector<Trajectory> slice_trajectories(std::span<const Trajectory> trajectories, double t0,
                                           double t1);

GroundTruth bifurcation_ground_truth(const BifurcationSpec& spec, Dims dims, double voxel_um);

/// Voxels pierced by the segment a->b, in traversal order. Coordinates are in
/// voxel units (voxel i spans [i, i+1)); the segment is clipped to the grid.
std::vector<std::array<int, 3>> traverse_segment(Vec3 a, Vec3 b, Dims dims);

/// Accumulates every segment into the voxels it pierces: speed sum, one
/// event per voxel per segment, and the mean segment direction.
VolumeBundle rasterize_trajectories(std::span<const Trajectory> trajectories, Dims dims,
                                    std::array<double, 3> voxel_size_um);

}  // namespace ulmflow
