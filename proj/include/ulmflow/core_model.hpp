#pragma once

// Laminar (Hagen-Poiseuille) flow on a circular vessel cross-section.
//
//   v(x) = G# (R^2 - |x - xc|^2),   G# = G / (4 mu)
//
// and its expanded quadratic form v(x) = a |x|^2 + b.x + c with a = -G#.

#include <optional>
#include <span>
#include <vector>

#include "ulmflow/geometry.hpp"

namespace ulmflow {

struct PoiseuilleParams {
  double g_sharp = 0.0;  // (m s)^-1
  double radius = 0.0;   // m
  Vec2 center{};         // m
};

struct QuadraticParams {
  double a = 0.0;  // (m s)^-1
  Vec2 b{};        // s^-1
  double c = 0.0;  // m/s
};

/// One grouped observation. `weight` is the number of trajectories averaged
/// into the source voxel (1 for individual trajectories).
struct Sample {
  Vec2 position{};
  double speed = 0.0;
  double weight = 1.0;
};

using SampleSet = std::vector<Sample>;

double poiseuille_speed(const PoiseuilleParams& p, Vec2 x);
double quadratic_speed(const QuadraticParams& q, Vec2 x);

/// Cross-sectional mean speed, G# R^2 / 2.
double mean_speed(const PoiseuilleParams& p);

QuadraticParams poiseuille_to_quadratic(const PoiseuilleParams& p);

/// Inverse of poiseuille_to_quadratic. Empty when the parabola opens upward
/// (a >= 0) or the implied radius^2 is not positive.
std::optional<PoiseuilleParams> quadratic_to_poiseuille(const QuadraticParams& q);

struct DirectEstimate {
  PoiseuilleParams params;
  double mean_speed = 0.0;
  /// All samples coincide with the weighted centroid: radius is zero and
  /// g_sharp is undefined (left at 0).
  bool degenerate = false;
};

/// Baseline estimator: weighted centroid, farthest sample as the wall,
/// weighted mean speed, and g_sharp = 2 vbar / R^2.
/// Throws std::invalid_argument on an empty set.
DirectEstimate direct_estimate(std::span<const Sample> samples);

}  // namespace ulmflow
