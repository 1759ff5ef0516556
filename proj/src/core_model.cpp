#include "ulmflow/core_model.hpp"

#include <algorithm>
#include <stdexcept>

namespace ulmflow {

double poiseuille_speed(const PoiseuilleParams& p, Vec2 x) {
  return p.g_sharp * (p.radius * p.radius - squared_norm(x - p.center));
}

double quadratic_speed(const QuadraticParams& q, Vec2 x) {
  return q.a * squared_norm(x) + dot(q.b, x) + q.c;
}

double mean_speed(const PoiseuilleParams& p) { return 0.5 * p.g_sharp * p.radius * p.radius; }

QuadraticParams poiseuille_to_quadratic(const PoiseuilleParams& p) {
  const double g = p.g_sharp;
  return {-g, 2.0 * g * p.center, g * (p.radius * p.radius - squared_norm(p.center))};
}

std::optional<PoiseuilleParams> quadratic_to_poiseuille(const QuadraticParams& q) {
  if (!(q.a < 0.0)) return std::nullopt;
  const Vec2 center = q.b / (-2.0 * q.a);
  // R^2 = -c/a + |b|^2 / (4 a^2) = |xc|^2 - c/a
  const double r2 = squared_norm(center) - q.c / q.a;
  if (!(r2 > 0.0) || !std::isfinite(r2)) return std::nullopt;
  return PoiseuilleParams{-q.a, std::sqrt(r2), center};
}

DirectEstimate direct_estimate(std::span<const Sample> samples) {
  if (samples.empty()) throw std::invalid_argument("direct_estimate: empty sample set");

  double wsum = 0.0;
  Vec2 centroid{};
  double vsum = 0.0;
  for (const auto& s : samples) {
    wsum += s.weight;
    centroid = centroid + s.weight * s.position;
    vsum += s.weight * s.speed;
  }
  centroid = centroid / wsum;

  double radius = 0.0;
  for (const auto& s : samples) radius = std::max(radius, norm(s.position - centroid));

  DirectEstimate out;
  out.mean_speed = vsum / wsum;
  out.params.center = centroid;
  out.params.radius = radius;
  out.degenerate = !(radius > 0.0);
  if (!out.degenerate) out.params.g_sharp = 2.0 * out.mean_speed / (radius * radius);
  return out;
}

}  // namespace ulmflow
