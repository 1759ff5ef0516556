#include <doctest.h>

#include <stdexcept>

#include <random>

#include "ulmflow/core_model.hpp"

using namespace ulmflow;
using doctest::Approx;

namespace {
const PoiseuilleParams kVessel{7.5e5, 200e-6, {0.0, 0.0}};
}

TEST_CASE("poiseuille speed at the axis, wall and half radius") {
  CHECK(poiseuille_speed(kVessel, {0, 0}) == Approx(0.030).epsilon(1e-12));
  CHECK(poiseuille_speed(kVessel, {100e-6, 0}) == Approx(0.0225).epsilon(1e-12));
  const PoiseuilleParams off{3.1e5, 120e-6, {10e-6, -40e-6}};
  for (double th : {0.0, 0.7, 2.1, 4.0}) {
    const Vec2 x = off.center + Vec2{off.radius * std::cos(th), off.radius * std::sin(th)};
    CHECK(std::abs(poiseuille_speed(off, x)) < 1e-15);
  }
}

TEST_CASE("mean speed is half the peak") {
  CHECK(mean_speed(kVessel) == Approx(0.015).epsilon(1e-12));
  CHECK(mean_speed({0.0, 1e-4, {}}) == 0.0);
  CHECK(mean_speed({1.5e6, 200e-6, {}}) == Approx(0.030).epsilon(1e-12));
}

TEST_CASE("mean speed equals the Monte Carlo disk average") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double sum = 0.0;
  int n = 0;
  while (n < 1000000) {
    const Vec2 x{u(rng) * kVessel.radius, u(rng) * kVessel.radius};
    if (squared_norm(x) > kVessel.radius * kVessel.radius) continue;
    sum += poiseuille_speed(kVessel, x);
    ++n;
  }
  CHECK(sum / n == Approx(mean_speed(kVessel)).epsilon(0.005));
}

TEST_CASE("quadratic form of centered and shifted vessels") {
  const QuadraticParams q = poiseuille_to_quadratic(kVessel);
  CHECK(q.a == -7.5e5);
  CHECK(q.b.x == 0.0);
  CHECK(q.b.y == 0.0);
  CHECK(q.c == Approx(0.03).epsilon(1e-14));

  const QuadraticParams unit = poiseuille_to_quadratic({1.0, 1.0, {0, 0}});
  CHECK(unit.a == -1.0);
  CHECK(unit.c == 1.0);

  const QuadraticParams s = poiseuille_to_quadratic({7.5e5, 200e-6, {50e-6, 0}});
  CHECK(s.a == -7.5e5);
  CHECK(s.b.x == Approx(75.0).epsilon(1e-12));
  CHECK(s.b.y == 0.0);
  CHECK(s.c == Approx(0.028125).epsilon(1e-12));
}

TEST_CASE("quadratic to poiseuille inverts the examples and flags non-physical input") {
  const auto p = quadratic_to_poiseuille({-7.5e5, {0, 0}, 0.03});
  REQUIRE(p);
  CHECK(p->g_sharp == Approx(7.5e5).epsilon(1e-14));
  CHECK(p->radius == Approx(200e-6).epsilon(1e-12));
  const auto s = quadratic_to_poiseuille({-7.5e5, {75.0, 0}, 0.028125});
  REQUIRE(s);
  CHECK(s->radius == Approx(200e-6).epsilon(1e-12));
  CHECK(s->center.x == Approx(50e-6).epsilon(1e-12));
  CHECK_FALSE(quadratic_to_poiseuille({1.0, {0, 0}, 1.0}));
  CHECK_FALSE(quadratic_to_poiseuille({0.0, {0, 0}, 1.0}));
  CHECK_FALSE(quadratic_to_poiseuille({-1.0, {0, 0}, -1.0}));
}

TEST_CASE("round trip and forward equivalence on random vessels") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> lg(3.0, 7.0), lr(-5.0, -3.0), u(-1.0, 1.0);
  double worst = 0.0, worst_fwd = 0.0;
  for (int i = 0; i < 10000; ++i) {
    // centers within a few radii of the origin; far-off centers make the
    // quadratic form itself ill-conditioned
    const double radius = std::pow(10.0, lr(rng));
    const PoiseuilleParams p{std::pow(10.0, lg(rng)), radius, {3 * radius * u(rng), 3 * radius * u(rng)}};
    const auto back = quadratic_to_poiseuille(poiseuille_to_quadratic(p));
    REQUIRE(back);
    worst = std::max({worst, std::abs(back->g_sharp / p.g_sharp - 1), std::abs(back->radius / p.radius - 1)});
    // center error relative to the radius, the natural scale of the field
    worst = std::max({worst, std::abs(back->center.x - p.center.x) / p.radius,
                      std::abs(back->center.y - p.center.y) / p.radius});
    const Vec2 x = p.center + Vec2{u(rng) * p.radius, u(rng) * p.radius};
    const double v1 = poiseuille_speed(p, x), v2 = quadratic_speed(poiseuille_to_quadratic(p), x);
    worst_fwd = std::max(worst_fwd, std::abs(v1 - v2) / (p.g_sharp * p.radius * p.radius));
  }
  CHECK(worst < 1e-12);
  CHECK(worst_fwd < 1e-12);
}

TEST_CASE("direct estimate examples") {
  const double r0 = 80e-6, v1 = 0.012;
  const SampleSet pair{{{-r0, 0}, v1, 1}, {{r0, 0}, v1, 1}};
  const DirectEstimate d = direct_estimate(pair);
  CHECK(d.params.center.x == 0.0);
  CHECK(d.params.radius == Approx(r0).epsilon(1e-14));
  CHECK(d.mean_speed == Approx(v1).epsilon(1e-14));
  CHECK(d.params.g_sharp == Approx(2 * v1 / (r0 * r0)).epsilon(1e-12));
  CHECK_FALSE(d.degenerate);

  const DirectEstimate one = direct_estimate(SampleSet{{{0, 0}, 0.03, 1}});
  CHECK(one.degenerate);
  CHECK(one.params.radius == 0.0);

  const DirectEstimate two = direct_estimate(SampleSet{{{0, 0}, 0.03, 1}, {{100e-6, 0}, 0.01125, 1}});
  CHECK(two.params.center.x == Approx(50e-6).epsilon(1e-12));
  CHECK(two.params.radius == Approx(50e-6).epsilon(1e-12));
  CHECK(two.mean_speed == Approx(0.020625).epsilon(1e-12));

  CHECK_THROWS_AS(direct_estimate(SampleSet{}), std::invalid_argument);
}

TEST_CASE("direct estimate recovers a full noiseless circle exactly") {
  SampleSet ring;
  const Vec2 c{30e-6, -20e-6};
  const double r = 150e-6;
  for (int k = 0; k < 16; ++k) {
    const double th = 2 * std::acos(-1.0) * k / 16;
    ring.push_back({c + Vec2{r * std::cos(th), r * std::sin(th)}, 0.0, 1.0});
  }
  const DirectEstimate d = direct_estimate(ring);
  CHECK(d.params.center.x == Approx(c.x).epsilon(1e-12));
  CHECK(d.params.center.y == Approx(c.y).epsilon(1e-12));
  CHECK(d.params.radius == Approx(r).epsilon(1e-12));
}

TEST_CASE("direct estimate uses sample weights") {
  const SampleSet s{{{0, 0}, 0.01, 3}, {{40e-6, 0}, 0.03, 1}};
  const DirectEstimate d = direct_estimate(s);
  CHECK(d.params.center.x == Approx(10e-6).epsilon(1e-12));
  CHECK(d.mean_speed == Approx(0.015).epsilon(1e-12));
  CHECK(d.params.radius == Approx(30e-6).epsilon(1e-12));
}
