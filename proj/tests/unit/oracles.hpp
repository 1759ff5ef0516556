#pragma once

// Independent reference computations used only by the tests. None of these
// share code with the library implementations they check.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "ulmflow/core_model.hpp"
#include "ulmflow/svi.hpp"
#include "ulmflow/volume.hpp"

namespace oracle {

/// Solves A x = b by Gaussian elimination with partial pivoting.
template <std::size_t N>
std::array<double, N> solve(std::array<std::array<double, N>, N> a, std::array<double, N> b) {
  for (std::size_t c = 0; c < N; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < N; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < N; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < N; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  std::array<double, N> x{};
  for (std::size_t i = N; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < N; ++k) s -= a[i][k] * x[k];
    x[i] = s / a[i][i];
  }
  return x;
}

/// Weighted least squares of v on (|x|^2, x1, x2, 1).
inline std::array<double, 4> quadratic_least_squares(std::span<const ulmflow::Sample> s) {
  std::array<std::array<double, 4>, 4> a{};
  std::array<double, 4> b{};
  for (const auto& p : s) {
    const double phi[4] = {p.position.x * p.position.x + p.position.y * p.position.y, p.position.x,
                           p.position.y, 1.0};
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) a[i][j] += p.weight * phi[i] * phi[j];
      b[i] += p.weight * phi[i] * p.speed;
    }
  }
  return solve<4>(a, b);
}

/// Monte Carlo cost written sample by sample straight from its definition.
inline double svi_cost(const ulmflow::VariationalState& st, std::span<const ulmflow::Sample> s,
                       const ulmflow::Prior& prior, std::span<const ulmflow::ParamVec> eps, double lambda) {
  double wsum = 0.0;
  for (const auto& p : s) wsum += p.weight;
  double lik = 0.0;
  for (const auto& e : eps) {
    double sq = 0.0;
    for (const auto& p : s) {
      double w[4];
      for (int j = 0; j < 4; ++j) w[j] = st.mean[j] + std::log1p(std::exp(st.rho[j])) * e[j];
      const double pred = w[0] * (p.position.x * p.position.x + p.position.y * p.position.y) +
                          w[1] * p.position.x + w[2] * p.position.y + w[3];
      sq += p.weight * (p.speed - pred) * (p.speed - pred);
    }
    lik += sq / (2.0 * wsum);
  }
  lik /= static_cast<double>(eps.size());
  double reg = 0.0;
  for (int j = 0; j < 4; ++j) {
    const double sx = std::log1p(std::exp(st.rho[j]));
    const double sm = prior.sigma[j];
    const double du = st.mean[j] - prior.mean[j];
    reg += -std::log(sx * sx + 1.0) + std::log(sm * sm + (sx * sx + du * du) / (sm * sm));
  }
  return lik + lambda * reg;
}

/// Real roots of det(H - x I) = 0 for symmetric H via the trigonometric
/// cubic formula, ascending.
inline std::array<double, 3> symmetric_eigenvalues(const std::array<std::array<double, 3>, 3>& h) {
  const double p1 = h[0][1] * h[0][1] + h[0][2] * h[0][2] + h[1][2] * h[1][2];
  const double q = (h[0][0] + h[1][1] + h[2][2]) / 3.0;
  const double p2 = (h[0][0] - q) * (h[0][0] - q) + (h[1][1] - q) * (h[1][1] - q) +
                    (h[2][2] - q) * (h[2][2] - q) + 2.0 * p1;
  const double p = std::sqrt(p2 / 6.0);
  if (p == 0.0) return {q, q, q};
  std::array<std::array<double, 3>, 3> b{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) b[i][j] = (h[i][j] - (i == j ? q : 0.0)) / p;
  const double det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) -
                     b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0]) +
                     b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
  const double r = std::clamp(det / 2.0, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;
  const double pi = std::acos(-1.0);
  const double e1 = q + 2.0 * p * std::cos(phi);
  const double e3 = q + 2.0 * p * std::cos(phi + 2.0 * pi / 3.0);
  const double e2 = 3.0 * q - e1 - e3;
  std::array<double, 3> out{e1, e2, e3};
  std::sort(out.begin(), out.end());
  return out;
}

/// Two-sided exact signed-rank p by enumerating all 2^n sign patterns over
/// midranks of |d| (zero differences dropped).
inline double wilcoxon_enumerate(const std::vector<std::pair<double, double>>& pairs) {
  std::vector<double> d;
  for (const auto& [a, b] : pairs)
    if (a - b != 0.0) d.push_back(a - b);
  const std::size_t n = d.size();
  if (n == 0) return 1.0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = 0.5 * double(i + j) + 1.0;
    i = j + 1;
  }
  double observed = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) observed += rank[i];
  const double total = std::accumulate(rank.begin(), rank.end(), 0.0);
  const double obs_low = std::min(observed, total - observed);
  std::uint64_t le = 0;
  const std::uint64_t patterns = 1ULL << n;
  for (std::uint64_t m = 0; m < patterns; ++m) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (m >> i & 1) w += rank[i];
    if (w <= obs_low + 1e-9) ++le;
  }
  return std::min(1.0, 2.0 * double(le) / double(patterns));
}

/// Cubic moving average by direct triple loop, zero padding.
inline ulmflow::DoubleVolume box_average(const ulmflow::DoubleVolume& v, int h) {
  const auto d = v.dims();
  ulmflow::DoubleVolume out(d);
  const double n = std::pow(2.0 * h + 1.0, 3);
  for (int a = 0; a < d.h; ++a)
    for (int b = 0; b < d.w; ++b)
      for (int c = 0; c < d.t; ++c) {
        double s = 0.0;
        for (int i = a - h; i <= a + h; ++i)
          for (int j = b - h; j <= b + h; ++j)
            for (int k = c - h; k <= c + h; ++k)
              if (d.contains(i, j, k)) s += v(i, j, k);
        out(a, b, c) = s / n;
      }
  return out;
}

/// Voxels whose open cube (i, i+1)^3 the segment a->b passes through, found
/// by exact slab intersection per voxel of the bounding box. Segments that
/// only graze a face or edge are excluded, matching a traversal that enters
/// each voxel through its interior.
inline std::set<std::array<int, 3>> pierced_voxels(const ulmflow::Vec3& a, const ulmflow::Vec3& b,
                                                   const ulmflow::Dims& dims) {
  std::set<std::array<int, 3>> out;
  int lo[3], hi[3];
  for (int k = 0; k < 3; ++k) {
    lo[k] = std::max(0, int(std::floor(std::min(a[k], b[k]))) - 1);
    hi[k] = std::min(dims.extent(k) - 1, int(std::floor(std::max(a[k], b[k]))) + 1);
  }
  for (int i = lo[0]; i <= hi[0]; ++i)
    for (int j = lo[1]; j <= hi[1]; ++j)
      for (int l = lo[2]; l <= hi[2]; ++l) {
        const int idx[3] = {i, j, l};
        double t0 = 0.0, t1 = 1.0;
        bool hit = true;
        for (int k = 0; k < 3 && hit; ++k) {
          const double d = b[k] - a[k];
          if (d == 0.0) {
            hit = a[k] > idx[k] && a[k] < idx[k] + 1;
          } else {
            double u = (idx[k] - a[k]) / d, w = (idx[k] + 1 - a[k]) / d;
            if (u > w) std::swap(u, w);
            t0 = std::max(t0, u);
            t1 = std::min(t1, w);
          }
        }
        if (hit && t1 - t0 > 1e-12) out.insert({i, j, l});
      }
  return out;
}

/// Kolmogorov-Smirnov distance between a sample and a CDF.
template <typename Cdf>
double ks_distance(std::vector<double> x, Cdf cdf) {
  std::sort(x.begin(), x.end());
  const double n = double(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, std::abs(f - double(i) / n), std::abs(double(i + 1) / n - f)});
  }
  return d;
}

}  // namespace oracle
