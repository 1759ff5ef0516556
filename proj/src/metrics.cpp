#include "ulmflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ulmflow {

ParamErrors normalized_errors(const PoiseuilleParams& est, double est_mean_speed,
                              const PoiseuilleParams& truth, double truth_mean_speed) {
  if (truth.radius == 0.0) throw std::invalid_argument("normalized_errors: zero truth radius");
  if (truth.g_sharp == 0.0) throw std::invalid_argument("normalized_errors: zero truth g_sharp");
  if (truth_mean_speed == 0.0) throw std::invalid_argument("normalized_errors: zero truth mean speed");
  ParamErrors e;
  e.radius_err = std::abs(est.radius - truth.radius) / std::abs(truth.radius);
  e.center_err = norm(est.center - truth.center) / std::abs(truth.radius);
  e.gsharp_err = std::abs(est.g_sharp - truth.g_sharp) / std::abs(truth.g_sharp);
  e.vmean_err = std::abs(est_mean_speed - truth_mean_speed) / std::abs(truth_mean_speed);
  return e;
}

double dice_loss(const MaskVolume& estimate, const MaskVolume& truth) {
  if (estimate.dims() != truth.dims()) throw std::invalid_argument("dice_loss: dims mismatch");
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const bool ea = estimate[i] != 0;
    const bool eb = truth[i] != 0;
    a += ea;
    b += eb;
    both += ea && eb;
  }
  if (a + b == 0) return 0.0;
  return 1.0 - 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

double map_mse(const ScalarVolume& v_est, const ScalarVolume& v_true, const MaskVolume& b_est,
               const MaskVolume& b_true, const ScalarVolume& centerline_speed) {
  const Dims d = v_est.dims();
  if (v_true.dims() != d || b_est.dims() != d || b_true.dims() != d || centerline_speed.dims() != d)
    throw std::invalid_argument("map_mse: dims mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < v_est.size(); ++i) {
    if (b_est[i] == 0 && b_true[i] == 0) continue;
    const double vc = centerline_speed[i];
    if (!(vc > 0.0)) throw std::invalid_argument("map_mse: centerline speed must be positive on the domain");
    const double r = (double(v_est[i]) - double(v_true[i])) / vc;
    sum += r * r;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("map_mse: empty evaluation domain");
  return sum / static_cast<double>(n);
}

MaskVolume support_mask(const ScalarVolume& v) {
  MaskVolume m(v.dims());
  for (std::size_t i = 0; i < v.size(); ++i) m[i] = v[i] > 0.0f ? 1 : 0;
  return m;
}

std::vector<double> midranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const std::pair<double, double>> pairs,
                                    int exact_limit) {
  std::vector<double> diff;
  for (const auto& [a, b] : pairs)
    if (a - b != 0.0) diff.push_back(a - b);
  WilcoxonResult res;
  res.n_used = static_cast<int>(diff.size());
  if (diff.empty()) return res;

  std::vector<double> mag(diff.size());
  for (std::size_t i = 0; i < diff.size(); ++i) mag[i] = std::abs(diff[i]);
  const std::vector<double> ranks = midranks(mag);
  for (std::size_t i = 0; i < diff.size(); ++i)
    if (diff[i] > 0.0) res.w_plus += ranks[i];

  const int n = res.n_used;
  if (n <= exact_limit) {
    // doubled midranks are integers; count sign assignments per doubled W+
    res.exact = true;
    std::vector<int> twice(diff.size());
    int total = 0;
    for (std::size_t i = 0; i < diff.size(); ++i) {
      twice[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
      total += twice[i];
    }
    std::vector<double> ways(static_cast<std::size_t>(total) + 1, 0.0);
    ways[0] = 1.0;
    int reach = 0;
    for (int r : twice) {
      for (int s = reach; s >= 0; --s)
        if (ways[static_cast<std::size_t>(s)] != 0.0) ways[static_cast<std::size_t>(s + r)] += ways[static_cast<std::size_t>(s)];
      reach += r;
    }
    const double all = std::ldexp(1.0, n);
    const long observed = std::lround(2.0 * res.w_plus);
    double lower = 0.0, upper = 0.0;
    for (long s = 0; s <= total; ++s) {
      if (s <= observed) lower += ways[static_cast<std::size_t>(s)];
      if (s >= observed) upper += ways[static_cast<std::size_t>(s)];
    }
    res.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / all);
    return res;
  }

  const double nn = n;
  const double mean = nn * (nn + 1.0) / 4.0;
  double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
  std::vector<double> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    var -= (t * t * t - t) / 48.0;
    i = j + 1;
  }
  if (!(var > 0.0)) return res;
  const double dev = std::max(0.0, std::abs(res.w_plus - mean) - 0.5);
  res.p_value = std::min(1.0, std::erfc(dev / std::sqrt(var) / std::sqrt(2.0)));
  return res;
}

ExpFit exp_fit(std::span<const double> x, std::span<const double> y, double zero_shift) {
  if (x.size() != y.size()) throw std::invalid_argument("exp_fit: x and y differ in length");
  const std::size_t n = x.size();
  if (n < 2 || std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }))
    throw std::invalid_argument("exp_fit: need at least two distinct x values");
  std::vector<double> ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = y[i] + zero_shift;
    if (!(v > 0.0)) throw std::invalid_argument("exp_fit: y must be positive");
    ly[i] = std::log(v);
  }
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / double(n);
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / double(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (ly[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  const double rate = sxy / sxx;
  return {std::exp(my - rate * mx), rate};
}

double better_ratio(std::span<const std::pair<double, double>> pairs) {
  if (pairs.empty()) throw std::invalid_argument("better_ratio: empty input");
  std::size_t k = 0;
  for (const auto& [m, d] : pairs) k += m < d;
  return static_cast<double>(k) / static_cast<double>(pairs.size());
}

SpearmanResult spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 3)
    throw std::invalid_argument("spearman: need two series of equal length >= 3");
  const auto rx = midranks(x);
  const auto ry = midranks(y);
  const double n = static_cast<double>(x.size());
  const double m = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - m) * (ry[i] - m);
    sxx += (rx[i] - m) * (rx[i] - m);
    syy += (ry[i] - m) * (ry[i] - m);
  }
  SpearmanResult r;
  if (sxx == 0.0 || syy == 0.0) return r;
  r.rho = sxy / std::sqrt(sxx * syy);
  r.p_value = std::erfc(std::abs(r.rho) * std::sqrt(n - 1.0) / std::sqrt(2.0));
  return r;
}

double percentile(std::span<const double> v, double q) {
  if (v.empty()) throw std::invalid_argument("percentile: empty input");
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

double median(std::span<const double> v) { return percentile(v, 50.0); }

}  // namespace ulmflow
