#include "ulmflow/svi.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/random/normal_distribution.hpp>

#include "ulmflow/random.hpp"
#include "ulmflow/simd/kernels.hpp"

namespace ulmflow {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double softplus_inverse(double y) {
  // log(exp(y) - 1), written to stay finite for large y
  return y + std::log(-std::expm1(-y));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

ParamVec VariationalState::sigma() const {
  ParamVec s;
  for (int j = 0; j < kNumFlowParams; ++j) s[j] = softplus(rho[j]);
  return s;
}

void SviConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("SviConfig: " + what); };
  if (mc_samples < 1) fail("mc_samples must be >= 1");
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (iterations < 1) fail("iterations must be >= 1");
  if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  if (restarts < 1) fail("restarts must be >= 1");
  if (!(radius_limit_low < 1.0 && 1.0 < radius_limit_high))
    fail("radius limits must satisfy low < 1 < high");
  if (!(prior_sigma_a > 0.0 && prior_sigma_other > 0.0)) fail("prior sigmas must be > 0");
  if (!(initial_sigma > 0.0)) fail("initial_sigma must be > 0");
  if (!(tail_average >= 0.0 && tail_average < 1.0)) fail("tail_average must be in [0, 1)");
}

// --- normalization ---------------------------------------------------------

Sample NormalizationTransform::normalize(const Sample& s) const {
  return {(s.position - position_offset) / position_scale, (s.speed - speed_offset) / speed_scale,
          s.weight};
}

Sample NormalizationTransform::denormalize(const Sample& s) const {
  return {s.position * position_scale + position_offset, s.speed * speed_scale + speed_offset,
          s.weight};
}

QuadraticParams NormalizationTransform::to_normalized(const QuadraticParams& q) const {
  const double sx = position_scale;
  const double sv = speed_scale;
  const Vec2 mx = position_offset;
  QuadraticParams n;
  n.a = q.a * sx * sx / sv;
  n.b = (sx / sv) * (2.0 * q.a * mx + q.b);
  n.c = (q.a * squared_norm(mx) + dot(q.b, mx) + q.c - speed_offset) / sv;
  return n;
}

QuadraticParams NormalizationTransform::to_physical(const QuadraticParams& n) const {
  const double sx = position_scale;
  const double sv = speed_scale;
  const Vec2 mx = position_offset;
  QuadraticParams q;
  q.a = n.a * sv / (sx * sx);
  q.b = (sv / sx) * n.b - 2.0 * q.a * mx;
  q.c = sv * n.c + speed_offset - q.a * squared_norm(mx) - dot(q.b, mx);
  return q;
}

NormalizedSamples normalize_samples(std::span<const Sample> samples) {
  if (samples.empty()) throw std::invalid_argument("normalize_samples: empty sample set");
  double wsum = 0.0;
  Vec2 mx{};
  double mv = 0.0;
  for (const auto& s : samples) {
    wsum += s.weight;
    mx = mx + s.weight * s.position;
    mv += s.weight * s.speed;
  }
  mx = mx / wsum;
  mv /= wsum;
  double pos_var = 0.0;
  double speed_var = 0.0;
  for (const auto& s : samples) {
    pos_var += s.weight * squared_norm(s.position - mx);
    speed_var += s.weight * (s.speed - mv) * (s.speed - mv);
  }
  pos_var /= 2.0 * wsum;
  speed_var /= wsum;

  NormalizedSamples out;
  out.transform.position_offset = mx;
  out.transform.speed_offset = mv;
  out.degenerate_position = !(pos_var > 0.0);
  out.degenerate_speed = !(speed_var > 0.0);
  out.transform.position_scale = out.degenerate_position ? 1.0 : std::sqrt(pos_var);
  out.transform.speed_scale = out.degenerate_speed ? 1.0 : std::sqrt(speed_var);
  out.samples.reserve(samples.size());
  for (const auto& s : samples) out.samples.push_back(out.transform.normalize(s));
  return out;
}

ParamVec to_param_vec(const QuadraticParams& q) { return {q.a, q.b.x, q.b.y, q.c}; }

QuadraticParams from_param_vec(const ParamVec& p) { return {p[0], {p[1], p[2]}, p[3]}; }

// --- cost ------------------------------------------------------------------

QuadraticFitStats::QuadraticFitStats(std::span<const Sample> samples) {
  const std::size_t n = samples.size();
  std::vector<double> x(n), y(n), v(n), w(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = samples[i].position.x;
    y[i] = samples[i].position.y;
    v[i] = samples[i].speed;
    w[i] = samples[i].weight;
  }
  simd::QuadraticMoments m;
  simd::kernels().quadratic_moments(x.data(), y.data(), v.data(), w.data(), n, m);

  // features (r^2, x, y, 1)
  gram_ = {{{m.wr4, m.wr2x, m.wr2y, m.wr2},
            {m.wr2x, m.wxx, m.wxy, m.wx},
            {m.wr2y, m.wxy, m.wyy, m.wy},
            {m.wr2, m.wx, m.wy, m.w}}};
  moment_ = {m.wvr2, m.wvx, m.wvy, m.wv};
  vv_ = m.wvv;
  total_weight_ = m.w;
}

double QuadraticFitStats::half_mse(const ParamVec& p) const {
  double quad = 0.0;
  double lin = 0.0;
  for (int i = 0; i < 4; ++i) {
    double row = 0.0;
    for (int j = 0; j < 4; ++j) row += gram_[i][j] * p[j];
    quad += p[i] * row;
    lin += moment_[i] * p[i];
  }
  return (vv_ - 2.0 * lin + quad) / (2.0 * total_weight_);
}

ParamVec QuadraticFitStats::half_mse_gradient(const ParamVec& p) const {
  ParamVec g;
  for (int i = 0; i < 4; ++i) {
    double row = 0.0;
    for (int j = 0; j < 4; ++j) row += gram_[i][j] * p[j];
    g[i] = (row - moment_[i]) / total_weight_;
  }
  return g;
}

double svi_regularizer(const VariationalState& state, const Prior& prior, double lambda) {
  if (lambda == 0.0) return 0.0;
  const ParamVec sigma = state.sigma();
  double acc = 0.0;
  for (int j = 0; j < kNumFlowParams; ++j) {
    const double s2 = sigma[j] * sigma[j];
    const double sm2 = prior.sigma[j] * prior.sigma[j];
    const double d = state.mean[j] - prior.mean[j];
    acc += -std::log(s2 + 1.0) + std::log(sm2 + (s2 + d * d) / sm2);
  }
  return lambda * acc;
}

namespace {

ParamVec draw_point(const VariationalState& state, const ParamVec& sigma, const ParamVec& eps) {
  ParamVec w;
  for (int j = 0; j < kNumFlowParams; ++j) w[j] = state.mean[j] + sigma[j] * eps[j];
  return w;
}

}  // namespace

double svi_cost(const VariationalState& state, const QuadraticFitStats& stats, const Prior& prior,
                std::span<const ParamVec> eps_draws, double lambda) {
  const ParamVec sigma = state.sigma();
  double lik = 0.0;
  for (const auto& eps : eps_draws) lik += stats.half_mse(draw_point(state, sigma, eps));
  lik /= static_cast<double>(eps_draws.size());
  return lik + svi_regularizer(state, prior, lambda);
}

SviGradient svi_cost_gradient(const VariationalState& state, const QuadraticFitStats& stats,
                              const Prior& prior, std::span<const ParamVec> eps_draws,
                              double lambda) {
  const ParamVec sigma = state.sigma();
  ParamVec g_mean{};
  ParamVec g_sigma{};
  for (const auto& eps : eps_draws) {
    const ParamVec gw = stats.half_mse_gradient(draw_point(state, sigma, eps));
    for (int j = 0; j < kNumFlowParams; ++j) {
      g_mean[j] += gw[j];
      g_sigma[j] += gw[j] * eps[j];
    }
  }
  const double inv_l = 1.0 / static_cast<double>(eps_draws.size());
  SviGradient g{};
  for (int j = 0; j < kNumFlowParams; ++j) {
    double gm = g_mean[j] * inv_l;
    double gs = g_sigma[j] * inv_l;
    if (lambda != 0.0) {
      const double s = sigma[j];
      const double sm2 = prior.sigma[j] * prior.sigma[j];
      const double d = state.mean[j] - prior.mean[j];
      const double q = sm2 + (s * s + d * d) / sm2;
      gm += lambda * (2.0 * d / (sm2 * q));
      gs += lambda * (-2.0 * s / (s * s + 1.0) + 2.0 * s / (sm2 * q));
    }
    g[j] = gm;
    g[kNumFlowParams + j] = gs * sigmoid(state.rho[j]);
  }
  return g;
}

double svi_cost(const VariationalState& state, std::span<const Sample> samples, const Prior& prior,
                std::span<const ParamVec> eps_draws, double lambda) {
  return svi_cost(state, QuadraticFitStats(samples), prior, eps_draws, lambda);
}

SviGradient svi_cost_gradient(const VariationalState& state, std::span<const Sample> samples,
                              const Prior& prior, std::span<const ParamVec> eps_draws,
                              double lambda) {
  return svi_cost_gradient(state, QuadraticFitStats(samples), prior, eps_draws, lambda);
}

// --- fit -------------------------------------------------------------------

namespace {

struct RestartResult {
  VariationalState state;
  double cost = 0.0;
  double log_det = 0.0;
};

RestartResult run_restart(const QuadraticFitStats& stats, const Prior& prior,
                          const ParamVec& init, const SviConfig& cfg, int restart) {
  std::mt19937_64 rng(derive_seed(cfg.rng_seed, {static_cast<std::uint64_t>(restart)}));
  boost::random::normal_distribution<double> normal(0.0, 1.0);

  VariationalState state;
  state.mean = init;
  state.rho.fill(softplus_inverse(cfg.initial_sigma));

  AdamOptimizer<2 * kNumFlowParams> adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                                         cfg.adam_epsilon);
  std::vector<ParamVec> draws(static_cast<std::size_t>(cfg.mc_samples));
  std::array<double, 2 * kNumFlowParams> packed{};

  // Constant-rate Adam on a Monte Carlo objective keeps jittering around the
  // optimum; averaging the tail of the trajectory removes most of that jitter.
  const int tail = static_cast<int>(std::floor(cfg.tail_average * cfg.iterations));
  ParamVec mean_sum{}, sigma_sum{};

  for (int it = 0; it < cfg.iterations; ++it) {
    for (auto& d : draws)
      for (auto& e : d) e = normal(rng);
    SviGradient g = svi_cost_gradient(state, stats, prior, draws, cfg.lambda);
    if (!cfg.optimize_sigma)
      for (int j = 0; j < kNumFlowParams; ++j) g[kNumFlowParams + j] = 0.0;
    for (int j = 0; j < kNumFlowParams; ++j) {
      packed[j] = state.mean[j];
      packed[kNumFlowParams + j] = state.rho[j];
    }
    adam.step(packed, g);
    for (int j = 0; j < kNumFlowParams; ++j) {
      state.mean[j] = packed[j];
      state.rho[j] = packed[kNumFlowParams + j];
    }
    if (it >= cfg.iterations - tail) {
      const ParamVec sig = state.sigma();
      for (int j = 0; j < kNumFlowParams; ++j) {
        mean_sum[j] += state.mean[j];
        sigma_sum[j] += sig[j];
      }
    }
  }
  if (tail > 0) {
    for (int j = 0; j < kNumFlowParams; ++j) {
      state.mean[j] = mean_sum[j] / tail;
      state.rho[j] = softplus_inverse(sigma_sum[j] / tail);
    }
  }

  RestartResult r;
  r.state = state;
  r.cost = svi_cost(state, stats, prior, draws, cfg.lambda);
  for (double s : state.sigma()) r.log_det += std::log(s);
  return r;
}

}  // namespace

PosteriorEstimate fit_svi(std::span<const Sample> samples, const SviConfig& cfg) {
  cfg.validate();
  PosteriorEstimate out;
  if (samples.size() < static_cast<std::size_t>(kMinSviSamples)) {
    out.status = SviStatus::too_few_samples;
    return out;
  }
  const NormalizedSamples norm = normalize_samples(samples);
  const DirectEstimate direct = direct_estimate(samples);
  if (norm.degenerate() || direct.degenerate) {
    out.status = SviStatus::degenerate_samples;
    return out;
  }
  out.initial_radius = direct.params.radius;

  const ParamVec init =
      to_param_vec(norm.transform.to_normalized(poiseuille_to_quadratic(direct.params)));
  Prior prior;
  prior.mean = init;
  prior.sigma = {cfg.prior_sigma_a, cfg.prior_sigma_other, cfg.prior_sigma_other,
                 cfg.prior_sigma_other};

  const QuadraticFitStats stats(norm.samples);

  RestartResult best;
  int best_index = -1;
  for (int r = 0; r < cfg.restarts; ++r) {
    RestartResult cur = run_restart(stats, prior, init, cfg, r);
    const bool better = best_index < 0 || cur.log_det < best.log_det ||
                        (cur.log_det == best.log_det && cur.cost < best.cost);
    if (better) {
      best = cur;
      best_index = r;
    }
  }

  out.status = SviStatus::fitted;
  out.selected_restart = best_index;
  out.means = best.state.mean;
  out.stds = best.state.sigma();
  out.cost = best.cost;
  out.uncertainty_a = out.stds[0];
  out.uncertainty_geo = std::exp(0.25 * best.log_det);

  const auto physical = quadratic_to_poiseuille(norm.transform.to_physical(from_param_vec(out.means)));
  if (physical) {
    out.params_physical = *physical;
    out.mean_speed = mean_speed(*physical);
    const double r = physical->radius;
    out.valid = r >= cfg.radius_limit_low * direct.params.radius &&
                r <= cfg.radius_limit_high * direct.params.radius;
  }
  return out;
}

double uncertainty_scalar(const PosteriorEstimate& pe, UncertaintyMode mode) {
  if (mode == UncertaintyMode::a_only) return pe.stds[0];
  double log_sum = 0.0;
  for (double s : pe.stds) log_sum += std::log(s);
  return std::exp(log_sum / kNumFlowParams);
}

}  // namespace ulmflow
