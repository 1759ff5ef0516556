#pragma once

// Stochastic variational inference for the quadratic flow parameters of one
// cross-section. Parameters are ordered (a, b1, b2, c) throughout and live in
// the normalized coordinate system produced by normalize_samples.

#include <array>
#include <cstdint>
#include <span>

#include "ulmflow/core_model.hpp"

namespace ulmflow {

inline constexpr int kNumFlowParams = 4;
using ParamVec = std::array<double, kNumFlowParams>;
using SviGradient = std::array<double, 2 * kNumFlowParams>;

double softplus(double x);
double softplus_inverse(double y);
double sigmoid(double x);

/// Gaussian mean-field posterior q = N(mean, softplus(rho)^2).
struct VariationalState {
  ParamVec mean{};
  ParamVec rho{};

  ParamVec sigma() const;
};

struct Prior {
  ParamVec mean{};
  ParamVec sigma{1.0, 1.0, 1.0, 1.0};
};

struct SviConfig {
  int mc_samples = 8;
  double learning_rate = 0.05;
  int iterations = 500;
  double lambda = 0.1;  // 0.5 sigma_e^2
  int restarts = 5;
  double radius_limit_low = 0.5;
  double radius_limit_high = 2.0;
  std::uint64_t rng_seed = 0;
  double prior_sigma_a = 10.0;
  double prior_sigma_other = 100.0;
  double initial_sigma = 1.0;
  bool optimize_sigma = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// Fraction of the final iterations whose iterates (means and sigmas) are
  /// averaged into the reported state; 0 reports the last iterate.
  double tail_average = 0.5;

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
};

/// Affine map between physical samples and the zero-mean / unit-variance
/// frame. Positions use one isotropic scale (pooled in-plane std) so circles
/// stay circles.
struct NormalizationTransform {
  Vec2 position_offset{};
  double position_scale = 1.0;
  double speed_offset = 0.0;
  double speed_scale = 1.0;

  Sample normalize(const Sample& s) const;
  Sample denormalize(const Sample& s) const;
  QuadraticParams to_normalized(const QuadraticParams& physical) const;
  QuadraticParams to_physical(const QuadraticParams& normalized) const;
};

struct NormalizedSamples {
  SampleSet samples;
  NormalizationTransform transform;
  bool degenerate_position = false;
  bool degenerate_speed = false;

  bool degenerate() const { return degenerate_position || degenerate_speed; }
};

/// Throws std::invalid_argument on an empty set. A zero-variance axis is
/// reported through the degenerate flags and left with unit scale.
NormalizedSamples normalize_samples(std::span<const Sample> samples);

ParamVec to_param_vec(const QuadraticParams& q);
QuadraticParams from_param_vec(const ParamVec& p);

/// Weighted data statistics that make the Monte Carlo likelihood cost O(1)
/// in the sample count.
class QuadraticFitStats {
 public:
  explicit QuadraticFitStats(std::span<const Sample> samples);

  /// (1 / 2Nw) sum_n w_n (v_n - phi_n . p)^2
  double half_mse(const ParamVec& p) const;
  /// d half_mse / d p = (S p - t) / Nw
  ParamVec half_mse_gradient(const ParamVec& p) const;

  double total_weight() const { return total_weight_; }
  const std::array<std::array<double, 4>, 4>& gram() const { return gram_; }
  const ParamVec& moment() const { return moment_; }

 private:
  std::array<std::array<double, 4>, 4> gram_{};
  ParamVec moment_{};
  double vv_ = 0.0;
  double total_weight_ = 0.0;
};

/// lambda * sum_j [ -log(s_j^2 + 1) + log(sm_j^2 + (s_j^2 + (u_j - um_j)^2) / sm_j^2) ]
double svi_regularizer(const VariationalState& state, const Prior& prior, double lambda);

/// Monte Carlo objective. `eps_draws` holds L standard-normal 4-vectors;
/// `samples` must already be normalized.
double svi_cost(const VariationalState& state, std::span<const Sample> samples, const Prior& prior,
                std::span<const ParamVec> eps_draws, double lambda);

/// Analytic gradient of svi_cost: first four entries w.r.t. mean, last four
/// w.r.t. rho (through the softplus).
SviGradient svi_cost_gradient(const VariationalState& state, std::span<const Sample> samples,
                              const Prior& prior, std::span<const ParamVec> eps_draws,
                              double lambda);

double svi_cost(const VariationalState& state, const QuadraticFitStats& stats, const Prior& prior,
                std::span<const ParamVec> eps_draws, double lambda);
SviGradient svi_cost_gradient(const VariationalState& state, const QuadraticFitStats& stats,
                              const Prior& prior, std::span<const ParamVec> eps_draws,
                              double lambda);

enum class SviStatus { fitted, too_few_samples, degenerate_samples };

struct PosteriorEstimate {
  SviStatus status = SviStatus::fitted;
  ParamVec means{};  // normalized (a, b1, b2, c)
  ParamVec stds{};   // normalized
  PoiseuilleParams params_physical{};
  double mean_speed = 0.0;
  double uncertainty_a = 0.0;
  double uncertainty_geo = 0.0;
  double cost = 0.0;
  /// Radius of the direct estimate used to initialise the fit (m).
  double initial_radius = 0.0;
  int selected_restart = -1;
  bool valid = false;

  bool refused() const { return status != SviStatus::fitted; }
};

inline constexpr int kMinSviSamples = 4;

PosteriorEstimate fit_svi(std::span<const Sample> samples, const SviConfig& cfg);

enum class UncertaintyMode { a_only, geometric };

double uncertainty_scalar(const PosteriorEstimate& pe, UncertaintyMode mode);

/// Fixed-size Adam, as used for the eight variational parameters.
template <std::size_t N>
class AdamOptimizer {
 public:
  AdamOptimizer(double learning_rate, double beta1, double beta2, double epsilon)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  void step(std::array<double, N>& params, const std::array<double, N>& grad);

  int steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::array<double, N> m_{};
  std::array<double, N> v_{};
  double beta1_pow_ = 1.0;
  double beta2_pow_ = 1.0;
  int t_ = 0;
};

}  // namespace ulmflow

#include "ulmflow/detail/adam_impl.hpp"
