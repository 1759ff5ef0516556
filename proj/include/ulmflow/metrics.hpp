#pragma once

// Evaluation: parameter errors, mask overlap, map error, paired tests and
// the exponential uncertainty/error fit.

#include <span>
#include <utility>
#include <vector>

#include "ulmflow/core_model.hpp"
#include "ulmflow/volume.hpp"

namespace ulmflow {

struct ParamErrors {
  double radius_err = 0.0;
  double center_err = 0.0;
  double gsharp_err = 0.0;
  double vmean_err = 0.0;
};

/// Relative errors; the center error is normalized by the true radius.
/// Throws std::invalid_argument when the truth radius, g_sharp or mean speed is zero.
ParamErrors normalized_errors(const PoiseuilleParams& est, double est_mean_speed,
                              const PoiseuilleParams& truth, double truth_mean_speed);

/// 1 - 2|A & B| / (|A| + |B|); two empty masks give 0.
double dice_loss(const MaskVolume& estimate, const MaskVolume& truth);

/// Mean over B_E | B_T of ((V_E - V_T) / V_c)^2.
/// Throws std::invalid_argument on mismatched dims or an empty union.
double map_mse(const ScalarVolume& v_est, const ScalarVolume& v_true, const MaskVolume& b_est,
               const MaskVolume& b_true, const ScalarVolume& centerline_speed);

/// Voxels with a strictly positive value.
MaskVolume support_mask(const ScalarVolume& v);

struct WilcoxonResult {
  double p_value = 1.0;
  double w_plus = 0.0;  // sum of positive-difference ranks, d = a - b
  int n_used = 0;       // pairs left after dropping zero differences
  bool exact = false;
};

/// Two-sided signed-rank test. Exact enumeration (midranks kept) up to
/// `exact_limit` non-zero pairs, normal approximation with continuity and
/// tie correction beyond.
WilcoxonResult wilcoxon_signed_rank(std::span<const std::pair<double, double>> pairs,
                                    int exact_limit = 25);

struct ExpFit {
  double amplitude = 0.0;
  double rate = 0.0;
};

/// Least squares on log y = log amplitude + rate * x. `zero_shift` is added
/// to every y first. Throws when a shifted y is not positive or x has fewer
/// than two distinct values.
ExpFit exp_fit(std::span<const double> x, std::span<const double> y, double zero_shift = 0.0);

/// Fraction of pairs (model_err, direct_err) with model_err < direct_err.
double better_ratio(std::span<const std::pair<double, double>> pairs);

struct SpearmanResult {
  double rho = 0.0;
  double p_value = 1.0;  // two-sided, normal approximation z = rho sqrt(n - 1)
};

SpearmanResult spearman(std::span<const double> x, std::span<const double> y);

/// Midranks (1-based) with ties averaged.
std::vector<double> midranks(std::span<const double> v);

/// Linear-interpolation percentile, q in [0, 100]. Throws on empty input.
double percentile(std::span<const double> v, double q);
double median(std::span<const double> v);

}  // namespace ulmflow
