#pragma once

#include <cmath>

namespace ulmflow {

template <std::size_t N>
void AdamOptimizer<N>::step(std::array<double, N>& params, const std::array<double, N>& grad) {
  ++t_;
  beta1_pow_ *= beta1_;
  beta2_pow_ *= beta2_;
  const double c1 = 1.0 - beta1_pow_;
  const double c2 = 1.0 - beta2_pow_;
  for (std::size_t i = 0; i < N; ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
  }
}

}  // namespace ulmflow
