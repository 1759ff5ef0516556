#include "ulmflow/simd/kernels.hpp"

namespace ulmflow::simd::scalar {

void quadratic_moments(const double* x, const double* y, const double* v, const double* w,
                       std::size_t n, QuadraticMoments& out) {
  QuadraticMoments m;
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = w[i];
    const double xi = x[i];
    const double yi = y[i];
    const double vi = v[i];
    const double r2 = xi * xi + yi * yi;
    m.w += wi;
    m.wx += wi * xi;
    m.wy += wi * yi;
    m.wr2 += wi * r2;
    m.wxx += wi * xi * xi;
    m.wxy += wi * xi * yi;
    m.wyy += wi * yi * yi;
    m.wr2x += wi * r2 * xi;
    m.wr2y += wi * r2 * yi;
    m.wr4 += wi * r2 * r2;
    m.wv += wi * vi;
    m.wvx += wi * vi * xi;
    m.wvy += wi * vi * yi;
    m.wvr2 += wi * vi * r2;
    m.wvv += wi * vi * vi;
  }
  out = m;
}

void add_sub(double* out, const double* a, const double* plus, const double* minus,
             std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + plus[i] - minus[i];
}

void axpy(double* out, const double* in, double coef, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] += coef * in[i];
}

void derivative_responses(const StencilView& s, const KernelTables& k, DerivativeResponses& out) {
  double acc[9] = {};
  for (std::size_t i = 0; i < s.n; ++i) {
    const double v = s.value[i];
    const double h0 = k.g0[s.ih[i]], h1 = k.g1[s.ih[i]], h2 = k.g2[s.ih[i]];
    const double w0 = k.g0[s.iw[i]], w1 = k.g1[s.iw[i]], w2 = k.g2[s.iw[i]];
    const double t0 = k.g0[s.it[i]], t1 = k.g1[s.it[i]], t2 = k.g2[s.it[i]];
    acc[0] += v * h2 * w0 * t0;
    acc[1] += v * h0 * w2 * t0;
    acc[2] += v * h0 * w0 * t2;
    acc[3] += v * h1 * w1 * t0;
    acc[4] += v * h1 * w0 * t1;
    acc[5] += v * h0 * w1 * t1;
    acc[6] += v * h1 * w0 * t0;
    acc[7] += v * h0 * w1 * t0;
    acc[8] += v * h0 * w0 * t1;
  }
  for (int j = 0; j < 9; ++j) out[j] = acc[j];
}

}  // namespace ulmflow::simd::scalar
