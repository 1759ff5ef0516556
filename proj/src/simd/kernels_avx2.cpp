// Compiled with -mavx2 -mfma; only reached through the runtime dispatch table
// after CPUID reports AVX2 support.

#include <immintrin.h>

#include "ulmflow/simd/kernels.hpp"

namespace ulmflow::simd::avx2 {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

}  // namespace

void quadratic_moments(const double* x, const double* y, const double* v, const double* w,
                       std::size_t n, QuadraticMoments& out) {
  __m256d sw = _mm256_setzero_pd(), swx = sw, swy = sw, swr2 = sw, swxx = sw, swxy = sw,
          swyy = sw, swr2x = sw, swr2y = sw, swr4 = sw, swv = sw, swvx = sw, swvy = sw,
          swvr2 = sw, swvv = sw;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d wi = _mm256_loadu_pd(w + i);
    const __m256d xi = _mm256_loadu_pd(x + i);
    const __m256d yi = _mm256_loadu_pd(y + i);
    const __m256d vi = _mm256_loadu_pd(v + i);
    const __m256d r2 = _mm256_fmadd_pd(xi, xi, _mm256_mul_pd(yi, yi));
    const __m256d wxi = _mm256_mul_pd(wi, xi);
    const __m256d wyi = _mm256_mul_pd(wi, yi);
    const __m256d wr2i = _mm256_mul_pd(wi, r2);
    const __m256d wvi = _mm256_mul_pd(wi, vi);
    sw = _mm256_add_pd(sw, wi);
    swx = _mm256_add_pd(swx, wxi);
    swy = _mm256_add_pd(swy, wyi);
    swr2 = _mm256_add_pd(swr2, wr2i);
    swxx = _mm256_fmadd_pd(wxi, xi, swxx);
    swxy = _mm256_fmadd_pd(wxi, yi, swxy);
    swyy = _mm256_fmadd_pd(wyi, yi, swyy);
    swr2x = _mm256_fmadd_pd(wr2i, xi, swr2x);
    swr2y = _mm256_fmadd_pd(wr2i, yi, swr2y);
    swr4 = _mm256_fmadd_pd(wr2i, r2, swr4);
    swv = _mm256_add_pd(swv, wvi);
    swvx = _mm256_fmadd_pd(wvi, xi, swvx);
    swvy = _mm256_fmadd_pd(wvi, yi, swvy);
    swvr2 = _mm256_fmadd_pd(wvi, r2, swvr2);
    swvv = _mm256_fmadd_pd(wvi, vi, swvv);
  }
  QuadraticMoments m;
  m.w = hsum(sw);
  m.wx = hsum(swx);
  m.wy = hsum(swy);
  m.wr2 = hsum(swr2);
  m.wxx = hsum(swxx);
  m.wxy = hsum(swxy);
  m.wyy = hsum(swyy);
  m.wr2x = hsum(swr2x);
  m.wr2y = hsum(swr2y);
  m.wr4 = hsum(swr4);
  m.wv = hsum(swv);
  m.wvx = hsum(swvx);
  m.wvy = hsum(swvy);
  m.wvr2 = hsum(swvr2);
  m.wvv = hsum(swvv);
  if (i < n) {
    QuadraticMoments tail;
    scalar::quadratic_moments(x + i, y + i, v + i, w + i, n - i, tail);
    m.w += tail.w;
    m.wx += tail.wx;
    m.wy += tail.wy;
    m.wr2 += tail.wr2;
    m.wxx += tail.wxx;
    m.wxy += tail.wxy;
    m.wyy += tail.wyy;
    m.wr2x += tail.wr2x;
    m.wr2y += tail.wr2y;
    m.wr4 += tail.wr4;
    m.wv += tail.wv;
    m.wvx += tail.wvx;
    m.wvy += tail.wvy;
    m.wvr2 += tail.wvr2;
    m.wvv += tail.wvv;
  }
  out = m;
}

void add_sub(double* out, const double* a, const double* plus, const double* minus,
             std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d r = _mm256_sub_pd(_mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(plus + i)),
                                    _mm256_loadu_pd(minus + i));
    _mm256_storeu_pd(out + i, r);
  }
  for (; i < n; ++i) out[i] = a[i] + plus[i] - minus[i];
}

void axpy(double* out, const double* in, double coef, std::size_t n) {
  const __m256d c = _mm256_set1_pd(coef);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d r = _mm256_fmadd_pd(c, _mm256_loadu_pd(in + i), _mm256_loadu_pd(out + i));
    _mm256_storeu_pd(out + i, r);
  }
  for (; i < n; ++i) out[i] += coef * in[i];
}

void derivative_responses(const StencilView& s, const KernelTables& k, DerivativeResponses& out) {
  __m256d acc[9];
  for (auto& a : acc) a = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= s.n; i += 4) {
    const __m128i ih = _mm_loadu_si128(reinterpret_cast<const __m128i*>(s.ih + i));
    const __m128i iw = _mm_loadu_si128(reinterpret_cast<const __m128i*>(s.iw + i));
    const __m128i it = _mm_loadu_si128(reinterpret_cast<const __m128i*>(s.it + i));
    const __m256d v = _mm256_loadu_pd(s.value + i);
    const __m256d h0 = _mm256_i32gather_pd(k.g0, ih, 8);
    const __m256d h1 = _mm256_i32gather_pd(k.g1, ih, 8);
    const __m256d h2 = _mm256_i32gather_pd(k.g2, ih, 8);
    const __m256d w0 = _mm256_i32gather_pd(k.g0, iw, 8);
    const __m256d w1 = _mm256_i32gather_pd(k.g1, iw, 8);
    const __m256d w2 = _mm256_i32gather_pd(k.g2, iw, 8);
    const __m256d t0 = _mm256_i32gather_pd(k.g0, it, 8);
    const __m256d t1 = _mm256_i32gather_pd(k.g1, it, 8);
    const __m256d t2 = _mm256_i32gather_pd(k.g2, it, 8);
    const __m256d vt0 = _mm256_mul_pd(v, t0);
    const __m256d vt1 = _mm256_mul_pd(v, t1);
    const __m256d vw0t0 = _mm256_mul_pd(vt0, w0);
    acc[0] = _mm256_fmadd_pd(vw0t0, h2, acc[0]);
    acc[1] = _mm256_fmadd_pd(_mm256_mul_pd(vt0, w2), h0, acc[1]);
    acc[2] = _mm256_fmadd_pd(_mm256_mul_pd(_mm256_mul_pd(v, t2), w0), h0, acc[2]);
    acc[3] = _mm256_fmadd_pd(_mm256_mul_pd(vt0, w1), h1, acc[3]);
    acc[4] = _mm256_fmadd_pd(_mm256_mul_pd(vt1, w0), h1, acc[4]);
    acc[5] = _mm256_fmadd_pd(_mm256_mul_pd(vt1, w1), h0, acc[5]);
    acc[6] = _mm256_fmadd_pd(vw0t0, h1, acc[6]);
    acc[7] = _mm256_fmadd_pd(_mm256_mul_pd(vt0, w1), h0, acc[7]);
    acc[8] = _mm256_fmadd_pd(_mm256_mul_pd(vt1, w0), h0, acc[8]);
  }
  for (int j = 0; j < 9; ++j) out[j] = hsum(acc[j]);
  if (i < s.n) {
    DerivativeResponses tail;
    const StencilView rest{s.ih + i, s.iw + i, s.it + i, s.value + i, s.n - i};
    scalar::derivative_responses(rest, k, tail);
    for (int j = 0; j < 9; ++j) out[j] += tail[j];
  }
}

}  // namespace ulmflow::simd::avx2
