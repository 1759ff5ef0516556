#pragma once

// Data-parallel inner loops. Each kernel has a scalar reference in
// kernels_scalar.cpp and, on x86-64, an AVX2/FMA variant in kernels_avx2.cpp.
// The variant is chosen once at runtime from CPUID; ULMFLOW_SIMD=scalar in the
// environment forces the reference path.

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace ulmflow::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

/// Weighted moments of the quadratic flow features phi = (|x|^2, x, y, 1)
/// and the observed speed v, over n samples.
struct QuadraticMoments {
  double w = 0;       // sum w
  double wx = 0;      // sum w x
  double wy = 0;      // sum w y
  double wr2 = 0;     // sum w r^2
  double wxx = 0;     // sum w x^2
  double wxy = 0;     // sum w x y
  double wyy = 0;     // sum w y^2
  double wr2x = 0;    // sum w r^2 x
  double wr2y = 0;    // sum w r^2 y
  double wr4 = 0;     // sum w r^4
  double wv = 0;      // sum w v
  double wvx = 0;     // sum w v x
  double wvy = 0;     // sum w v y
  double wvr2 = 0;    // sum w v r^2
  double wvv = 0;     // sum w v^2
};

/// Flattened neighbour list for one sparse Hessian evaluation. Offsets index
/// directly into the 1D kernel tables (already shifted by the kernel radius).
struct StencilView {
  const std::int32_t* ih;
  const std::int32_t* iw;
  const std::int32_t* it;
  const double* value;
  std::size_t n;
};

/// 1D sampled Gaussian (g0), first (g1) and second (g2) derivative tables.
struct KernelTables {
  const double* g0;
  const double* g1;
  const double* g2;
};

/// Responses in order: hh, ww, tt, hw, ht, wt, h, w, t.
using DerivativeResponses = double[9];

struct Kernels {
  Isa isa;
  void (*quadratic_moments)(const double* x, const double* y, const double* v, const double* w,
                            std::size_t n, QuadraticMoments& out);
  /// out[i] = a[i] + plus[i] - minus[i]
  void (*add_sub)(double* out, const double* a, const double* plus, const double* minus,
                  std::size_t n);
  /// out[i] += coef * in[i]
  void (*axpy)(double* out, const double* in, double coef, std::size_t n);
  void (*derivative_responses)(const StencilView& stencil, const KernelTables& tables,
                               DerivativeResponses& out);
};

Isa detected_isa();

/// Kernels for the runtime-selected ISA.
const Kernels& kernels();

/// Kernels for a specific ISA; falls back to scalar when `isa` is not
/// available on this CPU or was not compiled in.
const Kernels& kernels_for(Isa isa);

bool isa_available(Isa isa);

namespace scalar {
void quadratic_moments(const double* x, const double* y, const double* v, const double* w,
                       std::size_t n, QuadraticMoments& out);
void add_sub(double* out, const double* a, const double* plus, const double* minus,
             std::size_t n);
void axpy(double* out, const double* in, double coef, std::size_t n);
void derivative_responses(const StencilView& stencil, const KernelTables& tables,
                          DerivativeResponses& out);
}  // namespace scalar

#if defined(ULMFLOW_HAVE_AVX2)
namespace avx2 {
void quadratic_moments(const double* x, const double* y, const double* v, const double* w,
                       std::size_t n, QuadraticMoments& out);
void add_sub(double* out, const double* a, const double* plus, const double* minus,
             std::size_t n);
void axpy(double* out, const double* in, double coef, std::size_t n);
void derivative_responses(const StencilView& stencil, const KernelTables& tables,
                          DerivativeResponses& out);
}  // namespace avx2
#endif

}  // namespace ulmflow::simd
