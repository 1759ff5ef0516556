#include <cstdlib>
#include <string>

#include "ulmflow/simd/kernels.hpp"

namespace ulmflow::simd {
namespace {

constexpr Kernels kScalar{Isa::scalar, &scalar::quadratic_moments, &scalar::add_sub,
                          &scalar::axpy, &scalar::derivative_responses};

#if defined(ULMFLOW_HAVE_AVX2)
constexpr Kernels kAvx2{Isa::avx2, &avx2::quadratic_moments, &avx2::add_sub, &avx2::axpy,
                        &avx2::derivative_responses};
#endif

bool cpu_has_avx2() {
#if defined(ULMFLOW_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa select_isa() {
  if (const char* env = std::getenv("ULMFLOW_SIMD")) {
    if (std::string(env) == "scalar") return Isa::scalar;
  }
  return detected_isa();
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::avx2:
      return "avx2";
    case Isa::scalar:
      break;
  }
  return "scalar";
}

Isa detected_isa() {
  static const bool avx2 = cpu_has_avx2();
  return avx2 ? Isa::avx2 : Isa::scalar;
}

bool isa_available(Isa isa) { return isa == Isa::scalar || detected_isa() == isa; }

const Kernels& kernels_for(Isa isa) {
#if defined(ULMFLOW_HAVE_AVX2)
  if (isa == Isa::avx2 && isa_available(Isa::avx2)) return kAvx2;
#endif
  (void)isa;
  return kScalar;
}

const Kernels& kernels() {
  static const Kernels& selected = kernels_for(select_isa());
  return selected;
}

}  // namespace ulmflow::simd
