#include "melle/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace melle::kern {

namespace {

Isa select_isa() {
  if (const char* env = std::getenv("MELLE_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return Isa::scalar;
    if (std::strcmp(env, "avx2") == 0 && avx2_available()) return Isa::avx2;
    if (std::strcmp(env, "neon") == 0 && neon_available()) return Isa::neon;
  }
  if (avx2_available()) return Isa::avx2;
  if (neon_available()) return Isa::neon;
  return Isa::scalar;
}

}  // namespace

Isa active_isa() {
  static const Isa isa = select_isa();
  return isa;
}

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
    default: return "scalar";
  }
}

#define MELLE_DISPATCH(call)          \
  switch (active_isa()) {             \
    case Isa::avx2: return avx2::call; \
    case Isa::neon: return neon::call; \
    default: return scalar::call;      \
  }

void add(const float* a, const float* b, float* y, std::size_t n) { MELLE_DISPATCH(add(a, b, y, n)) }
void add(const double* a, const double* b, double* y, std::size_t n) { MELLE_DISPATCH(add(a, b, y, n)) }
void sub(const float* a, const float* b, float* y, std::size_t n) { MELLE_DISPATCH(sub(a, b, y, n)) }
void sub(const double* a, const double* b, double* y, std::size_t n) { MELLE_DISPATCH(sub(a, b, y, n)) }
void mul(const float* a, const float* b, float* y, std::size_t n) { MELLE_DISPATCH(mul(a, b, y, n)) }
void mul(const double* a, const double* b, double* y, std::size_t n) { MELLE_DISPATCH(mul(a, b, y, n)) }
void axpy(float alpha, const float* x, float* y, std::size_t n) { MELLE_DISPATCH(axpy(alpha, x, y, n)) }
void axpy(double alpha, const double* x, double* y, std::size_t n) { MELLE_DISPATCH(axpy(alpha, x, y, n)) }
void scale(float alpha, const float* x, float* y, std::size_t n) { MELLE_DISPATCH(scale(alpha, x, y, n)) }
void scale(double alpha, const double* x, double* y, std::size_t n) { MELLE_DISPATCH(scale(alpha, x, y, n)) }
float dot(const float* a, const float* b, std::size_t n) { MELLE_DISPATCH(dot(a, b, n)) }
double dot(const double* a, const double* b, std::size_t n) { MELLE_DISPATCH(dot(a, b, n)) }
float sum(const float* a, std::size_t n) { MELLE_DISPATCH(sum(a, n)) }
double sum(const double* a, std::size_t n) { MELLE_DISPATCH(sum(a, n)) }
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, float alpha,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta,
          float* c, std::size_t ldc) {
  MELLE_DISPATCH(gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc))
}
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
          double* c, std::size_t ldc) {
  MELLE_DISPATCH(gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc))
}

#undef MELLE_DISPATCH

}  // namespace melle::kern
