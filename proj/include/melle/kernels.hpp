#pragma once

// Arithmetic inner loops used by the tensor engine. Every kernel exists as a
// scalar reference implementation plus SIMD variants; the active variant is
// picked once at startup from the CPU features (override with MELLE_KERNELS=
// scalar|avx2|neon). Backends are also callable directly so tests can compare
// them against each other.

#include <cstddef>

namespace melle::kern {

enum class Isa { scalar, avx2, neon };

// Selected instruction set, resolved on first call.
Isa active_isa();
const char* isa_name(Isa isa);

// y[i] = a[i] + b[i]
void add(const float* a, const float* b, float* y, std::size_t n);
void add(const double* a, const double* b, double* y, std::size_t n);
// y[i] = a[i] - b[i]
void sub(const float* a, const float* b, float* y, std::size_t n);
void sub(const double* a, const double* b, double* y, std::size_t n);
// y[i] = a[i] * b[i]
void mul(const float* a, const float* b, float* y, std::size_t n);
void mul(const double* a, const double* b, double* y, std::size_t n);
// y[i] += alpha * x[i]
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
// y[i] = alpha * x[i]
void scale(float alpha, const float* x, float* y, std::size_t n);
void scale(double alpha, const double* x, double* y, std::size_t n);

float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
float sum(const float* a, std::size_t n);
double sum(const double* a, std::size_t n);

// C = alpha * op(A) * op(B) + beta * C, row-major, op = transpose when the
// corresponding flag is set. A is m×k after op, B is k×n after op, C is m×n.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          float alpha, const float* a, std::size_t lda, const float* b, std::size_t ldb,
          float beta, float* c, std::size_t ldc);
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double beta, double* c, std::size_t ldc);

namespace scalar {
void add(const float* a, const float* b, float* y, std::size_t n);
void add(const double* a, const double* b, double* y, std::size_t n);
void sub(const float* a, const float* b, float* y, std::size_t n);
void sub(const double* a, const double* b, double* y, std::size_t n);
void mul(const float* a, const float* b, float* y, std::size_t n);
void mul(const double* a, const double* b, double* y, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(float alpha, const float* x, float* y, std::size_t n);
void scale(double alpha, const double* x, double* y, std::size_t n);
float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
float sum(const float* a, std::size_t n);
double sum(const double* a, std::size_t n);
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          float alpha, const float* a, std::size_t lda, const float* b, std::size_t ldb,
          float beta, float* c, std::size_t ldc);
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double beta, double* c, std::size_t ldc);
}  // namespace scalar

// Compiled only on x86-64; safe to call iff avx2_available().
bool avx2_available();
namespace avx2 {
void add(const float* a, const float* b, float* y, std::size_t n);
void add(const double* a, const double* b, double* y, std::size_t n);
void sub(const float* a, const float* b, float* y, std::size_t n);
void sub(const double* a, const double* b, double* y, std::size_t n);
void mul(const float* a, const float* b, float* y, std::size_t n);
void mul(const double* a, const double* b, double* y, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(float alpha, const float* x, float* y, std::size_t n);
void scale(double alpha, const double* x, double* y, std::size_t n);
float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
float sum(const float* a, std::size_t n);
double sum(const double* a, std::size_t n);
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          float alpha, const float* a, std::size_t lda, const float* b, std::size_t ldb,
          float beta, float* c, std::size_t ldc);
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double beta, double* c, std::size_t ldc);
}  // namespace avx2

bool neon_available();
namespace neon {
void add(const float* a, const float* b, float* y, std::size_t n);
void add(const double* a, const double* b, double* y, std::size_t n);
void sub(const float* a, const float* b, float* y, std::size_t n);
void sub(const double* a, const double* b, double* y, std::size_t n);
void mul(const float* a, const float* b, float* y, std::size_t n);
void mul(const double* a, const double* b, double* y, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(float alpha, const float* x, float* y, std::size_t n);
void scale(double alpha, const double* x, double* y, std::size_t n);
float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
float sum(const float* a, std::size_t n);
double sum(const double* a, std::size_t n);
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          float alpha, const float* a, std::size_t lda, const float* b, std::size_t ldb,
          float beta, float* c, std::size_t ldc);
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double beta, double* c, std::size_t ldc);
}  // namespace neon

}  // namespace melle::kern
