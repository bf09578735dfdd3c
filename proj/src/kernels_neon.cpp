// NEON variants for aarch64.

#include "melle/kernels.hpp"

#include <cstdlib>

#if defined(__aarch64__) && defined(__ARM_NEON)
#define MELLE_NEON 1
#include <arm_neon.h>
#else
#define MELLE_NEON 0
#endif

namespace melle::kern {

bool neon_available() { return MELLE_NEON != 0; }

namespace neon {

#if MELLE_NEON

void add(const float* a, const float* b, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vaddq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}
void add(const double* a, const double* b, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}
void sub(const float* a, const float* b, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vsubq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
  for (; i < n; ++i) y[i] = a[i] - b[i];
}
void sub(const double* a, const double* b, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) y[i] = a[i] - b[i];
}
void mul(const float* a, const float* b, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vmulq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}
void mul(const double* a, const double* b, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}
void axpy(float alpha, const float* x, float* y, std::size_t n) {
  const float32x4_t va = vdupq_n_f32(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    vst1q_f32(y + i, vfmaq_f32(vld1q_f32(y + i), va, vld1q_f32(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}
void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}
void scale(float alpha, const float* x, float* y, std::size_t n) {
  const float32x4_t va = vdupq_n_f32(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vmulq_f32(va, vld1q_f32(x + i)));
  for (; i < n; ++i) y[i] = alpha * x[i];
}
void scale(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vmulq_f64(va, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] = alpha * x[i];
}
float dot(const float* a, const float* b, std::size_t n) {
  float32x4_t acc = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = vfmaq_f32(acc, vld1q_f32(a + i), vld1q_f32(b + i));
  float s = vaddvq_f32(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}
double dot(const double* a, const double* b, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vfmaq_f64(acc, vld1q_f64(a + i), vld1q_f64(b + i));
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}
float sum(const float* a, std::size_t n) {
  float32x4_t acc = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = vaddq_f32(acc, vld1q_f32(a + i));
  float s = vaddvq_f32(acc);
  for (; i < n; ++i) s += a[i];
  return s;
}
double sum(const double* a, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(a + i));
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += a[i];
  return s;
}

namespace {

inline void row_fma(float s, const float* brow, float* crow, std::size_t n) {
  const float32x4_t vs = vdupq_n_f32(s);
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4)
    vst1q_f32(crow + j, vfmaq_f32(vld1q_f32(crow + j), vs, vld1q_f32(brow + j)));
  for (; j < n; ++j) crow[j] += s * brow[j];
}
inline void row_fma(double s, const double* brow, double* crow, std::size_t n) {
  const float64x2_t vs = vdupq_n_f64(s);
  std::size_t j = 0;
  for (; j + 2 <= n; j += 2)
    vst1q_f64(crow + j, vfmaq_f64(vld1q_f64(crow + j), vs, vld1q_f64(brow + j)));
  for (; j < n; ++j) crow[j] += s * brow[j];
}

template <typename T>
void gemm_impl(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
               T alpha, const T* a, std::size_t lda, const T* b, std::size_t ldb,
               T beta, T* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (beta == T(0)) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
    } else if (beta != T(1)) {
      scale(beta, crow, crow, n);
    }
  }
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * ldc;
      for (std::size_t p = 0; p < k; ++p)
        row_fma(alpha * a[i * lda + p], b + p * ldb, crow, n);
    }
  } else if (!trans_a && trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      const T* arow = a + i * lda;
      T* crow = c + i * ldc;
      for (std::size_t j = 0; j < n; ++j) crow[j] += alpha * dot(arow, b + j * ldb, k);
    }
  } else if (trans_a && !trans_b) {
    for (std::size_t p = 0; p < k; ++p) {
      const T* arow = a + p * lda;
      const T* brow = b + p * ldb;
      for (std::size_t i = 0; i < m; ++i) row_fma(alpha * arow[i], brow, c + i * ldc, n);
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * ldc;
      for (std::size_t j = 0; j < n; ++j) {
        T acc = T(0);
        for (std::size_t p = 0; p < k; ++p) acc += a[p * lda + i] * b[j * ldb + p];
        crow[j] += alpha * acc;
      }
    }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          float alpha, const float* a, std::size_t lda, const float* b, std::size_t ldb,
          float beta, float* c, std::size_t ldc) {
  gemm_impl(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double beta, double* c, std::size_t ldc) {
  gemm_impl(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

#else  // !MELLE_NEON

#define MELLE_NEON_STUB std::abort();
void add(const float*, const float*, float*, std::size_t) { MELLE_NEON_STUB }
void add(const double*, const double*, double*, std::size_t) { MELLE_NEON_STUB }
void sub(const float*, const float*, float*, std::size_t) { MELLE_NEON_STUB }
void sub(const double*, const double*, double*, std::size_t) { MELLE_NEON_STUB }
void mul(const float*, const float*, float*, std::size_t) { MELLE_NEON_STUB }
void mul(const double*, const double*, double*, std::size_t) { MELLE_NEON_STUB }
void axpy(float, const float*, float*, std::size_t) { MELLE_NEON_STUB }
void axpy(double, const double*, double*, std::size_t) { MELLE_NEON_STUB }
void scale(float, const float*, float*, std::size_t) { MELLE_NEON_STUB }
void scale(double, const double*, double*, std::size_t) { MELLE_NEON_STUB }
float dot(const float*, const float*, std::size_t) { MELLE_NEON_STUB }
double dot(const double*, const double*, std::size_t) { MELLE_NEON_STUB }
float sum(const float*, std::size_t) { MELLE_NEON_STUB }
double sum(const double*, std::size_t) { MELLE_NEON_STUB }
void gemm(bool, bool, std::size_t, std::size_t, std::size_t, float, const float*, std::size_t,
          const float*, std::size_t, float, float*, std::size_t) { MELLE_NEON_STUB }
void gemm(bool, bool, std::size_t, std::size_t, std::size_t, double, const double*, std::size_t,
          const double*, std::size_t, double, double*, std::size_t) { MELLE_NEON_STUB }
#undef MELLE_NEON_STUB

#endif

}  // namespace neon
}  // namespace melle::kern
