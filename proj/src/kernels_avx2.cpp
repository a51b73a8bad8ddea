// AVX2/FMA kernel variants. Compiled with -mavx2 -mfma and selected at
// runtime only when the CPU reports both features; semantics match the
// scalar reference kernels (equivalence-tested).

#if defined(MOREL_BUILD_AVX2)

#include <immintrin.h>

#include <cmath>

#include "morel/core/kernels.hpp"

namespace morel::kern {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  lo = _mm_add_pd(lo, _mm_unpackhi_pd(lo, lo));
  return _mm_cvtsd_f64(lo);
}

inline float hmax(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_max_ps(lo, hi);
  lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
  lo = _mm_max_ss(lo, _mm_shuffle_ps(lo, lo, 1));
  return _mm_cvtss_f32(lo);
}

inline double hmax(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_max_pd(lo, hi);
  lo = _mm_max_sd(lo, _mm_unpackhi_pd(lo, lo));
  return _mm_cvtsd_f64(lo);
}

// ---------------------------------------------------------------------------
// GEMM, float: 4x16 register tile (4 C rows, two 8-lane columns).
// ---------------------------------------------------------------------------

void gemm_nn_f32(std::size_t M, std::size_t N, std::size_t K, float alpha, const float* A,
                 std::size_t lda, const float* B, std::size_t ldb, float beta, float* C,
                 std::size_t ldc) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) {
    std::size_t j = 0;
    for (; j + 16 <= N; j += 16) {
      __m256 acc00 = _mm256_setzero_ps(), acc01 = _mm256_setzero_ps();
      __m256 acc10 = _mm256_setzero_ps(), acc11 = _mm256_setzero_ps();
      __m256 acc20 = _mm256_setzero_ps(), acc21 = _mm256_setzero_ps();
      __m256 acc30 = _mm256_setzero_ps(), acc31 = _mm256_setzero_ps();
      for (std::size_t k = 0; k < K; ++k) {
        const __m256 b0 = _mm256_loadu_ps(B + k * ldb + j);
        const __m256 b1 = _mm256_loadu_ps(B + k * ldb + j + 8);
        __m256 a;
        a = _mm256_set1_ps(A[(i + 0) * lda + k]);
        acc00 = _mm256_fmadd_ps(a, b0, acc00);
        acc01 = _mm256_fmadd_ps(a, b1, acc01);
        a = _mm256_set1_ps(A[(i + 1) * lda + k]);
        acc10 = _mm256_fmadd_ps(a, b0, acc10);
        acc11 = _mm256_fmadd_ps(a, b1, acc11);
        a = _mm256_set1_ps(A[(i + 2) * lda + k]);
        acc20 = _mm256_fmadd_ps(a, b0, acc20);
        acc21 = _mm256_fmadd_ps(a, b1, acc21);
        a = _mm256_set1_ps(A[(i + 3) * lda + k]);
        acc30 = _mm256_fmadd_ps(a, b0, acc30);
        acc31 = _mm256_fmadd_ps(a, b1, acc31);
      }
      const __m256 accs[4][2] = {{acc00, acc01}, {acc10, acc11}, {acc20, acc21}, {acc30, acc31}};
      for (std::size_t r = 0; r < 4; ++r) {
        float* c = C + (i + r) * ldc + j;
        for (std::size_t h = 0; h < 2; ++h) {
          __m256 out = _mm256_mul_ps(va, accs[r][h]);
          if (beta != 0.0f)
            out = _mm256_fmadd_ps(_mm256_set1_ps(beta), _mm256_loadu_ps(c + 8 * h), out);
          _mm256_storeu_ps(c + 8 * h, out);
        }
      }
    }
    // N tail, scalar
    for (; j < N; ++j) {
      for (std::size_t r = 0; r < 4; ++r) {
        float acc = 0.0f;
        for (std::size_t k = 0; k < K; ++k) acc += A[(i + r) * lda + k] * B[k * ldb + j];
        float& c = C[(i + r) * ldc + j];
        c = alpha * acc + (beta == 0.0f ? 0.0f : beta * c);
      }
    }
  }
  // M tail, scalar
  for (; i < M; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      float acc = 0.0f;
      for (std::size_t k = 0; k < K; ++k) acc += A[i * lda + k] * B[k * ldb + j];
      float& c = C[i * ldc + j];
      c = alpha * acc + (beta == 0.0f ? 0.0f : beta * c);
    }
  }
}

void gemm_tn_f32(std::size_t M, std::size_t N, std::size_t K, float alpha, const float* A,
                 std::size_t lda, const float* B, std::size_t ldb, float beta, float* C,
                 std::size_t ldc) {
  // Same tile as gemm_nn with A indexed transposed: A stored (K, M).
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) {
    std::size_t j = 0;
    for (; j + 16 <= N; j += 16) {
      __m256 acc00 = _mm256_setzero_ps(), acc01 = _mm256_setzero_ps();
      __m256 acc10 = _mm256_setzero_ps(), acc11 = _mm256_setzero_ps();
      __m256 acc20 = _mm256_setzero_ps(), acc21 = _mm256_setzero_ps();
      __m256 acc30 = _mm256_setzero_ps(), acc31 = _mm256_setzero_ps();
      for (std::size_t k = 0; k < K; ++k) {
        const __m256 b0 = _mm256_loadu_ps(B + k * ldb + j);
        const __m256 b1 = _mm256_loadu_ps(B + k * ldb + j + 8);
        const float* arow = A + k * lda + i;
        __m256 a;
        a = _mm256_set1_ps(arow[0]);
        acc00 = _mm256_fmadd_ps(a, b0, acc00);
        acc01 = _mm256_fmadd_ps(a, b1, acc01);
        a = _mm256_set1_ps(arow[1]);
        acc10 = _mm256_fmadd_ps(a, b0, acc10);
        acc11 = _mm256_fmadd_ps(a, b1, acc11);
        a = _mm256_set1_ps(arow[2]);
        acc20 = _mm256_fmadd_ps(a, b0, acc20);
        acc21 = _mm256_fmadd_ps(a, b1, acc21);
        a = _mm256_set1_ps(arow[3]);
        acc30 = _mm256_fmadd_ps(a, b0, acc30);
        acc31 = _mm256_fmadd_ps(a, b1, acc31);
      }
      const __m256 accs[4][2] = {{acc00, acc01}, {acc10, acc11}, {acc20, acc21}, {acc30, acc31}};
      for (std::size_t r = 0; r < 4; ++r) {
        float* c = C + (i + r) * ldc + j;
        for (std::size_t h = 0; h < 2; ++h) {
          __m256 out = _mm256_mul_ps(va, accs[r][h]);
          if (beta != 0.0f)
            out = _mm256_fmadd_ps(_mm256_set1_ps(beta), _mm256_loadu_ps(c + 8 * h), out);
          _mm256_storeu_ps(c + 8 * h, out);
        }
      }
    }
    for (; j < N; ++j) {
      for (std::size_t r = 0; r < 4; ++r) {
        float acc = 0.0f;
        for (std::size_t k = 0; k < K; ++k) acc += A[k * lda + i + r] * B[k * ldb + j];
        float& c = C[(i + r) * ldc + j];
        c = alpha * acc + (beta == 0.0f ? 0.0f : beta * c);
      }
    }
  }
  for (; i < M; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      float acc = 0.0f;
      for (std::size_t k = 0; k < K; ++k) acc += A[k * lda + i] * B[k * ldb + j];
      float& c = C[i * ldc + j];
      c = alpha * acc + (beta == 0.0f ? 0.0f : beta * c);
    }
  }
}

void gemm_nt_f32(std::size_t M, std::size_t N, std::size_t K, float alpha, const float* A,
                 std::size_t lda, const float* B, std::size_t ldb, float beta, float* C,
                 std::size_t ldc) {
  // C[i, j] = dot(A row i, B row j); contiguous dot over K.
  for (std::size_t i = 0; i < M; ++i) {
    const float* a = A + i * lda;
    for (std::size_t j = 0; j < N; ++j) {
      const float* b = B + j * ldb;
      __m256 acc0 = _mm256_setzero_ps();
      __m256 acc1 = _mm256_setzero_ps();
      std::size_t k = 0;
      for (; k + 16 <= K; k += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + k), _mm256_loadu_ps(b + k), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + k + 8), _mm256_loadu_ps(b + k + 8), acc1);
      }
      for (; k + 8 <= K; k += 8)
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + k), _mm256_loadu_ps(b + k), acc0);
      float acc = hsum(_mm256_add_ps(acc0, acc1));
      for (; k < K; ++k) acc += a[k] * b[k];
      float& c = C[i * ldc + j];
      c = alpha * acc + (beta == 0.0f ? 0.0f : beta * c);
    }
  }
}

// ---------------------------------------------------------------------------
// GEMM, double: 4x8 register tile.
// ---------------------------------------------------------------------------

void gemm_nn_f64(std::size_t M, std::size_t N, std::size_t K, double alpha, const double* A,
                 std::size_t lda, const double* B, std::size_t ldb, double beta, double* C,
                 std::size_t ldc) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) {
    std::size_t j = 0;
    for (; j + 8 <= N; j += 8) {
      __m256d acc00 = _mm256_setzero_pd(), acc01 = _mm256_setzero_pd();
      __m256d acc10 = _mm256_setzero_pd(), acc11 = _mm256_setzero_pd();
      __m256d acc20 = _mm256_setzero_pd(), acc21 = _mm256_setzero_pd();
      __m256d acc30 = _mm256_setzero_pd(), acc31 = _mm256_setzero_pd();
      for (std::size_t k = 0; k < K; ++k) {
        const __m256d b0 = _mm256_loadu_pd(B + k * ldb + j);
        const __m256d b1 = _mm256_loadu_pd(B + k * ldb + j + 4);
        __m256d a;
        a = _mm256_set1_pd(A[(i + 0) * lda + k]);
        acc00 = _mm256_fmadd_pd(a, b0, acc00);
        acc01 = _mm256_fmadd_pd(a, b1, acc01);
        a = _mm256_set1_pd(A[(i + 1) * lda + k]);
        acc10 = _mm256_fmadd_pd(a, b0, acc10);
        acc11 = _mm256_fmadd_pd(a, b1, acc11);
        a = _mm256_set1_pd(A[(i + 2) * lda + k]);
        acc20 = _mm256_fmadd_pd(a, b0, acc20);
        acc21 = _mm256_fmadd_pd(a, b1, acc21);
        a = _mm256_set1_pd(A[(i + 3) * lda + k]);
        acc30 = _mm256_fmadd_pd(a, b0, acc30);
        acc31 = _mm256_fmadd_pd(a, b1, acc31);
      }
      const __m256d accs[4][2] = {{acc00, acc01}, {acc10, acc11}, {acc20, acc21}, {acc30, acc31}};
      for (std::size_t r = 0; r < 4; ++r) {
        double* c = C + (i + r) * ldc + j;
        for (std::size_t h = 0; h < 2; ++h) {
          __m256d out = _mm256_mul_pd(va, accs[r][h]);
          if (beta != 0.0)
            out = _mm256_fmadd_pd(_mm256_set1_pd(beta), _mm256_loadu_pd(c + 4 * h), out);
          _mm256_storeu_pd(c + 4 * h, out);
        }
      }
    }
    for (; j < N; ++j) {
      for (std::size_t r = 0; r < 4; ++r) {
        double acc = 0.0;
        for (std::size_t k = 0; k < K; ++k) acc += A[(i + r) * lda + k] * B[k * ldb + j];
        double& c = C[(i + r) * ldc + j];
        c = alpha * acc + (beta == 0.0 ? 0.0 : beta * c);
      }
    }
  }
  for (; i < M; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += A[i * lda + k] * B[k * ldb + j];
      double& c = C[i * ldc + j];
      c = alpha * acc + (beta == 0.0 ? 0.0 : beta * c);
    }
  }
}

void gemm_tn_f64(std::size_t M, std::size_t N, std::size_t K, double alpha, const double* A,
                 std::size_t lda, const double* B, std::size_t ldb, double beta, double* C,
                 std::size_t ldc) {
  for (std::size_t i = 0; i < M; ++i) {
    double* c = C + i * ldc;
    for (std::size_t j = 0; j < N; ++j) c[j] = beta == 0.0 ? 0.0 : beta * c[j];
    for (std::size_t k = 0; k < K; ++k) {
      const __m256d a = _mm256_set1_pd(alpha * A[k * lda + i]);
      const double* b = B + k * ldb;
      std::size_t j = 0;
      for (; j + 4 <= N; j += 4)
        _mm256_storeu_pd(c + j, _mm256_fmadd_pd(a, _mm256_loadu_pd(b + j), _mm256_loadu_pd(c + j)));
      for (; j < N; ++j) c[j] += alpha * A[k * lda + i] * b[j];
    }
  }
}

void gemm_nt_f64(std::size_t M, std::size_t N, std::size_t K, double alpha, const double* A,
                 std::size_t lda, const double* B, std::size_t ldb, double beta, double* C,
                 std::size_t ldc) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* a = A + i * lda;
    for (std::size_t j = 0; j < N; ++j) {
      const double* b = B + j * ldb;
      __m256d acc0 = _mm256_setzero_pd();
      __m256d acc1 = _mm256_setzero_pd();
      std::size_t k = 0;
      for (; k + 8 <= K; k += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + k + 4), _mm256_loadu_pd(b + k + 4), acc1);
      }
      for (; k + 4 <= K; k += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k), acc0);
      double acc = hsum(_mm256_add_pd(acc0, acc1));
      for (; k < K; ++k) acc += a[k] * b[k];
      double& c = C[i * ldc + j];
      c = alpha * acc + (beta == 0.0 ? 0.0 : beta * c);
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

void add_f32(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void add_f64(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_f32(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void sub_f64(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_f32(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void mul_f64(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_f32(const float* x, float alpha, float* out, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

void scale_f64(const double* x, double alpha, double* out, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

void relu_fwd_f32(const float* x, float* y, std::size_t n) {
  const __m256 z = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), z));
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_fwd_f64(const double* x, double* y, std::size_t n) {
  const __m256d z = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), z));
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd_f32(const float* x, const float* dy, float* dx, std::size_t n) {
  const __m256 z = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), z, _CMP_GT_OQ);
    const __m256 g = _mm256_and_ps(_mm256_loadu_ps(dy + i), mask);
    _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), g));
  }
  for (; i < n; ++i)
    if (x[i] > 0.0f) dx[i] += dy[i];
}

void relu_bwd_f64(const double* x, const double* dy, double* dx, std::size_t n) {
  const __m256d z = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), z, _CMP_GT_OQ);
    const __m256d g = _mm256_and_pd(_mm256_loadu_pd(dy + i), mask);
    _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), g));
  }
  for (; i < n; ++i)
    if (x[i] > 0.0) dx[i] += dy[i];
}

void sign_step_f32(const float* x, const float* g, float eta, float* out, std::size_t n) {
  const __m256 z = _mm256_setzero_ps();
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 veta = _mm256_set1_ps(eta);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 gv = _mm256_loadu_ps(g + i);
    const __m256 pos = _mm256_and_ps(_mm256_cmp_ps(gv, z, _CMP_GT_OQ), one);
    const __m256 neg = _mm256_and_ps(_mm256_cmp_ps(gv, z, _CMP_LT_OQ), one);
    const __m256 s = _mm256_sub_ps(pos, neg);
    _mm256_storeu_ps(out + i, _mm256_fmadd_ps(veta, s, _mm256_loadu_ps(x + i)));
  }
  for (; i < n; ++i) {
    const float s = g[i] > 0.0f ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f);
    out[i] = x[i] + eta * s;
  }
}

void sign_step_f64(const double* x, const double* g, double eta, double* out, std::size_t n) {
  const __m256d z = _mm256_setzero_pd();
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d veta = _mm256_set1_pd(eta);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gv = _mm256_loadu_pd(g + i);
    const __m256d pos = _mm256_and_pd(_mm256_cmp_pd(gv, z, _CMP_GT_OQ), one);
    const __m256d neg = _mm256_and_pd(_mm256_cmp_pd(gv, z, _CMP_LT_OQ), one);
    const __m256d s = _mm256_sub_pd(pos, neg);
    _mm256_storeu_pd(out + i, _mm256_fmadd_pd(veta, s, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) {
    const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
    out[i] = x[i] + eta * s;
  }
}

void project_box_f32(const float* x, const float* ref, float eps, float lo, float hi, float* out,
                     std::size_t n) {
  const __m256 veps = _mm256_set1_ps(eps);
  const __m256 vlo = _mm256_set1_ps(lo);
  const __m256 vhi = _mm256_set1_ps(hi);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 r = _mm256_loadu_ps(ref + i);
    __m256 v = _mm256_loadu_ps(x + i);
    v = _mm256_max_ps(v, _mm256_sub_ps(r, veps));
    v = _mm256_min_ps(v, _mm256_add_ps(r, veps));
    v = _mm256_max_ps(v, vlo);
    v = _mm256_min_ps(v, vhi);
    _mm256_storeu_ps(out + i, v);
  }
  for (; i < n; ++i) {
    float v = x[i];
    if (v < ref[i] - eps) v = ref[i] - eps;
    if (v > ref[i] + eps) v = ref[i] + eps;
    if (v < lo) v = lo;
    if (v > hi) v = hi;
    out[i] = v;
  }
}

void project_box_f64(const double* x, const double* ref, double eps, double lo, double hi,
                     double* out, std::size_t n) {
  const __m256d veps = _mm256_set1_pd(eps);
  const __m256d vlo = _mm256_set1_pd(lo);
  const __m256d vhi = _mm256_set1_pd(hi);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d r = _mm256_loadu_pd(ref + i);
    __m256d v = _mm256_loadu_pd(x + i);
    v = _mm256_max_pd(v, _mm256_sub_pd(r, veps));
    v = _mm256_min_pd(v, _mm256_add_pd(r, veps));
    v = _mm256_max_pd(v, vlo);
    v = _mm256_min_pd(v, vhi);
    _mm256_storeu_pd(out + i, v);
  }
  for (; i < n; ++i) {
    double v = x[i];
    if (v < ref[i] - eps) v = ref[i] - eps;
    if (v > ref[i] + eps) v = ref[i] + eps;
    if (v < lo) v = lo;
    if (v > hi) v = hi;
    out[i] = v;
  }
}

void clamp_f32(const float* x, float lo, float hi, float* out, std::size_t n) {
  const __m256 vlo = _mm256_set1_ps(lo);
  const __m256 vhi = _mm256_set1_ps(hi);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_min_ps(_mm256_max_ps(_mm256_loadu_ps(x + i), vlo), vhi));
  for (; i < n; ++i) {
    float v = x[i];
    if (v < lo) v = lo;
    if (v > hi) v = hi;
    out[i] = v;
  }
}

void clamp_f64(const double* x, double lo, double hi, double* out, std::size_t n) {
  const __m256d vlo = _mm256_set1_pd(lo);
  const __m256d vhi = _mm256_set1_pd(hi);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_min_pd(_mm256_max_pd(_mm256_loadu_pd(x + i), vlo), vhi));
  for (; i < n; ++i) {
    double v = x[i];
    if (v < lo) v = lo;
    if (v > hi) v = hi;
    out[i] = v;
  }
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

float sum_f32(const float* x, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_add_ps(acc0, _mm256_loadu_ps(x + i));
    acc1 = _mm256_add_ps(acc1, _mm256_loadu_ps(x + i + 8));
  }
  for (; i + 8 <= n; i += 8) acc0 = _mm256_add_ps(acc0, _mm256_loadu_ps(x + i));
  float acc = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) acc += x[i];
  return acc;
}

double sum_f64(const double* x, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x + i + 4));
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i];
  return acc;
}

float dot_f32(const float* a, const float* b, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8)
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
  float acc = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double dot_f64(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

float max_abs_diff_f32(const float* a, const float* b, std::size_t n) {
  const __m256 absmask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
  __m256 m = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 d = _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i));
    m = _mm256_max_ps(m, _mm256_and_ps(d, absmask));
  }
  float mx = hmax(m);
  for (; i < n; ++i) {
    const float d = std::fabs(a[i] - b[i]);
    if (d > mx) mx = d;
  }
  return mx;
}

double max_abs_diff_f64(const double* a, const double* b, std::size_t n) {
  const __m256d absmask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));
  __m256d m = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    m = _mm256_max_pd(m, _mm256_and_pd(d, absmask));
  }
  double mx = hmax(m);
  for (; i < n; ++i) {
    const double d = std::fabs(a[i] - b[i]);
    if (d > mx) mx = d;
  }
  return mx;
}

const Table<float> kAvx2F32 = [] {
  Table<float> t{};
  t.gemm_nn = gemm_nn_f32;
  t.gemm_nt = gemm_nt_f32;
  t.gemm_tn = gemm_tn_f32;
  t.add = add_f32;
  t.sub = sub_f32;
  t.mul = mul_f32;
  t.axpy = axpy_f32;
  t.scale = scale_f32;
  t.relu_fwd = relu_fwd_f32;
  t.relu_bwd = relu_bwd_f32;
  t.sign_step = sign_step_f32;
  t.project_box = project_box_f32;
  t.clamp = clamp_f32;
  t.sum = sum_f32;
  t.dot = dot_f32;
  t.max_abs_diff = max_abs_diff_f32;
  return t;
}();

const Table<double> kAvx2F64 = [] {
  Table<double> t{};
  t.gemm_nn = gemm_nn_f64;
  t.gemm_nt = gemm_nt_f64;
  t.gemm_tn = gemm_tn_f64;
  t.add = add_f64;
  t.sub = sub_f64;
  t.mul = mul_f64;
  t.axpy = axpy_f64;
  t.scale = scale_f64;
  t.relu_fwd = relu_fwd_f64;
  t.relu_bwd = relu_bwd_f64;
  t.sign_step = sign_step_f64;
  t.project_box = project_box_f64;
  t.clamp = clamp_f64;
  t.sum = sum_f64;
  t.dot = dot_f64;
  t.max_abs_diff = max_abs_diff_f64;
  return t;
}();

}  // namespace

const Table<float>& avx2_table_f32() { return kAvx2F32; }
const Table<double>& avx2_table_f64() { return kAvx2F64; }

}  // namespace morel::kern

#endif  // MOREL_BUILD_AVX2
