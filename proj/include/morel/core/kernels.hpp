#pragma once

#include <cstddef>

namespace morel::kern {

/// Kernel backend selection. Scalar kernels are the reference semantics;
/// SIMD variants must match them within the tolerances pinned by the
/// equivalence tests (exact for order-independent ops, small relative
/// error for reductions/GEMM where FMA and reassociation differ).
enum class Backend { scalar, avx2 };

Backend active_backend();
bool backend_available(Backend b);
/// Override dispatch (tests, benchmarking). Throws if the backend was not
/// compiled in or the CPU lacks the feature.
void force_backend(Backend b);
const char* backend_name(Backend b);

/// Flat table of hot-loop kernels for one scalar type.
/// GEMM family is BLAS-like row-major: C = alpha * op(A) * op(B) + beta * C.
///   gemm_nn: A (M,K) lda, B (K,N) ldb
///   gemm_nt: A (M,K) lda, B stored (N,K) ldb, used as B^T
///   gemm_tn: A stored (K,M) lda, used as A^T, B (K,N) ldb
template <typename T>
struct Table {
  using GemmFn = void (*)(std::size_t M, std::size_t N, std::size_t K, T alpha, const T* A,
                          std::size_t lda, const T* B, std::size_t ldb, T beta, T* C,
                          std::size_t ldc);

  GemmFn gemm_nn;
  GemmFn gemm_nt;
  GemmFn gemm_tn;

  void (*add)(const T* a, const T* b, T* out, std::size_t n);
  void (*sub)(const T* a, const T* b, T* out, std::size_t n);
  void (*mul)(const T* a, const T* b, T* out, std::size_t n);
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);   // y += alpha * x
  void (*scale)(const T* x, T alpha, T* out, std::size_t n);

  void (*relu_fwd)(const T* x, T* y, std::size_t n);
  void (*relu_bwd)(const T* x, const T* dy, T* dx, std::size_t n);  // dx += dy * (x > 0)

  /// out = x + eta * sign(g), with sign(0) = 0.
  void (*sign_step)(const T* x, const T* g, T eta, T* out, std::size_t n);
  /// out = clamp(clamp(x, ref - eps, ref + eps), lo, hi)
  void (*project_box)(const T* x, const T* ref, T eps, T lo, T hi, T* out, std::size_t n);
  void (*clamp)(const T* x, T lo, T hi, T* out, std::size_t n);

  T (*sum)(const T* x, std::size_t n);
  T (*dot)(const T* a, const T* b, std::size_t n);
  T (*max_abs_diff)(const T* a, const T* b, std::size_t n);
};

const Table<float>& scalar_table_f32();
const Table<double>& scalar_table_f64();
#if defined(MOREL_BUILD_AVX2)
const Table<float>& avx2_table_f32();
const Table<double>& avx2_table_f64();
#endif

/// Active table for the current backend.
const Table<float>& table_f32();
const Table<double>& table_f64();

template <typename T>
inline const Table<T>& table();
template <>
inline const Table<float>& table<float>() { return table_f32(); }
template <>
inline const Table<double>& table<double>() { return table_f64(); }

/// Table for an explicit backend (equivalence tests).
const Table<float>& table_f32_for(Backend b);
const Table<double>& table_f64_for(Backend b);

}  // namespace morel::kern
