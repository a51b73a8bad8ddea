// Reference kernels. Plain loops, no intrinsics; these define the semantics
// the SIMD variants are tested against.

#include <cmath>

#include "morel/core/kernels.hpp"

namespace morel::kern {
namespace {

template <typename T>
void gemm_nn_ref(std::size_t M, std::size_t N, std::size_t K, T alpha, const T* A, std::size_t lda,
                 const T* B, std::size_t ldb, T beta, T* C, std::size_t ldc) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * ldc;
    for (std::size_t j = 0; j < N; ++j) c[j] = beta == T{0} ? T{0} : beta * c[j];
    for (std::size_t k = 0; k < K; ++k) {
      const T a = alpha * A[i * lda + k];
      const T* b = B + k * ldb;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

template <typename T>
void gemm_nt_ref(std::size_t M, std::size_t N, std::size_t K, T alpha, const T* A, std::size_t lda,
                 const T* B, std::size_t ldb, T beta, T* C, std::size_t ldc) {
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      T acc{0};
      const T* a = A + i * lda;
      const T* b = B + j * ldb;
      for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
      T& c = C[i * ldc + j];
      c = alpha * acc + (beta == T{0} ? T{0} : beta * c);
    }
  }
}

template <typename T>
void gemm_tn_ref(std::size_t M, std::size_t N, std::size_t K, T alpha, const T* A, std::size_t lda,
                 const T* B, std::size_t ldb, T beta, T* C, std::size_t ldc) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * ldc;
    for (std::size_t j = 0; j < N; ++j) c[j] = beta == T{0} ? T{0} : beta * c[j];
    for (std::size_t k = 0; k < K; ++k) {
      const T a = alpha * A[k * lda + i];
      const T* b = B + k * ldb;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

template <typename T>
void add_ref(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void sub_ref(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
void mul_ref(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void axpy_ref(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void scale_ref(const T* x, T alpha, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

template <typename T>
void relu_fwd_ref(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
}

template <typename T>
void relu_bwd_ref(const T* x, const T* dy, T* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] > T{0}) dx[i] += dy[i];
}

template <typename T>
void sign_step_ref(const T* x, const T* g, T eta, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const T s = g[i] > T{0} ? T{1} : (g[i] < T{0} ? T{-1} : T{0});
    out[i] = x[i] + eta * s;
  }
}

template <typename T>
void project_box_ref(const T* x, const T* ref, T eps, T lo, T hi, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    T v = x[i];
    const T bl = ref[i] - eps;
    const T bh = ref[i] + eps;
    if (v < bl) v = bl;
    if (v > bh) v = bh;
    if (v < lo) v = lo;
    if (v > hi) v = hi;
    out[i] = v;
  }
}

template <typename T>
void clamp_ref(const T* x, T lo, T hi, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    T v = x[i];
    if (v < lo) v = lo;
    if (v > hi) v = hi;
    out[i] = v;
  }
}

template <typename T>
T sum_ref(const T* x, std::size_t n) {
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

template <typename T>
T dot_ref(const T* a, const T* b, std::size_t n) {
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
T max_abs_diff_ref(const T* a, const T* b, std::size_t n) {
  T m{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T d = std::abs(a[i] - b[i]);
    if (d > m) m = d;
  }
  return m;
}

template <typename T>
constexpr Table<T> make_scalar_table() {
  Table<T> t{};
  t.gemm_nn = gemm_nn_ref<T>;
  t.gemm_nt = gemm_nt_ref<T>;
  t.gemm_tn = gemm_tn_ref<T>;
  t.add = add_ref<T>;
  t.sub = sub_ref<T>;
  t.mul = mul_ref<T>;
  t.axpy = axpy_ref<T>;
  t.scale = scale_ref<T>;
  t.relu_fwd = relu_fwd_ref<T>;
  t.relu_bwd = relu_bwd_ref<T>;
  t.sign_step = sign_step_ref<T>;
  t.project_box = project_box_ref<T>;
  t.clamp = clamp_ref<T>;
  t.sum = sum_ref<T>;
  t.dot = dot_ref<T>;
  t.max_abs_diff = max_abs_diff_ref<T>;
  return t;
}

const Table<float> kScalarF32 = make_scalar_table<float>();
const Table<double> kScalarF64 = make_scalar_table<double>();

}  // namespace

const Table<float>& scalar_table_f32() { return kScalarF32; }
const Table<double>& scalar_table_f64() { return kScalarF64; }

}  // namespace morel::kern
