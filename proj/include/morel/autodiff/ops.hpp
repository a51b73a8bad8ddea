#pragma once

// Differentiable tensor primitives. Each op computes its value through the
// kernel layer where a kernel exists and attaches a closure that accumulates
// gradients into its inputs. Reductions and softmax-family ops subtract the
// row max before exponentiation.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "morel/autodiff/graph.hpp"
#include "morel/core/kernels.hpp"
#include "morel/core/tensor.hpp"

namespace morel::ad {

namespace detail {

template <typename T>
void check_2d(const Tensor<T>& t, const char* who) {
  if (t.rank() != 2) throw std::invalid_argument(std::string(who) + ": expected 2-d tensor, got " + shape_str(t.shape()));
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix multiply: out = op(a) * op(b), ta/tb select transposition of the
// stored operand. (ta && tb) is unused and rejected.
// ---------------------------------------------------------------------------
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool ta = false, bool tb = false) {
  detail::check_2d(a->value, "matmul lhs");
  detail::check_2d(b->value, "matmul rhs");
  if (ta && tb) throw std::invalid_argument("matmul: double transpose unsupported");
  const auto& k = kern::table<T>();
  const int64_t M = ta ? a->value.cols() : a->value.rows();
  const int64_t K = ta ? a->value.rows() : a->value.cols();
  const int64_t Kb = tb ? b->value.cols() : b->value.rows();
  const int64_t N = tb ? b->value.rows() : b->value.cols();
  if (K != Kb)
    throw std::invalid_argument("matmul: inner dimensions disagree " + shape_str(a->value.shape()) + (ta ? "^T" : "") + " * " + shape_str(b->value.shape()) + (tb ? "^T" : ""));

  Tensor<T> out(Shape{M, N});
  const T* A = a->value.data();
  const T* B = b->value.data();
  T* C = out.data();
  if (!ta && !tb)
    k.gemm_nn(M, N, K, T{1}, A, K, B, N, T{0}, C, N);
  else if (!ta && tb)
    k.gemm_nt(M, N, K, T{1}, A, K, B, K, T{0}, C, N);
  else
    k.gemm_tn(M, N, K, T{1}, A, M, B, N, T{0}, C, N);

  return make_node<T>(
      std::move(out), {a, b},
      [ta, tb, M, N, K](Node<T>& self) {
        const auto& kt = kern::table<T>();
        const Var<T>& av = self.inputs[0];
        const Var<T>& bv = self.inputs[1];
        const T* dC = self.grad.data();
        if (av->requires_grad) {
          T* dA = av->ensure_grad().data();
          if (!ta && !tb)  // dA += dC * B^T
            kt.gemm_nt(M, K, N, T{1}, dC, N, bv->value.data(), N, T{1}, dA, K);
          else if (!ta && tb)  // dA += dC * B
            kt.gemm_nn(M, K, N, T{1}, dC, N, bv->value.data(), K, T{1}, dA, K);
          else  // a stored (K, M): dA += B * dC^T -> (K, M)
            kt.gemm_nt(K, M, N, T{1}, bv->value.data(), N, dC, N, T{1}, dA, M);
        }
        if (bv->requires_grad) {
          T* dB = bv->ensure_grad().data();
          if (!ta && !tb)  // dB += A^T * dC -> (K, N)
            kt.gemm_tn(K, N, M, T{1}, av->value.data(), K, dC, N, T{1}, dB, N);
          else if (!ta && tb)  // b stored (N, K): dB += dC^T * A -> (N, K)
            kt.gemm_tn(N, K, M, T{1}, dC, N, av->value.data(), K, T{1}, dB, K);
          else  // dB += A * dC -> (K, N), a stored (K, M)
            kt.gemm_nn(K, N, M, T{1}, av->value.data(), M, dC, N, T{1}, dB, N);
        }
      },
      "matmul");
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a->value, b->value, "add");
  Tensor<T> out(a->value.shape());
  kern::table<T>().add(a->value.data(), b->value.data(), out.data(), out.numel());
  return make_node<T>(
      std::move(out), {a, b},
      [](Node<T>& self) {
        const auto& kt = kern::table<T>();
        for (int i = 0; i < 2; ++i) {
          auto& in = self.inputs[i];
          if (in->requires_grad)
            kt.axpy(T{1}, self.grad.data(), in->ensure_grad().data(), self.grad.numel());
        }
      },
      "add");
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a->value, b->value, "sub");
  Tensor<T> out(a->value.shape());
  kern::table<T>().sub(a->value.data(), b->value.data(), out.data(), out.numel());
  return make_node<T>(
      std::move(out), {a, b},
      [](Node<T>& self) {
        const auto& kt = kern::table<T>();
        if (self.inputs[0]->requires_grad)
          kt.axpy(T{1}, self.grad.data(), self.inputs[0]->ensure_grad().data(), self.grad.numel());
        if (self.inputs[1]->requires_grad)
          kt.axpy(T{-1}, self.grad.data(), self.inputs[1]->ensure_grad().data(), self.grad.numel());
      },
      "sub");
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a->value, b->value, "mul");
  Tensor<T> out(a->value.shape());
  kern::table<T>().mul(a->value.data(), b->value.data(), out.data(), out.numel());
  return make_node<T>(
      std::move(out), {a, b},
      [](Node<T>& self) {
        const int64_t n = self.grad.numel();
        const T* d = self.grad.data();
        if (self.inputs[0]->requires_grad) {
          T* da = self.inputs[0]->ensure_grad().data();
          const T* bv = self.inputs[1]->value.data();
          for (int64_t i = 0; i < n; ++i) da[i] += d[i] * bv[i];
        }
        if (self.inputs[1]->requires_grad) {
          T* db = self.inputs[1]->ensure_grad().data();
          const T* av = self.inputs[0]->value.data();
          for (int64_t i = 0; i < n; ++i) db[i] += d[i] * av[i];
        }
      },
      "mul");
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a->value, b->value, "div");
  Tensor<T> out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] / b->value[i];
  return make_node<T>(
      std::move(out), {a, b},
      [](Node<T>& self) {
        const int64_t n = self.grad.numel();
        const T* d = self.grad.data();
        const T* bv = self.inputs[1]->value.data();
        if (self.inputs[0]->requires_grad) {
          T* da = self.inputs[0]->ensure_grad().data();
          for (int64_t i = 0; i < n; ++i) da[i] += d[i] / bv[i];
        }
        if (self.inputs[1]->requires_grad) {
          T* db = self.inputs[1]->ensure_grad().data();
          const T* y = self.value.data();
          for (int64_t i = 0; i < n; ++i) db[i] -= d[i] * y[i] / bv[i];
        }
      },
      "div");
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out(a->value.shape());
  kern::table<T>().scale(a->value.data(), s, out.data(), out.numel());
  return make_node<T>(
      std::move(out), {a},
      [s](Node<T>& self) {
        if (self.inputs[0]->requires_grad)
          kern::table<T>().axpy(s, self.grad.data(), self.inputs[0]->ensure_grad().data(), self.grad.numel());
      },
      "scale");
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) {
  Tensor<T> out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + c;
  return make_node<T>(
      std::move(out), {a},
      [](Node<T>& self) {
        if (self.inputs[0]->requires_grad)
          kern::table<T>().axpy(T{1}, self.grad.data(), self.inputs[0]->ensure_grad().data(), self.grad.numel());
      },
      "add_scalar");
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T{-1});
}

template <typename T>
Var<T> exp_op(const Var<T>& a) {
  Tensor<T> out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(a->value[i]);
  return make_node<T>(
      std::move(out), {a},
      [](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        T* da = self.inputs[0]->ensure_grad().data();
        for (int64_t i = 0; i < self.grad.numel(); ++i) da[i] += self.grad[i] * self.value[i];
      },
      "exp");
}

template <typename T>
Var<T> log_op(const Var<T>& a) {
  Tensor<T> out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(a->value[i]);
  return make_node<T>(
      std::move(out), {a},
      [](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        T* da = self.inputs[0]->ensure_grad().data();
        const T* av = self.inputs[0]->value.data();
        for (int64_t i = 0; i < self.grad.numel(); ++i) da[i] += self.grad[i] / av[i];
      },
      "log");
}

template <typename T>
Var<T> sqrt_op(const Var<T>& a) {
  Tensor<T> out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::sqrt(a->value[i]);
  return make_node<T>(
      std::move(out), {a},
      [](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        T* da = self.inputs[0]->ensure_grad().data();
        for (int64_t i = 0; i < self.grad.numel(); ++i)
          da[i] += self.grad[i] * T{0.5} / self.value[i];
      },
      "sqrt");
}

template <typename T>
Var<T> abs_op(const Var<T>& a) {
  Tensor<T> out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::abs(a->value[i]);
  return make_node<T>(
      std::move(out), {a},
      [](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        T* da = self.inputs[0]->ensure_grad().data();
        const T* av = self.inputs[0]->value.data();
        for (int64_t i = 0; i < self.grad.numel(); ++i) {
          const T s = av[i] > T{0} ? T{1} : (av[i] < T{0} ? T{-1} : T{0});
          da[i] += self.grad[i] * s;
        }
      },
      "abs");
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out(a->value.shape());
  kern::table<T>().relu_fwd(a->value.data(), out.data(), out.numel());
  return make_node<T>(
      std::move(out), {a},
      [](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        kern::table<T>().relu_bwd(self.inputs[0]->value.data(), self.grad.data(),
                                  self.inputs[0]->ensure_grad().data(), self.grad.numel());
      },
      "relu");
}

// broadcast a length-m row vector over the rows of (n, m)
template <typename T>
Var<T> add_rowvec(const Var<T>& a, const Var<T>& v) {
  detail::check_2d(a->value, "add_rowvec");
  const int64_t n = a->value.rows(), m = a->value.cols();
  if (v->value.numel() != m) throw std::invalid_argument("add_rowvec: vector length mismatch");
  Tensor<T> out(a->value.shape());
  for (int64_t i = 0; i < n; ++i)
    kern::table<T>().add(a->value.data() + i * m, v->value.data(), out.data() + i * m, m);
  return make_node<T>(
      std::move(out), {a, v},
      [n, m](Node<T>& self) {
        const auto& kt = kern::table<T>();
        if (self.inputs[0]->requires_grad)
          kt.axpy(T{1}, self.grad.data(), self.inputs[0]->ensure_grad().data(), n * m);
        if (self.inputs[1]->requires_grad) {
          T* dv = self.inputs[1]->ensure_grad().data();
          for (int64_t i = 0; i < n; ++i) kt.axpy(T{1}, self.grad.data() + i * m, dv, m);
        }
      },
      "add_rowvec");
}

// ---------------------------------------------------------------------------
// Shape & indexing
// ---------------------------------------------------------------------------
template <typename T>
Var<T> reshape(const Var<T>& a, Shape s) {
  Tensor<T> out = a->value.reshaped(std::move(s));
  return make_node<T>(
      std::move(out), {a},
      [](Node<T>& self) {
        if (self.inputs[0]->requires_grad)
          kern::table<T>().axpy(T{1}, self.grad.data(), self.inputs[0]->ensure_grad().data(), self.grad.numel());
      },
      "reshape");
}

template <typename T>
Var<T> select_rows(const Var<T>& a, std::vector<int64_t> idx) {
  detail::check_2d(a->value, "select_rows");
  const int64_t m = a->value.cols();
  Tensor<T> out(Shape{static_cast<int64_t>(idx.size()), m});
  for (size_t r = 0; r < idx.size(); ++r) {
    const int64_t src = idx[r];
    if (src < 0 || src >= a->value.rows()) throw std::out_of_range("select_rows: index out of range");
    std::copy_n(a->value.data() + src * m, m, out.data() + static_cast<int64_t>(r) * m);
  }
  return make_node<T>(
      std::move(out), {a},
      [idx = std::move(idx), m](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        T* da = self.inputs[0]->ensure_grad().data();
        for (size_t r = 0; r < idx.size(); ++r)
          kern::table<T>().axpy(T{1}, self.grad.data() + static_cast<int64_t>(r) * m, da + idx[r] * m, m);
      },
      "select_rows");
}

/// Picks a[i, labels[i]] into an (n, 1) column.
template <typename T>
Var<T> select_per_row(const Var<T>& a, std::vector<int64_t> labels) {
  detail::check_2d(a->value, "select_per_row");
  const int64_t n = a->value.rows(), m = a->value.cols();
  if (static_cast<int64_t>(labels.size()) != n)
    throw std::invalid_argument("select_per_row: label count mismatch");
  Tensor<T> out(Shape{n, 1});
  for (int64_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= m) throw std::out_of_range("select_per_row: label out of range");
    out[i] = a->value[i * m + labels[i]];
  }
  return make_node<T>(
      std::move(out), {a},
      [labels = std::move(labels), m](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        T* da = self.inputs[0]->ensure_grad().data();
        for (int64_t i = 0; i < self.grad.numel(); ++i) da[i * m + labels[i]] += self.grad[i];
      },
      "select_per_row");
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const int64_t m = parts[0]->value.cols();
  int64_t n = 0;
  for (const auto& p : parts) {
    detail::check_2d(p->value, "concat_rows");
    if (p->value.cols() != m) throw std::invalid_argument("concat_rows: column mismatch");
    n += p->value.rows();
  }
  Tensor<T> out(Shape{n, m});
  int64_t row = 0;
  std::vector<int64_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(row);
    std::copy_n(p->value.data(), p->value.numel(), out.data() + row * m);
    row += p->value.rows();
  }
  std::vector<Var<T>> ins(parts.begin(), parts.end());
  return make_node<T>(
      std::move(out), std::move(ins),
      [offsets = std::move(offsets), m](Node<T>& self) {
        for (size_t i = 0; i < self.inputs.size(); ++i) {
          auto& in = self.inputs[i];
          if (!in->requires_grad) continue;
          kern::table<T>().axpy(T{1}, self.grad.data() + offsets[i] * m, in->ensure_grad().data(),
                                in->value.numel());
        }
      },
      "concat_rows");
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int64_t n = parts[0]->value.rows();
  int64_t m = 0;
  for (const auto& p : parts) {
    detail::check_2d(p->value, "concat_cols");
    if (p->value.rows() != n) throw std::invalid_argument("concat_cols: row mismatch");
    m += p->value.cols();
  }
  Tensor<T> out(Shape{n, m});
  std::vector<int64_t> offsets;
  int64_t col = 0;
  for (const auto& p : parts) {
    offsets.push_back(col);
    const int64_t pm = p->value.cols();
    for (int64_t i = 0; i < n; ++i)
      std::copy_n(p->value.data() + i * pm, pm, out.data() + i * m + col);
    col += pm;
  }
  std::vector<Var<T>> ins(parts.begin(), parts.end());
  return make_node<T>(
      std::move(out), std::move(ins),
      [offsets = std::move(offsets), n, m](Node<T>& self) {
        for (size_t p = 0; p < self.inputs.size(); ++p) {
          auto& in = self.inputs[p];
          if (!in->requires_grad) continue;
          const int64_t pm = in->value.cols();
          T* din = in->ensure_grad().data();
          for (int64_t i = 0; i < n; ++i)
            kern::table<T>().axpy(T{1}, self.grad.data() + i * m + offsets[p], din + i * pm, pm);
        }
      },
      "concat_cols");
}

// ---------------------------------------------------------------------------
// Row reductions
// ---------------------------------------------------------------------------
template <typename T>
Var<T> row_sum(const Var<T>& a) {
  detail::check_2d(a->value, "row_sum");
  const int64_t n = a->value.rows(), m = a->value.cols();
  Tensor<T> out(Shape{n, 1});
  for (int64_t i = 0; i < n; ++i) out[i] = kern::table<T>().sum(a->value.data() + i * m, m);
  return make_node<T>(
      std::move(out), {a},
      [n, m](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        T* da = self.inputs[0]->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) {
          const T g = self.grad[i];
          for (int64_t j = 0; j < m; ++j) da[i * m + j] += g;
        }
      },
      "row_sum");
}

template <typename T>
Var<T> row_dot(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a->value, b->value, "row_dot");
  detail::check_2d(a->value, "row_dot");
  const int64_t n = a->value.rows(), m = a->value.cols();
  Tensor<T> out(Shape{n, 1});
  for (int64_t i = 0; i < n; ++i)
    out[i] = kern::table<T>().dot(a->value.data() + i * m, b->value.data() + i * m, m);
  return make_node<T>(
      std::move(out), {a, b},
      [n, m](Node<T>& self) {
        const auto& kt = kern::table<T>();
        for (int side = 0; side < 2; ++side) {
          auto& in = self.inputs[side];
          auto& other = self.inputs[1 - side];
          if (!in->requires_grad) continue;
          T* d = in->ensure_grad().data();
          for (int64_t i = 0; i < n; ++i)
            kt.axpy(self.grad[i], other->value.data() + i * m, d + i * m, m);
        }
      },
      "row_dot");
}

template <typename T>
Var<T> row_max(const Var<T>& a) {
  detail::check_2d(a->value, "row_max");
  const int64_t n = a->value.rows(), m = a->value.cols();
  Tensor<T> out(Shape{n, 1});
  std::vector<int64_t> arg(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const T* row = a->value.data() + i * m;
    int64_t best = 0;
    for (int64_t j = 1; j < m; ++j)
      if (row[j] > row[best]) best = j;
    arg[static_cast<size_t>(i)] = best;
    out[i] = row[best];
  }
  return make_node<T>(
      std::move(out), {a},
      [arg = std::move(arg), m](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        T* da = self.inputs[0]->ensure_grad().data();
        for (int64_t i = 0; i < self.grad.numel(); ++i)
          da[i * m + arg[static_cast<size_t>(i)]] += self.grad[i];
      },
      "row_max");
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::scalar(kern::table<T>().sum(a->value.data(), a->value.numel()));
  return make_node<T>(
      std::move(out), {a},
      [](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        T* da = self.inputs[0]->ensure_grad().data();
        const T g = self.grad[0];
        for (int64_t i = 0; i < self.inputs[0]->value.numel(); ++i) da[i] += g;
      },
      "sum_all");
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  const int64_t n = a->value.numel();
  Tensor<T> out = Tensor<T>::scalar(kern::table<T>().sum(a->value.data(), n) / static_cast<T>(n));
  return make_node<T>(
      std::move(out), {a},
      [n](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        T* da = self.inputs[0]->ensure_grad().data();
        const T g = self.grad[0] / static_cast<T>(n);
        for (int64_t i = 0; i < n; ++i) da[i] += g;
      },
      "mean_all");
}

// ---------------------------------------------------------------------------
// Softmax family (row-wise, max-subtracted)
// ---------------------------------------------------------------------------
template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  detail::check_2d(a->value, "softmax_rows");
  const int64_t n = a->value.rows(), m = a->value.cols();
  Tensor<T> out(a->value.shape());
  for (int64_t i = 0; i < n; ++i) {
    const T* row = a->value.data() + i * m;
    T mx = row[0];
    for (int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    T s{0};
    T* o = out.data() + i * m;
    for (int64_t j = 0; j < m; ++j) {
      o[j] = std::exp(row[j] - mx);
      s += o[j];
    }
    for (int64_t j = 0; j < m; ++j) o[j] /= s;
  }
  return make_node<T>(
      std::move(out), {a},
      [n, m](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        T* da = self.inputs[0]->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) {
          const T* y = self.value.data() + i * m;
          const T* d = self.grad.data() + i * m;
          const T dy = kern::table<T>().dot(d, y, m);
          for (int64_t j = 0; j < m; ++j) da[i * m + j] += y[j] * (d[j] - dy);
        }
      },
      "softmax_rows");
}

template <typename T>
Var<T> log_softmax_rows(const Var<T>& a) {
  detail::check_2d(a->value, "log_softmax_rows");
  const int64_t n = a->value.rows(), m = a->value.cols();
  Tensor<T> out(a->value.shape());
  for (int64_t i = 0; i < n; ++i) {
    const T* row = a->value.data() + i * m;
    T mx = row[0];
    for (int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    T s{0};
    for (int64_t j = 0; j < m; ++j) s += std::exp(row[j] - mx);
    const T lse = mx + std::log(s);
    T* o = out.data() + i * m;
    for (int64_t j = 0; j < m; ++j) o[j] = row[j] - lse;
  }
  return make_node<T>(
      std::move(out), {a},
      [n, m](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        T* da = self.inputs[0]->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) {
          const T* logp = self.value.data() + i * m;
          const T* d = self.grad.data() + i * m;
          const T gs = kern::table<T>().sum(d, m);
          for (int64_t j = 0; j < m; ++j) da[i * m + j] += d[j] - std::exp(logp[j]) * gs;
        }
      },
      "log_softmax_rows");
}

template <typename T>
Var<T> logsumexp_rows(const Var<T>& a) {
  detail::check_2d(a->value, "logsumexp_rows");
  const int64_t n = a->value.rows(), m = a->value.cols();
  Tensor<T> out(Shape{n, 1});
  for (int64_t i = 0; i < n; ++i) {
    const T* row = a->value.data() + i * m;
    T mx = row[0];
    for (int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    T s{0};
    for (int64_t j = 0; j < m; ++j) s += std::exp(row[j] - mx);
    out[i] = mx + std::log(s);
  }
  return make_node<T>(
      std::move(out), {a},
      [n, m](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        T* da = self.inputs[0]->ensure_grad().data();
        const T* av = self.inputs[0]->value.data();
        for (int64_t i = 0; i < n; ++i) {
          const T lse = self.value[i];
          const T g = self.grad[i];
          for (int64_t j = 0; j < m; ++j) da[i * m + j] += g * std::exp(av[i * m + j] - lse);
        }
      },
      "logsumexp_rows");
}

// ---------------------------------------------------------------------------
// Row normalizations
// ---------------------------------------------------------------------------

/// Layer normalization over each row with learnable scale/offset.
template <typename T>
Var<T> layer_norm_rows(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T{1e-5}) {
  detail::check_2d(x->value, "layer_norm_rows");
  const int64_t n = x->value.rows(), m = x->value.cols();
  if (gamma->value.numel() != m || beta->value.numel() != m)
    throw std::invalid_argument("layer_norm_rows: scale/offset length mismatch");

  Tensor<T> xhat(Shape{n, m});
  Tensor<T> inv_std(Shape{n, 1});
  Tensor<T> out(Shape{n, m});
  for (int64_t i = 0; i < n; ++i) {
    const T* row = x->value.data() + i * m;
    const T mean = kern::table<T>().sum(row, m) / static_cast<T>(m);
    T var{0};
    for (int64_t j = 0; j < m; ++j) {
      const T d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(m);
    const T is = T{1} / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int64_t j = 0; j < m; ++j) {
      const T h = (row[j] - mean) * is;
      xhat.at(i, j) = h;
      out.at(i, j) = gamma->value[j] * h + beta->value[j];
    }
  }
  return make_node<T>(
      std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), n, m](Node<T>& self) {
        const auto& gammaV = self.inputs[1]->value;
        if (self.inputs[0]->requires_grad) {
          T* dx = self.inputs[0]->ensure_grad().data();
          for (int64_t i = 0; i < n; ++i) {
            const T* d = self.grad.data() + i * m;
            const T* h = xhat.data() + i * m;
            T sum_g{0}, sum_gh{0};
            for (int64_t j = 0; j < m; ++j) {
              const T g = d[j] * gammaV[j];
              sum_g += g;
              sum_gh += g * h[j];
            }
            const T mg = sum_g / static_cast<T>(m);
            const T mgh = sum_gh / static_cast<T>(m);
            for (int64_t j = 0; j < m; ++j) {
              const T g = d[j] * gammaV[j];
              dx[i * m + j] += inv_std[i] * (g - mg - h[j] * mgh);
            }
          }
        }
        if (self.inputs[1]->requires_grad) {
          T* dg = self.inputs[1]->ensure_grad().data();
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < m; ++j) dg[j] += self.grad[i * m + j] * xhat[i * m + j];
        }
        if (self.inputs[2]->requires_grad) {
          T* db = self.inputs[2]->ensure_grad().data();
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < m; ++j) db[j] += self.grad[i * m + j];
        }
      },
      "layer_norm_rows");
}

/// Euclidean normalization of each row to unit length. A row with norm below
/// min_norm is a degenerate embedding and raises.
template <typename T>
Var<T> l2_normalize_rows(const Var<T>& x, T min_norm = T{1e-12}) {
  detail::check_2d(x->value, "l2_normalize_rows");
  const int64_t n = x->value.rows(), m = x->value.cols();
  Tensor<T> out(Shape{n, m});
  Tensor<T> norms(Shape{n, 1});
  for (int64_t i = 0; i < n; ++i) {
    const T* row = x->value.data() + i * m;
    const T norm = std::sqrt(kern::table<T>().dot(row, row, m));
    if (!(norm >= min_norm))
      throw std::runtime_error("l2_normalize_rows: zero-norm row " + std::to_string(i));
    norms[i] = norm;
    for (int64_t j = 0; j < m; ++j) out.at(i, j) = row[j] / norm;
  }
  return make_node<T>(
      std::move(out), {x},
      [norms = std::move(norms), n, m](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        T* dx = self.inputs[0]->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i) {
          const T* r = self.value.data() + i * m;
          const T* d = self.grad.data() + i * m;
          const T dr = kern::table<T>().dot(d, r, m);
          for (int64_t j = 0; j < m; ++j) dx[i * m + j] += (d[j] - r[j] * dr) / norms[i];
        }
      },
      "l2_normalize_rows");
}

}  // namespace morel::ad
