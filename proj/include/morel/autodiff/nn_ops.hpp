#pragma once

// Structured network ops: 2-d convolution (im2col + GEMM), pooling and batch
// normalization. Convolution caches the unfolded input for the backward pass.

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>

#include "morel/autodiff/graph.hpp"
#include "morel/core/kernels.hpp"
#include "morel/core/tensor.hpp"

namespace morel::ad {

namespace detail {

template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t OH, int64_t OW, T* col) {
  // col layout: (C*kh*kw, OH*OW) row-major
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        T* dst = col + ((c * kh + ki) * kw + kj) * (OH * OW);
        for (int64_t oy = 0; oy < OH; ++oy) {
          const int64_t iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= H) {
            for (int64_t ox = 0; ox < OW; ++ox) dst[oy * OW + ox] = T{0};
            continue;
          }
          const T* src = x + (c * H + iy) * W;
          for (int64_t ox = 0; ox < OW; ++ox) {
            const int64_t ix = ox * stride + kj - pad;
            dst[oy * OW + ox] = (ix >= 0 && ix < W) ? src[ix] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t OH, int64_t OW, T* x) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const T* src = col + ((c * kh + ki) * kw + kj) * (OH * OW);
        for (int64_t oy = 0; oy < OH; ++oy) {
          const int64_t iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= H) continue;
          T* dst = x + (c * H + iy) * W;
          for (int64_t ox = 0; ox < OW; ++ox) {
            const int64_t ix = ox * stride + kj - pad;
            if (ix >= 0 && ix < W) dst[ix] += src[oy * OW + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int64_t stride = 1,
              int64_t pad = 0) {
  if (x->value.rank() != 4) throw std::invalid_argument("conv2d: input must be (n,C,H,W)");
  if (w->value.rank() != 4) throw std::invalid_argument("conv2d: weight must be (F,C,kh,kw)");
  const int64_t n = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  const int64_t F = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
  if (w->value.dim(1) != C) throw std::invalid_argument("conv2d: channel mismatch");
  if (b->value.numel() != F) throw std::invalid_argument("conv2d: bias length mismatch");
  const int64_t OH = (H + 2 * pad - kh) / stride + 1;
  const int64_t OW = (W + 2 * pad - kw) / stride + 1;
  if (OH <= 0 || OW <= 0) throw std::invalid_argument("conv2d: empty output");

  const int64_t ckk = C * kh * kw;
  const int64_t ohw = OH * OW;
  auto cols = std::make_shared<Tensor<T>>(Shape{n, ckk, ohw});
  Tensor<T> out(Shape{n, F, OH, OW});
  const auto& kt = kern::table<T>();
  for (int64_t i = 0; i < n; ++i) {
    T* col = cols->data() + i * ckk * ohw;
    detail::im2col(x->value.data() + i * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW, col);
    T* y = out.data() + i * F * ohw;
    kt.gemm_nn(F, ohw, ckk, T{1}, w->value.data(), ckk, col, ohw, T{0}, y, ohw);
    for (int64_t f = 0; f < F; ++f) {
      const T bias = b->value[f];
      T* row = y + f * ohw;
      for (int64_t j = 0; j < ohw; ++j) row[j] += bias;
    }
  }

  return make_node<T>(
      std::move(out), {x, w, b},
      [cols, n, C, H, W, F, kh, kw, stride, pad, OH, OW, ckk, ohw](Node<T>& self) {
        const auto& k = kern::table<T>();
        auto& xin = self.inputs[0];
        auto& win = self.inputs[1];
        auto& bin = self.inputs[2];
        if (win->requires_grad) {
          T* dW = win->ensure_grad().data();
          for (int64_t i = 0; i < n; ++i)
            k.gemm_nt(F, ckk, ohw, T{1}, self.grad.data() + i * F * ohw, ohw,
                      cols->data() + i * ckk * ohw, ohw, T{1}, dW, ckk);
        }
        if (bin->requires_grad) {
          T* db = bin->ensure_grad().data();
          for (int64_t i = 0; i < n; ++i)
            for (int64_t f = 0; f < F; ++f)
              db[f] += k.sum(self.grad.data() + (i * F + f) * ohw, ohw);
        }
        if (xin->requires_grad) {
          T* dx = xin->ensure_grad().data();
          Tensor<T> dcol(Shape{ckk, ohw});
          for (int64_t i = 0; i < n; ++i) {
            k.gemm_tn(ckk, ohw, F, T{1}, win->value.data(), ckk, self.grad.data() + i * F * ohw,
                      ohw, T{0}, dcol.data(), ohw);
            detail::col2im_add(dcol.data(), C, H, W, kh, kw, stride, pad, OH, OW,
                               dx + i * C * H * W);
          }
        }
      },
      "conv2d");
}

template <typename T>
Var<T> maxpool2d(const Var<T>& x, int64_t k = 2, int64_t stride = 2) {
  if (x->value.rank() != 4) throw std::invalid_argument("maxpool2d: input must be (n,C,H,W)");
  const int64_t n = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  const int64_t OH = (H - k) / stride + 1;
  const int64_t OW = (W - k) / stride + 1;
  Tensor<T> out(Shape{n, C, OH, OW});
  std::vector<int64_t> arg(static_cast<size_t>(out.numel()));
  int64_t o = 0;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t c = 0; c < C; ++c) {
      const T* plane = x->value.data() + (i * C + c) * H * W;
      for (int64_t oy = 0; oy < OH; ++oy) {
        for (int64_t ox = 0; ox < OW; ++ox, ++o) {
          int64_t best = (oy * stride) * W + ox * stride;
          T bv = plane[best];
          for (int64_t ki = 0; ki < k; ++ki) {
            for (int64_t kj = 0; kj < k; ++kj) {
              const int64_t idx = (oy * stride + ki) * W + ox * stride + kj;
              if (plane[idx] > bv) {
                bv = plane[idx];
                best = idx;
              }
            }
          }
          out[o] = bv;
          arg[static_cast<size_t>(o)] = (i * C + c) * H * W + best;
        }
      }
    }
  }
  return make_node<T>(
      std::move(out), {x},
      [arg = std::move(arg)](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        T* dx = self.inputs[0]->ensure_grad().data();
        for (int64_t i = 0; i < self.grad.numel(); ++i) dx[arg[static_cast<size_t>(i)]] += self.grad[i];
      },
      "maxpool2d");
}

template <typename T>
Var<T> global_avgpool(const Var<T>& x) {
  if (x->value.rank() != 4) throw std::invalid_argument("global_avgpool: input must be (n,C,H,W)");
  const int64_t n = x->value.dim(0), C = x->value.dim(1), hw = x->value.dim(2) * x->value.dim(3);
  Tensor<T> out(Shape{n, C});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < C; ++c)
      out.at(i, c) = kern::table<T>().sum(x->value.data() + (i * C + c) * hw, hw) / static_cast<T>(hw);
  return make_node<T>(
      std::move(out), {x},
      [n, C, hw](Node<T>& self) {
        if (!self.inputs[0]->requires_grad) return;
        T* dx = self.inputs[0]->ensure_grad().data();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t c = 0; c < C; ++c) {
            const T g = self.grad[i * C + c] / static_cast<T>(hw);
            T* plane = dx + (i * C + c) * hw;
            for (int64_t j = 0; j < hw; ++j) plane[j] += g;
          }
      },
      "global_avgpool");
}

/// How batch-statistics layers behave for a given forward pass.
///  - train_update: batch stats, running stats updated (ordinary train step)
///  - train_frozen: batch stats, running stats untouched (attack generation)
///  - eval:         running stats
enum class BnMode { train_update, train_frozen, eval };

template <typename T>
Var<T> batchnorm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                   Tensor<T>& running_mean, Tensor<T>& running_var, BnMode mode,
                   T eps = T{1e-5}, T momentum = T{0.1}) {
  if (x->value.rank() != 4) throw std::invalid_argument("batchnorm2d: input must be (n,C,H,W)");
  const int64_t n = x->value.dim(0), C = x->value.dim(1), hw = x->value.dim(2) * x->value.dim(3);
  if (gamma->value.numel() != C || beta->value.numel() != C)
    throw std::invalid_argument("batchnorm2d: scale/offset length mismatch");
  const int64_t cnt = n * hw;

  Tensor<T> mean(Shape{C});
  Tensor<T> var(Shape{C});
  const bool use_batch_stats = mode != BnMode::eval;
  if (use_batch_stats) {
    for (int64_t c = 0; c < C; ++c) {
      T s{0};
      for (int64_t i = 0; i < n; ++i)
        s += kern::table<T>().sum(x->value.data() + (i * C + c) * hw, hw);
      mean[c] = s / static_cast<T>(cnt);
    }
    for (int64_t c = 0; c < C; ++c) {
      T s{0};
      for (int64_t i = 0; i < n; ++i) {
        const T* p = x->value.data() + (i * C + c) * hw;
        for (int64_t j = 0; j < hw; ++j) {
          const T d = p[j] - mean[c];
          s += d * d;
        }
      }
      var[c] = s / static_cast<T>(cnt);
    }
    if (mode == BnMode::train_update) {
      const T unbias = cnt > 1 ? static_cast<T>(cnt) / static_cast<T>(cnt - 1) : T{1};
      for (int64_t c = 0; c < C; ++c) {
        running_mean[c] = (T{1} - momentum) * running_mean[c] + momentum * mean[c];
        running_var[c] = (T{1} - momentum) * running_var[c] + momentum * var[c] * unbias;
      }
    }
  } else {
    mean = running_mean;
    var = running_var;
  }

  Tensor<T> inv_std(Shape{C});
  for (int64_t c = 0; c < C; ++c) inv_std[c] = T{1} / std::sqrt(var[c] + eps);

  auto xhat = std::make_shared<Tensor<T>>(Shape{n, C, x->value.dim(2), x->value.dim(3)});
  Tensor<T> out(x->value.shape());
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < C; ++c) {
      const T* p = x->value.data() + (i * C + c) * hw;
      T* h = xhat->data() + (i * C + c) * hw;
      T* y = out.data() + (i * C + c) * hw;
      const T mu = mean[c], is = inv_std[c], g = gamma->value[c], bt = beta->value[c];
      for (int64_t j = 0; j < hw; ++j) {
        h[j] = (p[j] - mu) * is;
        y[j] = g * h[j] + bt;
      }
    }

  return make_node<T>(
      std::move(out), {x, gamma, beta},
      [xhat, inv_std = std::move(inv_std), n, C, hw, cnt, use_batch_stats](Node<T>& self) {
        auto& xin = self.inputs[0];
        auto& gin = self.inputs[1];
        auto& bin = self.inputs[2];
        if (gin->requires_grad) {
          T* dg = gin->ensure_grad().data();
          for (int64_t i = 0; i < n; ++i)
            for (int64_t c = 0; c < C; ++c)
              dg[c] += kern::table<T>().dot(self.grad.data() + (i * C + c) * hw,
                                            xhat->data() + (i * C + c) * hw, hw);
        }
        if (bin->requires_grad) {
          T* db = bin->ensure_grad().data();
          for (int64_t i = 0; i < n; ++i)
            for (int64_t c = 0; c < C; ++c)
              db[c] += kern::table<T>().sum(self.grad.data() + (i * C + c) * hw, hw);
        }
        if (!xin->requires_grad) return;
        T* dx = xin->ensure_grad().data();
        const T* gammaV = gin->value.data();
        if (use_batch_stats) {
          for (int64_t c = 0; c < C; ++c) {
            T sum_g{0}, sum_gh{0};
            for (int64_t i = 0; i < n; ++i) {
              const T* d = self.grad.data() + (i * C + c) * hw;
              const T* h = xhat->data() + (i * C + c) * hw;
              sum_g += kern::table<T>().sum(d, hw);
              sum_gh += kern::table<T>().dot(d, h, hw);
            }
            const T mg = sum_g / static_cast<T>(cnt);
            const T mgh = sum_gh / static_cast<T>(cnt);
            const T scale = gammaV[c] * inv_std[c];
            for (int64_t i = 0; i < n; ++i) {
              const T* d = self.grad.data() + (i * C + c) * hw;
              const T* h = xhat->data() + (i * C + c) * hw;
              T* o = dx + (i * C + c) * hw;
              for (int64_t j = 0; j < hw; ++j) o[j] += scale * (d[j] - mg - h[j] * mgh);
            }
          }
        } else {
          for (int64_t c = 0; c < C; ++c) {
            const T scale = gammaV[c] * inv_std[c];
            for (int64_t i = 0; i < n; ++i)
              kern::table<T>().axpy(scale, self.grad.data() + (i * C + c) * hw,
                                    dx + (i * C + c) * hw, hw);
          }
        }
      },
      "batchnorm2d");
}

}  // namespace morel::ad
