#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "morel/autodiff/nn_ops.hpp"
#include "morel/autodiff/ops.hpp"
#include "morel/core/rng.hpp"

namespace morel::nn {

/// Fan-in scaled uniform init, U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
template <typename T>
Tensor<T> init_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
  rng.fill_uniform(t, -bound, bound);
  return t;
}

template <typename T>
struct Linear {
  ad::Var<T> weight;  // (out, in)
  ad::Var<T> bias;    // (out)

  Linear() = default;
  Linear(int64_t in, int64_t out, Rng& rng)
      : weight(ad::leaf(init_uniform<T>(Shape{out, in}, in, rng), true)),
        bias(ad::leaf(init_uniform<T>(Shape{out}, in, rng), true)) {}

  int64_t in_features() const { return weight->value.dim(1); }
  int64_t out_features() const { return weight->value.dim(0); }

  ad::Var<T> forward(const ad::Var<T>& x) const {
    return ad::add_rowvec(ad::matmul(x, weight, false, true), bias);
  }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, ad::Var<T>>>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

template <typename T>
struct Conv2d {
  ad::Var<T> weight;  // (F, C, k, k)
  ad::Var<T> bias;    // (F)
  int64_t stride = 1;
  int64_t pad = 0;

  Conv2d() = default;
  Conv2d(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride_, int64_t pad_, Rng& rng)
      : weight(ad::leaf(init_uniform<T>(Shape{out_ch, in_ch, k, k}, in_ch * k * k, rng), true)),
        bias(ad::leaf(init_uniform<T>(Shape{out_ch}, in_ch * k * k, rng), true)),
        stride(stride_),
        pad(pad_) {}

  ad::Var<T> forward(const ad::Var<T>& x) const { return ad::conv2d(x, weight, bias, stride, pad); }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, ad::Var<T>>>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

template <typename T>
struct BatchNorm2d {
  ad::Var<T> gamma;  // (C), init 1
  ad::Var<T> beta;   // (C), init 0
  Tensor<T> running_mean;
  Tensor<T> running_var;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int64_t channels)
      : gamma(ad::leaf(Tensor<T>(Shape{channels}, T{1}), true)),
        beta(ad::leaf(Tensor<T>(Shape{channels}, T{0}), true)),
        running_mean(Shape{channels}),
        running_var(Shape{channels}, T{1}) {}

  ad::Var<T> forward(const ad::Var<T>& x, ad::BnMode mode) {
    return ad::batchnorm2d(x, gamma, beta, running_mean, running_var, mode);
  }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, ad::Var<T>>>& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
  void collect_buffers(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    out.emplace_back(prefix + ".running_mean", &running_mean);
    out.emplace_back(prefix + ".running_var", &running_var);
  }
};

}  // namespace morel::nn
