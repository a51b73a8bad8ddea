#pragma once

#include <stdexcept>
#include <vector>

#include "morel/autodiff/graph.hpp"

namespace morel::nn {

/// SGD with momentum and decoupled-from-nothing weight decay folded into the
/// gradient (v = mu*v + g + wd*theta; theta -= lr*v).
template <typename T>
class Sgd {
 public:
  struct Hparams {
    T lr{0.01};
    T momentum{0.9};
    T weight_decay{0};
  };

  Sgd(std::vector<ad::Var<T>> params, Hparams hp) : params_(std::move(params)), hp_(hp) {
    for (auto& p : params_) velocity_.emplace_back(p->value.shape());
  }

  T lr() const { return hp_.lr; }
  void set_lr(T lr) { hp_.lr = lr; }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  void step() {
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (p->grad.empty()) continue;  // never touched by backward
      auto& v = velocity_[i];
      T* theta = p->value.data();
      const T* g = p->grad.data();
      T* vel = v.data();
      for (int64_t j = 0; j < p->value.numel(); ++j) {
        vel[j] = hp_.momentum * vel[j] + g[j] + hp_.weight_decay * theta[j];
        theta[j] -= hp_.lr * vel[j];
      }
    }
  }

  size_t size() const { return params_.size(); }
  Tensor<T>& velocity(size_t i) { return velocity_.at(i); }
  const std::vector<ad::Var<T>>& params() const { return params_; }

 private:
  std::vector<ad::Var<T>> params_;
  std::vector<Tensor<T>> velocity_;
  Hparams hp_;
};

}  // namespace morel::nn
