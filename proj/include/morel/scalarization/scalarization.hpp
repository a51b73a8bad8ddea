#pragma once

// Conic scalarization of the two training objectives:
//   CS(k, gamma, a) = sum_i k_i (L_i - a_i) + gamma * sum_i (L_i - a_i).
// The augmentation term follows the printed form without absolute values;
// abs_mode switches to gamma * sum_i |L_i - a_i| (the form used in the
// scalarization literature — identical whenever a = 0 and losses are
// non-negative).

#include <algorithm>
#include <stdexcept>
#include <string>

#include "morel/autodiff/ops.hpp"

namespace morel::scalarization {

template <typename T>
struct ScalarizationParams {
  T k1 = static_cast<T>(0.1);
  T k2 = static_cast<T>(0.9);
  T gamma = static_cast<T>(2e-5);
  T a1 = 0;
  T a2 = 0;
  bool abs_mode = false;

  void validate() const {
    if (!(gamma >= T{0} && gamma < std::min(k1, k2)))
      throw std::invalid_argument("cs.gamma must satisfy 0 <= gamma < min(k1, k2)");
    if (a1 < T{0} || a2 < T{0}) throw std::invalid_argument("cs reference point must be >= 0");
  }
};

template <typename T>
T conic_scalarize(T l1, T l2, const ScalarizationParams<T>& p) {
  const T d1 = l1 - p.a1;
  const T d2 = l2 - p.a2;
  const T aug = p.abs_mode ? std::abs(d1) + std::abs(d2) : d1 + d2;
  return p.k1 * d1 + p.k2 * d2 + p.gamma * aug;
}

/// Differentiable form; with abs_mode off the gradient w.r.t. L_i is exactly
/// k_i + gamma.
template <typename T>
ad::Var<T> conic_scalarize(const ad::Var<T>& l1, const ad::Var<T>& l2,
                           const ScalarizationParams<T>& p) {
  if (l1->value.numel() != 1 || l2->value.numel() != 1)
    throw std::invalid_argument("conic_scalarize: losses must be scalars");
  auto d1 = ad::add_scalar(l1, -p.a1);
  auto d2 = ad::add_scalar(l2, -p.a2);
  auto preference = ad::add(ad::scale(d1, p.k1), ad::scale(d2, p.k2));
  auto aug = p.abs_mode ? ad::add(ad::abs_op(d1), ad::abs_op(d2)) : ad::add(d1, d2);
  return ad::add(preference, ad::scale(aug, p.gamma));
}

/// The a_i < L_i premise is a selection-theory condition, not a runtime
/// invariant; callers report violations as diagnostics.
template <typename T>
bool reference_point_ok(T l1, T l2, const ScalarizationParams<T>& p) {
  return p.a1 < l1 && p.a2 < l2;
}

}  // namespace morel::scalarization
