#pragma once

// Training objectives. The robustness loss L1 couples a cosine alignment
// term between natural/adversarial embedded features with a multi-positive
// contrastive term over the concatenated batch; the accuracy loss L2 is
// TRADES or MART. Everything is expressed through autodiff ops so both loss
// values and gradients come from one code path; softmax/exp work is
// log-domain with max subtraction throughout.

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "morel/autodiff/ops.hpp"

namespace morel::losses {

enum class L2Variant { trades, mart };
enum class ContrastiveInputs { concat, natural };

template <typename T>
struct LossParams {
  T alpha = static_cast<T>(1e-5);       // L1 contrastive weight, 0 < alpha < 1
  T tau = static_cast<T>(0.1);          // contrastive temperature, > 0
  T inv_lambda = static_cast<T>(6);     // L2 divergence weight
  L2Variant l2_variant = L2Variant::trades;
  ContrastiveInputs contrastive_inputs = ContrastiveInputs::concat;
  bool kl_swapped = false;  // ablation: divergence measured adv -> nat

  void validate() const {
    if (!(alpha > T{0} && alpha < T{1}))
      throw std::invalid_argument("losses.alpha must lie in (0,1)");
    if (!(tau > T{0})) throw std::invalid_argument("losses.tau must be positive");
    if (!(inv_lambda > T{0})) throw std::invalid_argument("losses.inv_lambda must be positive");
  }
};

template <typename T>
ad::Var<T> cross_entropy(const ad::Var<T>& logits, const std::vector<int64_t>& labels) {
  auto logp = ad::log_softmax_rows(logits);
  return ad::neg(ad::mean_all(ad::select_per_row(logp, labels)));
}

/// Mean over the batch of KL(softmax(p) || softmax(q)).
template <typename T>
ad::Var<T> kl_divergence(const ad::Var<T>& p_logits, const ad::Var<T>& q_logits) {
  auto sp = ad::softmax_rows(p_logits);
  auto lp = ad::log_softmax_rows(p_logits);
  auto lq = ad::log_softmax_rows(q_logits);
  return ad::mean_all(ad::row_sum(ad::mul(sp, ad::sub(lp, lq))));
}

/// 1 - mean_i cos(t_i, t'_i); lies in [0,2], zero iff rows align pairwise.
template <typename T>
ad::Var<T> cosine_alignment_loss(const ad::Var<T>& t, const ad::Var<T>& t_adv) {
  if (!t->value.same_shape(t_adv->value))
    throw std::invalid_argument("cosine_alignment_loss: shape mismatch");
  const int64_t n = t->value.rows(), m = t->value.cols();
  for (int64_t i = 0; i < n; ++i) {
    const T a = kern::table<T>().dot(t->value.data() + i * m, t->value.data() + i * m, m);
    const T b = kern::table<T>().dot(t_adv->value.data() + i * m, t_adv->value.data() + i * m, m);
    if (a < T{1e-24} || b < T{1e-24})
      throw std::runtime_error("cosine_alignment_loss: zero-norm row " + std::to_string(i));
  }
  auto norm_t = ad::sqrt_op(ad::row_dot(t, t));
  auto norm_a = ad::sqrt_op(ad::row_dot(t_adv, t_adv));
  auto cos = ad::div(ad::row_dot(t, t_adv), ad::mul(norm_t, norm_a));
  return ad::add_scalar(ad::neg(ad::mean_all(cos)), T{1});
}

/// Multi-positive contrastive loss over rows of t with labels y:
/// sum_j -1/|P(j)| sum_{p in P(j)} log( exp(t_j.t_p / tau) / sum_{q != j} exp(t_j.t_q / tau) ).
/// Batch sum, as printed; positives are same-label rows excluding j itself.
template <typename T>
ad::Var<T> multi_positive_contrastive_loss(const ad::Var<T>& t, const std::vector<int64_t>& y,
                                           T tau) {
  const int64_t n = t->value.rows();
  if (static_cast<int64_t>(y.size()) != n)
    throw std::invalid_argument("contrastive loss: label count mismatch");
  if (!(tau > T{0})) throw std::invalid_argument("contrastive loss: tau must be positive");
  if (n < 2) throw std::invalid_argument("contrastive loss: needs at least two rows");

  // positive-pair weights W[j][p] = 1/|P(j)|, and -inf self mask
  Tensor<T> weights(Shape{n, n});
  Tensor<T> self_mask(Shape{n, n});
  const T kNegInf = static_cast<T>(-1e30);
  for (int64_t j = 0; j < n; ++j) {
    int64_t positives = 0;
    for (int64_t p = 0; p < n; ++p)
      if (p != j && y[static_cast<size_t>(p)] == y[static_cast<size_t>(j)]) ++positives;
    if (positives == 0)
      throw std::runtime_error("contrastive loss: row " + std::to_string(j) +
                               " has no positive partner");
    for (int64_t p = 0; p < n; ++p) {
      weights.at(j, p) =
          (p != j && y[static_cast<size_t>(p)] == y[static_cast<size_t>(j)])
              ? T{1} / static_cast<T>(positives)
              : T{0};
      self_mask.at(j, p) = p == j ? kNegInf : T{0};
    }
  }

  auto sims = ad::scale(ad::matmul(t, t, false, true), T{1} / tau);
  auto masked = ad::add(sims, ad::constant(std::move(self_mask)));
  auto lse = ad::logsumexp_rows(masked);  // (n,1) over Q(j)
  auto lse_bcast = ad::matmul(lse, ad::constant(Tensor<T>(Shape{1, n}, T{1})));
  auto log_frac = ad::sub(sims, lse_bcast);
  return ad::neg(ad::sum_all(ad::mul(ad::constant(std::move(weights)), log_frac)));
}

/// L1: cosine alignment plus alpha * contrastive. In `concat` mode the
/// contrastive term sees natural and adversarial rows stacked with
/// duplicated labels (each sample then always has its twin as a positive);
/// `natural` mode restricts it to the natural rows.
template <typename T>
ad::Var<T> robustness_loss(const ad::Var<T>& t, const ad::Var<T>& t_adv,
                           const std::vector<int64_t>& y, const LossParams<T>& params) {
  auto cosine = cosine_alignment_loss(t, t_adv);
  ad::Var<T> contrastive;
  if (params.contrastive_inputs == ContrastiveInputs::concat) {
    std::vector<int64_t> y_cat(y);
    y_cat.insert(y_cat.end(), y.begin(), y.end());
    contrastive = multi_positive_contrastive_loss(ad::concat_rows<T>({t, t_adv}), y_cat, params.tau);
  } else {
    contrastive = multi_positive_contrastive_loss(t, y, params.tau);
  }
  return ad::add(cosine, ad::scale(contrastive, params.alpha));
}

/// TRADES: CE on natural logits + (1/lambda) * KL(natural || adversarial).
template <typename T>
ad::Var<T> trades_loss(const ad::Var<T>& logits_nat, const ad::Var<T>& logits_adv,
                       const std::vector<int64_t>& y, T inv_lambda, bool kl_swapped = false) {
  if (!logits_nat->value.same_shape(logits_adv->value))
    throw std::invalid_argument("trades_loss: shape mismatch");
  auto kl = kl_swapped ? kl_divergence(logits_adv, logits_nat)
                       : kl_divergence(logits_nat, logits_adv);
  return ad::add(cross_entropy(logits_nat, y), ad::scale(kl, inv_lambda));
}

/// MART: boosted CE on adversarial logits (adds -log(1 - max_{k!=y} p'_k))
/// plus (1/lambda) * mean_i KL_i(nat || adv) * (1 - p_y(x_i)).
template <typename T>
ad::Var<T> mart_loss(const ad::Var<T>& logits_nat, const ad::Var<T>& logits_adv,
                     const std::vector<int64_t>& y, T inv_lambda) {
  if (!logits_nat->value.same_shape(logits_adv->value))
    throw std::invalid_argument("mart_loss: shape mismatch");
  const int64_t n = logits_nat->value.rows(), c = logits_nat->value.cols();
  if (c < 2) throw std::invalid_argument("mart_loss: needs at least two classes");

  auto adv_logp = ad::log_softmax_rows(logits_adv);
  auto ce = ad::neg(ad::mean_all(ad::select_per_row(adv_logp, y)));

  // exclude the true class from the max; probabilities never exceed 1, so a
  // -2 offset removes it from contention
  Tensor<T> y_mask(Shape{n, c});
  for (int64_t i = 0; i < n; ++i) y_mask.at(i, y[static_cast<size_t>(i)]) = T{-2};
  auto p_adv = ad::softmax_rows(logits_adv);
  auto other_max = ad::row_max(ad::add(p_adv, ad::constant(std::move(y_mask))));
  auto one_minus = ad::add_scalar(ad::neg(other_max), T{1});
  // guard log(0) while keeping the gradient path: max(x, 1e-12) as relu
  const T floor = static_cast<T>(1e-12);
  auto guarded = ad::add_scalar(ad::relu(ad::add_scalar(one_minus, -floor)), floor);
  auto margin = ad::neg(ad::mean_all(ad::log_op(guarded)));

  auto p_nat = ad::softmax_rows(logits_nat);
  auto kl_rows = ad::row_sum(
      ad::mul(p_nat, ad::sub(ad::log_softmax_rows(logits_nat), ad::log_softmax_rows(logits_adv))));
  auto weight = ad::add_scalar(ad::neg(ad::select_per_row(p_nat, y)), T{1});
  auto reg = ad::scale(ad::mean_all(ad::mul(kl_rows, weight)), inv_lambda);

  return ad::add(ad::add(ce, margin), reg);
}

/// L2 per the configured variant.
template <typename T>
ad::Var<T> accuracy_loss(const ad::Var<T>& logits_nat, const ad::Var<T>& logits_adv,
                         const std::vector<int64_t>& y, const LossParams<T>& params) {
  return params.l2_variant == L2Variant::trades
             ? trades_loss(logits_nat, logits_adv, y, params.inv_lambda, params.kl_swapped)
             : mart_loss(logits_nat, logits_adv, y, params.inv_lambda);
}

}  // namespace morel::losses
