#pragma once

// Gradient-based l-infinity attacks in raw pixel space [0,1]. Every output
// satisfies the ball and domain invariants; with MOREL_CHECK_INVARIANTS
// defined they are asserted on each call. Attack generation freezes model
// parameters so gradients flow only to the input, and never mutates model
// state (batch statistics run frozen during attack forwards by default).

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "morel/core/rng.hpp"
#include "morel/data/dataset.hpp"
#include "morel/losses/losses.hpp"
#include "morel/nn/models.hpp"

namespace morel::attacks {

enum class Family { fgsm, pgd, cw_linf };
enum class InnerLoss { ce, kl, margin };

struct AttackSpec {
  Family family = Family::pgd;
  double epsilon = 8.0 / 255.0;   // pixel units
  double step_size = 2.0 / 255.0;
  int64_t iterations = 10;        // ignored by fgsm (single step)
  bool random_start = false;
  InnerLoss inner_loss = InnerLoss::ce;
  double confidence = 1.0;  // margin kappa
  double c_const = 15.0;    // margin loss weight
  double lr = 1e-2;         // margin attack step size

  void validate() const {
    if (epsilon < 0) throw std::invalid_argument("attack.epsilon must be >= 0");
    if (iterations < 0) throw std::invalid_argument("attack.iterations must be >= 0");
    if (step_size <= 0) throw std::invalid_argument("attack.step_size must be > 0");
    if (confidence < 0) throw std::invalid_argument("attack.confidence must be >= 0");
    if (c_const <= 0) throw std::invalid_argument("attack.c_const must be > 0");
    if (lr <= 0) throw std::invalid_argument("attack.lr must be > 0");
  }

  std::string display_name() const {
    switch (family) {
      case Family::fgsm:
        return "fgsm";
      case Family::pgd:
        return "pgd-" + std::to_string(iterations);
      case Family::cw_linf:
        return "cw-linf";
    }
    return "?";
  }
};

inline std::string to_string(Family f) {
  switch (f) {
    case Family::fgsm: return "fgsm";
    case Family::pgd: return "pgd";
    case Family::cw_linf: return "cw_linf";
  }
  return "?";
}

inline Family family_from_string(const std::string& s) {
  if (s == "fgsm") return Family::fgsm;
  if (s == "pgd") return Family::pgd;
  if (s == "cw_linf") return Family::cw_linf;
  throw std::invalid_argument("unknown attack family '" + s + "' (expected fgsm, pgd or cw_linf)");
}

inline std::string to_string(InnerLoss l) {
  switch (l) {
    case InnerLoss::ce: return "ce";
    case InnerLoss::kl: return "kl";
    case InnerLoss::margin: return "margin";
  }
  return "?";
}

inline InnerLoss inner_loss_from_string(const std::string& s) {
  if (s == "ce") return InnerLoss::ce;
  if (s == "kl") return InnerLoss::kl;
  if (s == "margin") return InnerLoss::margin;
  throw std::invalid_argument("unknown inner loss '" + s + "' (expected ce, kl or margin)");
}

/// Clips x_adv into the eps-ball around x_ref, then into [0,1]; idempotent.
template <typename T>
Tensor<T> project_linf(const Tensor<T>& x_adv, const Tensor<T>& x_ref, T epsilon) {
  if (!x_adv.same_shape(x_ref))
    throw std::invalid_argument("project_linf: shape mismatch " + shape_str(x_adv.shape()) +
                                " vs " + shape_str(x_ref.shape()));
  Tensor<T> out(x_adv.shape());
  kern::table<T>().project_box(x_adv.data(), x_ref.data(), epsilon, T{0}, T{1}, out.data(),
                               out.numel());
  return out;
}

namespace detail {

template <typename T>
void check_attack_output(const Tensor<T>& adv, const Tensor<T>& x, T epsilon) {
#if defined(MOREL_CHECK_INVARIANTS)
  const T slack = static_cast<T>(1e-6);
  if (kern::table<T>().max_abs_diff(adv.data(), x.data(), adv.numel()) > epsilon + slack)
    throw std::logic_error("attack output left the epsilon ball");
  for (int64_t i = 0; i < adv.numel(); ++i)
    if (!(adv[i] >= T{0} && adv[i] <= T{1}))
      throw std::logic_error("attack output left the pixel domain");
#else
  (void)adv;
  (void)x;
  (void)epsilon;
#endif
}

}  // namespace detail

/// Margin ("CW") loss: mean_i max(z_y - max_{k != y} z_k + kappa, 0).
template <typename T>
ad::Var<T> margin_loss(const ad::Var<T>& logits, const std::vector<int64_t>& y, T kappa) {
  const int64_t n = logits->value.rows(), c = logits->value.cols();
  if (c < 2) throw std::invalid_argument("margin_loss: needs at least two classes");
  Tensor<T> y_mask(Shape{n, c});
  const T kBig = static_cast<T>(1e30);
  for (int64_t i = 0; i < n; ++i) y_mask.at(i, y[static_cast<size_t>(i)]) = -kBig;
  auto other_max = ad::row_max(ad::add(logits, ad::constant(std::move(y_mask))));
  auto z_y = ad::select_per_row(logits, y);
  return ad::mean_all(ad::relu(ad::add_scalar(ad::sub(z_y, other_max), kappa)));
}

/// Gradient of a scalar loss of the model output w.r.t. the input batch.
/// Parameters are frozen for the duration; the loss builder receives the
/// logits Var.
template <typename T, typename LossBuilder>
Tensor<T> input_gradient(nn::Classifier<T>& model, const Tensor<T>& x, LossBuilder&& make_loss,
                         nn::NetMode mode = nn::NetMode::attack) {
  ad::ParamFreeze<T> freeze(model.parameters());
  auto input = ad::leaf(x, true);
  auto loss = make_loss(model.forward_graph(input, mode));
  ad::backward(loss);
  if (input->grad.empty()) return Tensor<T>(x.shape());
  return std::move(input->grad);
}

namespace detail {

// Loss the attacker ASCENDS. For `margin` that is the negated margin (the
// attacker shrinks the true-class margin).
template <typename T>
struct AscentLoss {
  InnerLoss kind;
  const std::vector<int64_t>* labels;
  T kappa{1};
  // kl mode: distributions at the natural point, treated as constants
  Tensor<T> nat_probs;
  Tensor<T> nat_logp;

  ad::Var<T> operator()(const ad::Var<T>& logits) const {
    switch (kind) {
      case InnerLoss::ce:
        return losses::cross_entropy(logits, *labels);
      case InnerLoss::kl: {
        auto diff = ad::sub(ad::constant(nat_logp), ad::log_softmax_rows(logits));
        return ad::mean_all(ad::row_sum(ad::mul(ad::constant(nat_probs), diff)));
      }
      case InnerLoss::margin:
        return ad::neg(margin_loss(logits, *labels, kappa));
    }
    throw std::logic_error("unknown inner loss");
  }
};

template <typename T>
AscentLoss<T> make_ascent_loss(nn::Classifier<T>& model, const Tensor<T>& x_nat,
                               const std::vector<int64_t>& y, InnerLoss kind, T kappa) {
  AscentLoss<T> loss{kind, &y, kappa, {}, {}};
  if (kind == InnerLoss::kl) {
    ad::ParamFreeze<T> freeze(model.parameters());
    auto logits = model.forward_graph(ad::leaf(x_nat, false), nn::NetMode::attack);
    loss.nat_probs = ad::softmax_rows(logits)->value;
    loss.nat_logp = ad::log_softmax_rows(logits)->value;
  }
  return loss;
}

}  // namespace detail

/// Single signed-gradient step of size epsilon; sign(0) = 0.
template <typename T>
Tensor<T> fgsm(nn::Classifier<T>& model, const Tensor<T>& x, const std::vector<int64_t>& y,
               T epsilon, InnerLoss inner = InnerLoss::ce, T kappa = T{1}) {
  auto loss = detail::make_ascent_loss(model, x, y, inner, kappa);
  Tensor<T> grad = input_gradient(model, x, loss);
  Tensor<T> stepped(x.shape());
  kern::table<T>().sign_step(x.data(), grad.data(), epsilon, stepped.data(), x.numel());
  Tensor<T> adv = data::clamp_to_domain(stepped);
  detail::check_attack_output(adv, x, epsilon);
  return adv;
}

/// Iterated signed-gradient ascent with projection after every step.
template <typename T>
Tensor<T> pgd(nn::Classifier<T>& model, const Tensor<T>& x, const std::vector<int64_t>& y,
              const AttackSpec& spec, Rng& rng) {
  if (spec.family != Family::pgd) throw std::invalid_argument("pgd: spec.family must be pgd");
  spec.validate();
  const T eps = static_cast<T>(spec.epsilon);
  const T eta = static_cast<T>(spec.step_size);
  auto loss = detail::make_ascent_loss(model, x, y, spec.inner_loss, static_cast<T>(spec.confidence));

  Tensor<T> adv = x;
  if (spec.random_start) {
    for (int64_t i = 0; i < adv.numel(); ++i)
      adv[i] += static_cast<T>(rng.uniform(-spec.epsilon, spec.epsilon));
    adv = project_linf(adv, x, eps);
  }
  for (int64_t it = 0; it < spec.iterations; ++it) {
    Tensor<T> grad = input_gradient(model, adv, loss);
    Tensor<T> stepped(adv.shape());
    kern::table<T>().sign_step(adv.data(), grad.data(), eta, stepped.data(), adv.numel());
    adv = project_linf(stepped, x, eps);
  }
  detail::check_attack_output(adv, x, eps);
  return adv;
}

/// Projected signed descent on the margin loss weighted by c_const;
/// non-targeted, step size spec.lr, no random start.
template <typename T>
Tensor<T> cw_linf(nn::Classifier<T>& model, const Tensor<T>& x, const std::vector<int64_t>& y,
                  const AttackSpec& spec) {
  if (spec.family != Family::cw_linf) throw std::invalid_argument("cw_linf: spec.family must be cw_linf");
  spec.validate();
  const T eps = static_cast<T>(spec.epsilon);
  const T kappa = static_cast<T>(spec.confidence);
  const T c = static_cast<T>(spec.c_const);

  Tensor<T> adv = x;
  for (int64_t it = 0; it < spec.iterations; ++it) {
    Tensor<T> grad = input_gradient(model, adv, [&](const ad::Var<T>& logits) {
      return ad::scale(margin_loss(logits, y, kappa), c);
    });
    Tensor<T> stepped(adv.shape());
    kern::table<T>().sign_step(adv.data(), grad.data(), -static_cast<T>(spec.lr), stepped.data(),
                               adv.numel());
    adv = project_linf(stepped, x, eps);
  }
  detail::check_attack_output(adv, x, eps);
  return adv;
}

template <typename T>
Tensor<T> run_attack(nn::Classifier<T>& model, const Tensor<T>& x, const std::vector<int64_t>& y,
                     const AttackSpec& spec, Rng& rng) {
  switch (spec.family) {
    case Family::fgsm:
      return fgsm(model, x, y, static_cast<T>(spec.epsilon), spec.inner_loss,
                  static_cast<T>(spec.confidence));
    case Family::pgd:
      return pgd(model, x, y, spec, rng);
    case Family::cw_linf:
      return cw_linf(model, x, y, spec);
  }
  throw std::logic_error("unknown attack family");
}

/// Value of the attack's inner loss at a given point (property tests).
template <typename T>
T inner_loss_value(nn::Classifier<T>& model, const Tensor<T>& x_nat, const Tensor<T>& x_at,
                   const std::vector<int64_t>& y, InnerLoss inner, T kappa = T{1}) {
  auto loss = detail::make_ascent_loss(model, x_nat, y, inner, kappa);
  ad::ParamFreeze<T> freeze(model.parameters());
  auto logits = model.forward_graph(ad::leaf(x_at, false), nn::NetMode::attack);
  return loss(logits)->value[0];
}

}  // namespace morel::attacks
