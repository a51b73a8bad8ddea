#pragma once

// Robustness measurement against a frozen model: clean accuracy, white-box
// per-attack accuracy, transfer-based black-box accuracy and the Avg-Robust
// aggregate (arithmetic mean over the evaluated attacks). Evaluation never
// mutates model state.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "morel/attacks/attacks.hpp"
#include "morel/data/dataset.hpp"
#include "morel/nn/models.hpp"

namespace morel::evaluation {

/// Machine-readable result mirroring the white-box/black-box result tables.
struct RobustnessReport {
  std::string model_id;
  std::string checkpoint_kind;  // best | last | export
  std::string dataset;
  std::string mode = "whitebox";  // whitebox | blackbox
  std::string surrogate_id;       // blackbox only
  double clean_acc = 0.0;         // percent
  std::vector<std::pair<std::string, double>> per_attack;  // percent, suite order
  double avg_robust = 0.0;        // percent
  std::vector<std::pair<std::string, attacks::AttackSpec>> specs;  // echoed
  int64_t sample_count = 0;
  uint64_t seed = 0;
  std::string timestamp;

  double recompute_avg() const {
    if (per_attack.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [name, acc] : per_attack) s += acc;
    return s / static_cast<double>(per_attack.size());
  }
};

template <typename T>
std::vector<int64_t> predict(nn::Classifier<T>& model, const Tensor<T>& images) {
  ad::ParamFreeze<T> freeze(model.parameters());
  auto logits = model.forward_graph(ad::leaf(images, false), nn::NetMode::eval);
  const int64_t n = logits->value.rows(), c = logits->value.cols();
  std::vector<int64_t> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const T* row = logits->value.data() + i * c;
    int64_t best = 0;
    for (int64_t j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

/// Fraction of argmax(logits) == label, in percent.
template <typename T>
double accuracy(nn::Classifier<T>& model, const data::LabeledImages& dataset,
                int64_t batch_size = 128) {
  int64_t correct = 0;
  for (const auto& batch : data::make_batches(dataset, {batch_size, false, 0})) {
    auto preds = predict(model, batch.images.template cast<T>());
    for (size_t i = 0; i < preds.size(); ++i)
      if (preds[i] == batch.labels[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(dataset.size());
}

/// White-box robust accuracy: adversarial examples generated against this
/// model per spec, accuracy measured on them. A null attack (epsilon = 0)
/// reproduces clean accuracy bitwise.
template <typename T>
double robust_accuracy(nn::Classifier<T>& model, const data::LabeledImages& dataset,
                       const attacks::AttackSpec& spec, Rng rng, int64_t batch_size = 128) {
  spec.validate();
  int64_t correct = 0;
  for (const auto& batch : data::make_batches(dataset, {batch_size, false, 0})) {
    Tensor<T> x = batch.images.template cast<T>();
    Tensor<T> adv = attacks::run_attack(model, x, batch.labels, spec, rng);
    auto preds = predict(model, adv);
    for (size_t i = 0; i < preds.size(); ++i)
      if (preds[i] == batch.labels[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(dataset.size());
}

/// Black-box transfer: examples generated against the surrogate, evaluated
/// on the target. Rejects a surrogate whose parameters are identical to the
/// target's (that would be white-box in disguise). Differing architectures
/// are allowed.
template <typename T>
double transfer_accuracy(nn::Classifier<T>& target, nn::Classifier<T>& surrogate,
                         const data::LabeledImages& dataset, const attacks::AttackSpec& spec,
                         Rng rng, int64_t batch_size = 128) {
  spec.validate();
  auto tp = target.named_parameters();
  auto sp = surrogate.named_parameters();
  if (tp.size() == sp.size()) {
    bool identical = true;
    for (size_t i = 0; i < tp.size() && identical; ++i) {
      const auto& a = tp[i].second->value;
      const auto& b = sp[i].second->value;
      identical = a.same_shape(b) && kern::table<T>().max_abs_diff(a.data(), b.data(), a.numel()) == T{0};
    }
    if (identical)
      throw std::invalid_argument(
          "black-box evaluation: surrogate shares parameter identity with the target");
  }
  int64_t correct = 0;
  for (const auto& batch : data::make_batches(dataset, {batch_size, false, 0})) {
    Tensor<T> x = batch.images.template cast<T>();
    Tensor<T> adv = attacks::run_attack(surrogate, x, batch.labels, spec, rng);
    auto preds = predict(target, adv);
    for (size_t i = 0; i < preds.size(); ++i)
      if (preds[i] == batch.labels[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(dataset.size());
}

template <typename T>
std::vector<std::pair<std::string, double>> black_box_eval(
    nn::Classifier<T>& target, nn::Classifier<T>& surrogate, const data::LabeledImages& dataset,
    const std::vector<std::pair<std::string, attacks::AttackSpec>>& suite, const Rng& rng,
    int64_t batch_size = 128) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [name, spec] : suite)
    out.emplace_back(name, transfer_accuracy(target, surrogate, dataset, spec, rng.fork(name), batch_size));
  return out;
}

/// The white-box suite from the evaluation protocol: FGSM, PGD-20, PGD-100
/// (step eps/10) and the margin attack, all bounded by the same epsilon.
inline std::vector<std::pair<std::string, attacks::AttackSpec>> standard_suite(double epsilon) {
  std::vector<std::pair<std::string, attacks::AttackSpec>> suite;
  attacks::AttackSpec fgsm;
  fgsm.family = attacks::Family::fgsm;
  fgsm.epsilon = epsilon;
  suite.emplace_back("fgsm", fgsm);
  for (int64_t iters : {int64_t{20}, int64_t{100}}) {
    attacks::AttackSpec pgd;
    pgd.family = attacks::Family::pgd;
    pgd.epsilon = epsilon;
    pgd.step_size = epsilon / 10.0;
    pgd.iterations = iters;
    pgd.random_start = true;
    pgd.inner_loss = attacks::InnerLoss::ce;
    suite.emplace_back("pgd-" + std::to_string(iters), pgd);
  }
  attacks::AttackSpec cw;
  cw.family = attacks::Family::cw_linf;
  cw.epsilon = epsilon;
  cw.iterations = 10;
  cw.lr = 1e-2;
  cw.confidence = 1.0;
  cw.c_const = 15.0;
  suite.emplace_back("cw-linf", cw);
  return suite;
}

inline std::vector<std::pair<std::string, attacks::AttackSpec>> suite_from_names(
    const std::vector<std::string>& names, double epsilon) {
  auto all = standard_suite(epsilon);
  std::vector<std::pair<std::string, attacks::AttackSpec>> out;
  for (const auto& n : names) {
    std::string key = n;
    if (key == "pgd20") key = "pgd-20";
    if (key == "pgd100") key = "pgd-100";
    if (key == "cw" || key == "cw_linf") key = "cw-linf";
    bool found = false;
    if (key == "none") {  // null attack: epsilon 0 (clean accuracy check)
      attacks::AttackSpec null_spec;
      null_spec.family = attacks::Family::fgsm;
      null_spec.epsilon = 0.0;
      out.emplace_back("none", null_spec);
      continue;
    }
    for (const auto& [name, spec] : all)
      if (name == key) {
        out.emplace_back(name, spec);
        found = true;
        break;
      }
    if (!found)
      throw std::invalid_argument("unknown attack suite entry: '" + n +
                                  "' (expected fgsm, pgd20, pgd100, cw or none)");
  }
  return out;
}

/// Runs clean accuracy plus every attack in the suite and aggregates.
template <typename T>
RobustnessReport build_report(const std::string& model_id, const std::string& checkpoint_kind,
                              const std::string& dataset_id, nn::Classifier<T>& model,
                              const data::LabeledImages& dataset,
                              const std::vector<std::pair<std::string, attacks::AttackSpec>>& suite,
                              const std::string& mode, nn::Classifier<T>* surrogate,
                              const std::string& surrogate_id, uint64_t seed,
                              int64_t batch_size = 128) {
  if (suite.empty()) throw std::invalid_argument("build_report: attack suite is empty");
  if (mode != "whitebox" && mode != "blackbox")
    throw std::invalid_argument("build_report: mode must be whitebox or blackbox");
  if (mode == "blackbox" && surrogate == nullptr)
    throw std::invalid_argument("build_report: blackbox mode requires a surrogate");

  RobustnessReport report;
  report.model_id = model_id;
  report.checkpoint_kind = checkpoint_kind;
  report.dataset = dataset_id;
  report.mode = mode;
  report.surrogate_id = surrogate ? surrogate_id : "";
  report.sample_count = dataset.size();
  report.seed = seed;
  report.specs = suite;
  report.clean_acc = accuracy(model, dataset, batch_size);
  Rng root(seed);
  for (const auto& [name, spec] : suite) {
    const double acc =
        mode == "whitebox"
            ? robust_accuracy(model, dataset, spec, root.fork(name), batch_size)
            : transfer_accuracy(model, *surrogate, dataset, spec, root.fork(name), batch_size);
    report.per_attack.emplace_back(name, acc);
  }
  report.avg_robust = report.recompute_avg();
  return report;
}

}  // namespace morel::evaluation
