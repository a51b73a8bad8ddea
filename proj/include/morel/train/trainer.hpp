#pragma once

// Training loop: per-batch adversarial example generation (model frozen),
// dual forward passes, robustness/accuracy losses, conic scalarization, one
// SGD step over model and embedding parameters, milestone LR schedule, and
// best/last checkpointing driven by the per-epoch robust evaluation.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "morel/attacks/attacks.hpp"
#include "morel/data/dataset.hpp"
#include "morel/embedding/embedding.hpp"
#include "morel/eval/evaluation.hpp"
#include "morel/losses/losses.hpp"
#include "morel/nn/models.hpp"
#include "morel/nn/optimizer.hpp"
#include "morel/scalarization/scalarization.hpp"
#include "morel/train/checkpoint.hpp"

namespace morel::train {

enum class Method { morel_t, morel_m, trades, mart, natural };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::morel_t: return "morel-t";
    case Method::morel_m: return "morel-m";
    case Method::trades: return "trades";
    case Method::mart: return "mart";
    case Method::natural: return "natural";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "morel-t") return Method::morel_t;
  if (s == "morel-m") return Method::morel_m;
  if (s == "trades") return Method::trades;
  if (s == "mart") return Method::mart;
  if (s == "natural") return Method::natural;
  throw std::invalid_argument("unknown method '" + s +
                              "' (expected morel-t, morel-m, trades, mart or natural)");
}

inline bool method_uses_embedding(Method m) { return m == Method::morel_t || m == Method::morel_m; }
inline bool method_uses_attack(Method m) { return m != Method::natural; }

struct SgdParams {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

struct TrainConfig {
  int64_t epochs = 100;
  int64_t batch_size = 8;
  SgdParams sgd;
  std::vector<int64_t> lr_milestones = {75, 90};  // 0-based epoch indices
  double lr_factor = 0.01;
  attacks::AttackSpec train_attack;  // defaults set below
  attacks::AttackSpec eval_attack;
  losses::LossParams<double> loss;
  scalarization::ScalarizationParams<double> cs;
  int64_t embed_dim = 128;
  int64_t embed_heads = 2;
  Method method = Method::morel_t;
  uint64_t seed = 0;
  bool augment = false;
  int64_t eval_subsample = 0;           // 0 = evaluate the full set each epoch
  bool attack_bn_running_stats = false; // batch-stat layers during attack forwards
  double val_fraction = 0.0;            // >0: carve validation from the train split

  TrainConfig() {
    train_attack.family = attacks::Family::pgd;
    train_attack.epsilon = 8.0 / 255.0;
    train_attack.step_size = train_attack.epsilon / 4.0;
    train_attack.iterations = 10;
    train_attack.random_start = true;
    train_attack.inner_loss = attacks::InnerLoss::ce;
    eval_attack.family = attacks::Family::pgd;
    eval_attack.epsilon = 8.0 / 255.0;
    eval_attack.step_size = eval_attack.epsilon / 10.0;
    eval_attack.iterations = 20;
    eval_attack.random_start = true;
    eval_attack.inner_loss = attacks::InnerLoss::ce;
  }

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
    if (!(sgd.lr > 0)) throw std::invalid_argument("train.lr must be positive");
    if (!(lr_factor > 0)) throw std::invalid_argument("train.lr_factor must be positive");
    for (size_t i = 0; i < lr_milestones.size(); ++i) {
      if (lr_milestones[i] < 0 || lr_milestones[i] >= epochs)
        throw std::invalid_argument("train.lr_milestones must lie in [0, epochs)");
      if (i > 0 && lr_milestones[i] <= lr_milestones[i - 1])
        throw std::invalid_argument("train.lr_milestones must be strictly increasing");
    }
    if (method_uses_attack(method)) train_attack.validate();
    eval_attack.validate();
    if (method_uses_embedding(method)) {
      losses::LossParams<double> lp = loss;
      lp.validate();
      cs.validate();
      if (embed_dim <= 0 || embed_heads <= 0 || embed_dim % embed_heads != 0)
        throw std::invalid_argument("embedding.dim must be a positive multiple of embedding.heads");
    }
    if (val_fraction < 0 || val_fraction >= 1)
      throw std::invalid_argument("train.val_fraction must lie in [0, 1)");
  }
};

/// lr(epoch) = initial * factor^(milestones passed); milestones are 0-based
/// epoch indices, so with {75, 90} the drop applies from epoch index 75 on.
inline double lr_at_epoch(int64_t epoch, const TrainConfig& cfg) {
  double lr = cfg.sgd.lr;
  for (int64_t m : cfg.lr_milestones)
    if (epoch >= m) lr *= cfg.lr_factor;
  return lr;
}

struct StepMetrics {
  double l1 = 0.0;
  double l2 = 0.0;
  double scalarized = 0.0;
};

struct HistoryRow {
  std::string kind;  // "step" or "epoch"
  int64_t epoch = 0;
  int64_t step = -1;
  double l1 = 0.0, l2 = 0.0, scalarized = 0.0, lr = 0.0;
  double clean_acc = 0.0, robust_acc = 0.0;
  int is_best = 0;
  int64_t eval_count = 0;
};

inline std::string history_header() {
  return "kind,epoch,step,l1,l2,scalarized,lr,clean_acc,robust_acc,is_best,eval_count";
}

inline std::string history_csv(const HistoryRow& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.kind << ',' << r.epoch << ',' << r.step << ',' << r.l1 << ',' << r.l2 << ','
     << r.scalarized << ',' << r.lr << ',' << r.clean_acc << ',' << r.robust_acc << ','
     << r.is_best << ',' << r.eval_count;
  return os.str();
}

struct TrainResult {
  double best_metric = 0.0;
  int64_t best_epoch = -1;
  std::string best_path;
  std::string last_path;
  std::string history_path;
  std::vector<HistoryRow> history;
};

template <typename T>
class Trainer {
 public:
  Trainer(TrainConfig cfg, nn::ModelSpec model_spec, nn::Classifier<T>& model,
          std::string config_echo = "")
      : cfg_(std::move(cfg)), model_spec_(std::move(model_spec)), model_(model),
        config_echo_(std::move(config_echo)) {
    cfg_.validate();
    model_.set_attack_uses_running_stats(cfg_.attack_bn_running_stats);
    if (method_uses_embedding(cfg_.method)) {
      embedding::EmbeddingConfig ec{model_.feature_dim(), cfg_.embed_dim, cfg_.embed_heads};
      Rng init = Rng(cfg_.seed).fork("embedding-init");
      space_ = std::make_unique<embedding::EmbeddingSpace<T>>(ec, init);
    }
    auto params = model_.parameters();
    if (space_) {
      auto ep = space_->parameters();
      params.insert(params.end(), ep.begin(), ep.end());
    }
    typename nn::Sgd<T>::Hparams hp;
    hp.lr = static_cast<T>(cfg_.sgd.lr);
    hp.momentum = static_cast<T>(cfg_.sgd.momentum);
    hp.weight_decay = static_cast<T>(cfg_.sgd.weight_decay);
    opt_ = std::make_unique<nn::Sgd<T>>(std::move(params), hp);
  }

  embedding::EmbeddingSpace<T>* space() { return space_.get(); }
  nn::Sgd<T>& optimizer() { return *opt_; }
  const TrainConfig& config() const { return cfg_; }

  /// One optimization step on one batch. Order: adversarial generation with
  /// frozen parameters, dual forward, embedding path, losses, scalarization,
  /// optimizer step.
  StepMetrics train_step(const Tensor<T>& images, const std::vector<int64_t>& labels,
                         Rng& attack_rng, int64_t epoch, int64_t step) {
    losses::LossParams<T> lp = loss_params();
    scalarization::ScalarizationParams<T> cs = cs_params();

    ad::Var<T> objective;
    StepMetrics metrics;
    auto x_nat = ad::leaf(images, false);

    if (cfg_.method == Method::natural) {
      auto logits = model_.forward_graph(x_nat, nn::NetMode::train);
      objective = losses::cross_entropy(logits, labels);
      metrics.l2 = static_cast<double>(objective->value[0]);
      metrics.scalarized = metrics.l2;
    } else {
      Tensor<T> adv = attacks::run_attack(model_, images, labels, cfg_.train_attack, attack_rng);
      auto x_adv = ad::leaf(adv, false);
      auto split = nn::split_model(model_);
      auto z_nat = split.encode(x_nat, nn::NetMode::train);
      auto z_adv = split.encode(x_adv, nn::NetMode::train);
      auto logits_nat = split.classify(z_nat);
      auto logits_adv = split.classify(z_adv);
      auto l2 = losses::accuracy_loss(logits_nat, logits_adv, labels, lp);
      if (space_) {
        auto groups_nat = space_->embed_and_attend(z_nat, labels);
        auto groups_adv = space_->embed_and_attend(z_adv, labels);
        auto [t_nat, t_adv] = embedding::assemble_normalize(groups_nat, groups_adv);
        auto l1 = losses::robustness_loss(t_nat, t_adv, labels, lp);
        objective = scalarization::conic_scalarize(l1, l2, cs);
        metrics.l1 = static_cast<double>(l1->value[0]);
      } else {
        objective = l2;
      }
      metrics.l2 = static_cast<double>(l2->value[0]);
      metrics.scalarized = static_cast<double>(objective->value[0]);
    }

    if (!std::isfinite(metrics.l1) || !std::isfinite(metrics.l2) || !std::isfinite(metrics.scalarized))
      throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                               std::to_string(step) + " (L1=" + std::to_string(metrics.l1) +
                               ", L2=" + std::to_string(metrics.l2) +
                               ", scalarized=" + std::to_string(metrics.scalarized) + ")");

    if (space_ && !scalarization::reference_point_ok(static_cast<T>(metrics.l1),
                                                     static_cast<T>(metrics.l2), cs_params()) &&
        !reference_warned_this_epoch_) {
      std::cerr << "[train] note: reference point not strictly below losses at epoch " << epoch
                << " (L1=" << metrics.l1 << ", L2=" << metrics.l2 << ")\n";
      reference_warned_this_epoch_ = true;
    }

    opt_->zero_grad();
    ad::backward(objective);
    opt_->step();
    return metrics;
  }

  /// Per-epoch validation pass used for best-model selection; deterministic
  /// given the run seed (fixed subsample, fixed attack stream).
  std::pair<double, double> epoch_eval(const data::LabeledImages& val) {
    const data::LabeledImages* eval_set = &val;
    data::LabeledImages holder;
    if (cfg_.eval_subsample > 0 && cfg_.eval_subsample < val.size()) {
      holder = data::subsample(val, cfg_.eval_subsample, Rng(cfg_.seed).fork("eval-subsample").seed());
      eval_set = &holder;
    }
    const double clean = evaluation::accuracy(model_, *eval_set);
    const double robust = evaluation::robust_accuracy(model_, *eval_set, cfg_.eval_attack,
                                                      Rng(cfg_.seed).fork("eval-attack"));
    return {clean, robust};
  }

  /// Runs epochs [start_epoch, cfg.epochs), evaluating after each epoch and
  /// checkpointing best (strict improvement; ties keep the earlier epoch)
  /// and last models.
  TrainResult fit(const data::LabeledImages& train_data, const data::LabeledImages& val_data,
                  const std::string& out_dir, int64_t start_epoch = 0,
                  double initial_best = -std::numeric_limits<double>::infinity()) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    TrainResult result;
    result.best_metric = initial_best;
    result.best_path = (fs::path(out_dir) / "best.ckpt").string();
    result.last_path = (fs::path(out_dir) / "last.ckpt").string();
    result.history_path = (fs::path(out_dir) / "history.csv").string();

    const data::LabeledImages* train_ptr = &train_data;
    const data::LabeledImages* val_ptr = &val_data;
    data::LabeledImages train_holder, val_holder;
    if (cfg_.val_fraction > 0) {
      split_train_val(train_data, train_holder, val_holder);
      train_ptr = &train_holder;
      val_ptr = &val_holder;
    }

    std::ofstream hist(result.history_path,
                       start_epoch == 0 ? std::ios::trunc : std::ios::app);
    if (!hist) throw std::runtime_error("cannot write history file: " + result.history_path);
    if (start_epoch == 0) hist << history_header() << "\n";

    Rng root(cfg_.seed);
    for (int64_t epoch = start_epoch; epoch < cfg_.epochs; ++epoch) {
      reference_warned_this_epoch_ = false;
      opt_->set_lr(static_cast<T>(lr_at_epoch(epoch, cfg_)));
      data::BatchPlan plan{cfg_.batch_size, true, root.fork("data", static_cast<uint64_t>(epoch)).seed()};
      auto batches = data::make_batches(*train_ptr, plan);
      Rng attack_rng = root.fork("train-attack", static_cast<uint64_t>(epoch));
      Rng augment_rng = root.fork("augment", static_cast<uint64_t>(epoch));

      double sum_l1 = 0, sum_l2 = 0, sum_scalarized = 0;
      for (size_t s = 0; s < batches.size(); ++s) {
        Tensor<float> images = cfg_.augment ? data::augment_crop_flip(batches[s].images, augment_rng)
                                            : batches[s].images;
        StepMetrics m = train_step(images.template cast<T>(), batches[s].labels, attack_rng, epoch,
                                   static_cast<int64_t>(s));
        sum_l1 += m.l1;
        sum_l2 += m.l2;
        sum_scalarized += m.scalarized;
        HistoryRow row;
        row.kind = "step";
        row.epoch = epoch;
        row.step = static_cast<int64_t>(s);
        row.l1 = m.l1;
        row.l2 = m.l2;
        row.scalarized = m.scalarized;
        row.lr = lr_at_epoch(epoch, cfg_);
        result.history.push_back(row);
        hist << history_csv(row) << "\n";
      }

      auto [clean, robust] = epoch_eval(*val_ptr);
      const bool is_best = robust > result.best_metric;
      if (is_best) {
        result.best_metric = robust;
        result.best_epoch = epoch;
        save(result.best_path, "best", epoch, result.best_metric);
      }
      const double steps = static_cast<double>(batches.size());
      HistoryRow row;
      row.kind = "epoch";
      row.epoch = epoch;
      row.l1 = sum_l1 / steps;
      row.l2 = sum_l2 / steps;
      row.scalarized = sum_scalarized / steps;
      row.lr = lr_at_epoch(epoch, cfg_);
      row.clean_acc = clean;
      row.robust_acc = robust;
      row.is_best = is_best ? 1 : 0;
      row.eval_count = cfg_.eval_subsample > 0 ? std::min<int64_t>(cfg_.eval_subsample, val_ptr->size())
                                               : val_ptr->size();
      result.history.push_back(row);
      hist << history_csv(row) << "\n";
      hist.flush();
      std::cerr << "[train] epoch " << epoch << " done: clean " << clean << "%, robust " << robust
                << "%" << (is_best ? " (best)" : "") << "\n";
      save(result.last_path, "last", epoch, result.best_metric);
    }
    return result;
  }

  void save(const std::string& path, const std::string& kind, int64_t epoch, double best_metric) {
    CheckpointInfo info;
    info.kind = kind;
    info.epoch = epoch;
    info.best_metric = best_metric;
    info.seed = cfg_.seed;
    info.method = method_name(cfg_.method);
    info.config_echo = config_echo_;
    info.model_spec = model_spec_;
    if (space_) info.embedding_config = space_->config();
    save_checkpoint<T>(path, info, model_, space_.get(), opt_.get());
  }

  /// Restores model/embedding/optimizer state saved by save(); returns the
  /// stored (epoch, best_metric) so callers can resume.
  std::pair<int64_t, double> restore(const std::string& path) {
    CheckpointReader<T> r(path);
    CheckpointInfo info = r.info();
    for (const auto& [name, p] : model_.named_parameters()) r.read_into("model." + name, p->value);
    for (const auto& [name, buf] : model_.named_buffers()) r.read_into("model_buffer." + name, *buf);
    if (space_)
      for (const auto& [name, p] : space_->named_parameters())
        r.read_into("embedding." + name, p->value);
    if (info.has_optimizer) load_optimizer_state<T>(path, model_, space_.get(), *opt_);
    return {info.epoch, info.best_metric};
  }

  losses::LossParams<T> loss_params() const {
    losses::LossParams<T> lp;
    lp.alpha = static_cast<T>(cfg_.loss.alpha);
    lp.tau = static_cast<T>(cfg_.loss.tau);
    lp.inv_lambda = static_cast<T>(cfg_.loss.inv_lambda);
    lp.l2_variant = cfg_.loss.l2_variant;
    lp.contrastive_inputs = cfg_.loss.contrastive_inputs;
    lp.kl_swapped = cfg_.loss.kl_swapped;
    return lp;
  }

  scalarization::ScalarizationParams<T> cs_params() const {
    scalarization::ScalarizationParams<T> p;
    p.k1 = static_cast<T>(cfg_.cs.k1);
    p.k2 = static_cast<T>(cfg_.cs.k2);
    p.gamma = static_cast<T>(cfg_.cs.gamma);
    p.a1 = static_cast<T>(cfg_.cs.a1);
    p.a2 = static_cast<T>(cfg_.cs.a2);
    p.abs_mode = cfg_.cs.abs_mode;
    return p;
  }

 private:
  void split_train_val(const data::LabeledImages& full, data::LabeledImages& train_out,
                       data::LabeledImages& val_out) {
    const int64_t n = full.size();
    const int64_t n_val = std::max<int64_t>(1, static_cast<int64_t>(cfg_.val_fraction * n));
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = Rng(cfg_.seed).fork("val-split");
    rng.shuffle(idx);
    auto take = [&](int64_t from, int64_t count) {
      const int64_t d = full.images.numel() / n;
      data::LabeledImages out;
      out.images = Tensor<float>(Shape{count, full.images.dim(1), full.images.dim(2), full.images.dim(3)});
      out.labels.resize(static_cast<size_t>(count));
      out.class_count = full.class_count;
      for (int64_t i = 0; i < count; ++i) {
        const int64_t src = idx[static_cast<size_t>(from + i)];
        std::copy_n(full.images.data() + src * d, d, out.images.data() + i * d);
        out.labels[static_cast<size_t>(i)] = full.labels[static_cast<size_t>(src)];
      }
      return out;
    };
    val_out = take(0, n_val);
    train_out = take(n_val, n - n_val);
  }

  TrainConfig cfg_;
  nn::ModelSpec model_spec_;
  nn::Classifier<T>& model_;
  std::string config_echo_;
  std::unique_ptr<embedding::EmbeddingSpace<T>> space_;
  std::unique_ptr<nn::Sgd<T>> opt_;
  bool reference_warned_this_epoch_ = false;
};

}  // namespace morel::train
