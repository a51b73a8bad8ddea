#pragma once

// Classifier models with an encoder/head split: the head is the final affine
// layer, the encoder is everything before it, and forward is exactly
// head(encoder(x)). Training-time losses act on the encoder features; the
// head alone maps features to logits.

#include <array>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "morel/nn/layers.hpp"

namespace morel::nn {

/// Which pass a forward graph serves. Batch-statistics layers use batch
/// stats in `train` (and update running stats), batch stats without updates
/// in `attack` by default (configurable to running stats), and running
/// stats in `eval`.
enum class NetMode { train, attack, eval };

template <typename T>
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual ad::Var<T> encoder_graph(const ad::Var<T>& x, NetMode mode) = 0;
  virtual ad::Var<T> forward_graph(const ad::Var<T>& x, NetMode mode) = 0;

  /// The terminal affine layer, or null when the model has no identifiable
  /// one (split_model then fails).
  virtual Linear<T>* final_affine() = 0;

  virtual int64_t feature_dim() const = 0;
  virtual int64_t class_count() const = 0;
  virtual Shape input_shape() const = 0;  // per-sample

  virtual std::vector<std::pair<std::string, ad::Var<T>>> named_parameters() const = 0;
  virtual std::vector<std::pair<std::string, Tensor<T>*>> named_buffers() { return {}; }

  std::vector<ad::Var<T>> parameters() const {
    std::vector<ad::Var<T>> out;
    for (auto& [name, p] : named_parameters()) out.push_back(p);
    return out;
  }

  /// When set, attack-time forwards use running statistics instead of
  /// frozen batch statistics.
  void set_attack_uses_running_stats(bool v) { attack_running_stats_ = v; }
  bool attack_uses_running_stats() const { return attack_running_stats_; }

 protected:
  ad::BnMode bn_mode(NetMode m) const {
    switch (m) {
      case NetMode::train:
        return ad::BnMode::train_update;
      case NetMode::attack:
        return attack_running_stats_ ? ad::BnMode::eval : ad::BnMode::train_frozen;
      case NetMode::eval:
        return ad::BnMode::eval;
    }
    return ad::BnMode::eval;
  }

 private:
  bool attack_running_stats_ = false;
};

/// (g, h) view of a classifier. h(g(x)) reproduces the model forward exactly
/// because forward is defined as that composition.
template <typename T>
struct ModelSplit {
  Classifier<T>* model = nullptr;
  Linear<T>* head = nullptr;

  ad::Var<T> encode(const ad::Var<T>& x, NetMode mode) const { return model->encoder_graph(x, mode); }
  ad::Var<T> classify(const ad::Var<T>& features) const { return head->forward(features); }
};

template <typename T>
ModelSplit<T> split_model(Classifier<T>& model) {
  Linear<T>* head = model.final_affine();
  if (head == nullptr)
    throw std::invalid_argument("split_model: model has no identifiable final affine layer");
  return ModelSplit<T>{&model, head};
}

// ---------------------------------------------------------------------------
// Small CNN for 3x32x32-style inputs: three conv/pool blocks, global average
// pooling, affine head.
// ---------------------------------------------------------------------------
template <typename T>
class ToyCnn final : public Classifier<T> {
 public:
  ToyCnn(Shape in_shape, int64_t classes, std::array<int64_t, 3> widths, bool batch_norm, Rng& rng)
      : in_shape_(std::move(in_shape)),
        classes_(classes),
        widths_(widths),
        batch_norm_(batch_norm),
        conv1_(in_shape_.at(0), widths[0], 3, 1, 1, rng),
        conv2_(widths[0], widths[1], 3, 1, 1, rng),
        conv3_(widths[1], widths[2], 3, 1, 1, rng),
        head_(widths[2], classes, rng) {
    if (in_shape_.size() != 3) throw std::invalid_argument("ToyCnn: input shape must be (C,H,W)");
    if (batch_norm_) {
      bn1_ = BatchNorm2d<T>(widths[0]);
      bn2_ = BatchNorm2d<T>(widths[1]);
      bn3_ = BatchNorm2d<T>(widths[2]);
    }
  }

  ad::Var<T> encoder_graph(const ad::Var<T>& x, NetMode mode) override {
    check_input(x);
    const ad::BnMode bm = this->bn_mode(mode);
    auto h = conv1_.forward(x);
    if (batch_norm_) h = bn1_.forward(h, bm);
    h = ad::maxpool2d(ad::relu(h));
    h = conv2_.forward(h);
    if (batch_norm_) h = bn2_.forward(h, bm);
    h = ad::maxpool2d(ad::relu(h));
    h = conv3_.forward(h);
    if (batch_norm_) h = bn3_.forward(h, bm);
    h = ad::maxpool2d(ad::relu(h));
    return ad::global_avgpool(h);
  }

  ad::Var<T> forward_graph(const ad::Var<T>& x, NetMode mode) override {
    return head_.forward(encoder_graph(x, mode));
  }

  Linear<T>* final_affine() override { return &head_; }
  int64_t feature_dim() const override { return widths_[2]; }
  int64_t class_count() const override { return classes_; }
  Shape input_shape() const override { return in_shape_; }

  std::vector<std::pair<std::string, ad::Var<T>>> named_parameters() const override {
    std::vector<std::pair<std::string, ad::Var<T>>> out;
    conv1_.collect("conv1", out);
    if (batch_norm_) bn1_.collect("bn1", out);
    conv2_.collect("conv2", out);
    if (batch_norm_) bn2_.collect("bn2", out);
    conv3_.collect("conv3", out);
    if (batch_norm_) bn3_.collect("bn3", out);
    head_.collect("head", out);
    return out;
  }

  std::vector<std::pair<std::string, Tensor<T>*>> named_buffers() override {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    if (batch_norm_) {
      bn1_.collect_buffers("bn1", out);
      bn2_.collect_buffers("bn2", out);
      bn3_.collect_buffers("bn3", out);
    }
    return out;
  }

 private:
  void check_input(const ad::Var<T>& x) const {
    if (x->value.rank() != 4 || x->value.dim(1) != in_shape_[0] || x->value.dim(2) != in_shape_[1] ||
        x->value.dim(3) != in_shape_[2])
      throw std::invalid_argument("ToyCnn: input shape " + shape_str(x->value.shape()) +
                                  " does not match (n," + std::to_string(in_shape_[0]) + "," +
                                  std::to_string(in_shape_[1]) + "," + std::to_string(in_shape_[2]) + ")");
  }

  Shape in_shape_;
  int64_t classes_;
  std::array<int64_t, 3> widths_;
  bool batch_norm_;
  Conv2d<T> conv1_, conv2_, conv3_;
  BatchNorm2d<T> bn1_, bn2_, bn3_;
  Linear<T> head_;
};

// ---------------------------------------------------------------------------
// MLP over flattened inputs; dims = {in, hidden..., classes}. With two dims
// it degenerates to a linear model whose encoder is the identity.
// ---------------------------------------------------------------------------
template <typename T>
class Mlp final : public Classifier<T> {
 public:
  Mlp(std::vector<int64_t> dims, Rng& rng) : dims_(std::move(dims)) {
    if (dims_.size() < 2) throw std::invalid_argument("Mlp: need at least (in, out) dims");
    for (size_t i = 0; i + 1 < dims_.size(); ++i)
      layers_.emplace_back(dims_[i], dims_[i + 1], rng);
  }

  ad::Var<T> encoder_graph(const ad::Var<T>& x, NetMode) override {
    auto h = flatten(x);
    for (size_t i = 0; i + 1 < layers_.size(); ++i) h = ad::relu(layers_[i].forward(h));
    return h;
  }

  ad::Var<T> forward_graph(const ad::Var<T>& x, NetMode mode) override {
    return layers_.back().forward(encoder_graph(x, mode));
  }

  Linear<T>* final_affine() override { return &layers_.back(); }
  int64_t feature_dim() const override { return dims_[dims_.size() - 2]; }
  int64_t class_count() const override { return dims_.back(); }
  Shape input_shape() const override { return Shape{dims_[0]}; }

  Linear<T>& layer(size_t i) { return layers_.at(i); }

  std::vector<std::pair<std::string, ad::Var<T>>> named_parameters() const override {
    std::vector<std::pair<std::string, ad::Var<T>>> out;
    for (size_t i = 0; i < layers_.size(); ++i) layers_[i].collect("fc" + std::to_string(i), out);
    return out;
  }

 private:
  ad::Var<T> flatten(const ad::Var<T>& x) const {
    if (x->value.rank() == 2) return x;
    const int64_t n = x->value.dim(0);
    return ad::reshape(x, Shape{n, x->value.numel() / n});
  }

  std::vector<int64_t> dims_;
  std::vector<Linear<T>> layers_;
};

/// Architecture description; enough to rebuild a model from a checkpoint.
struct ModelSpec {
  std::string kind = "toy_cnn";        // toy_cnn | mlp
  Shape input_shape = {3, 32, 32};     // per sample
  int64_t classes = 10;
  std::vector<int64_t> widths = {16, 32, 64};  // conv channels / mlp hidden dims
  bool batch_norm = true;
};

template <typename T>
std::unique_ptr<Classifier<T>> make_classifier(const ModelSpec& spec, Rng& rng) {
  if (spec.kind == "toy_cnn") {
    if (spec.widths.size() != 3)
      throw std::invalid_argument("model.widths: toy_cnn needs exactly three channel widths");
    return std::make_unique<ToyCnn<T>>(spec.input_shape, spec.classes,
                                       std::array<int64_t, 3>{spec.widths[0], spec.widths[1], spec.widths[2]},
                                       spec.batch_norm, rng);
  }
  if (spec.kind == "mlp") {
    int64_t in = 1;
    for (int64_t d : spec.input_shape) in *= d;
    std::vector<int64_t> dims{in};
    dims.insert(dims.end(), spec.widths.begin(), spec.widths.end());
    dims.push_back(spec.classes);
    return std::make_unique<Mlp<T>>(dims, rng);
  }
  throw std::invalid_argument("unknown model.kind: '" + spec.kind + "' (expected toy_cnn or mlp)");
}

}  // namespace morel::nn
