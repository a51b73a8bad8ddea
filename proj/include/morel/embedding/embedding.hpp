#pragma once

// Training-time embedding space: a linear projection of encoder features
// into a lower-dimensional space, per-class multi-head attention over the
// projected features (no positional information of any kind), reassembly
// into batch order and row normalization. The whole space is discarded for
// inference.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "morel/autodiff/ops.hpp"
#include "morel/nn/layers.hpp"

namespace morel::embedding {

struct EmbeddingConfig {
  int64_t encoder_dim = 0;  // o
  int64_t embed_dim = 128;  // b
  int64_t heads = 2;        // m

  int64_t head_dim() const { return embed_dim / heads; }
  void validate() const {
    if (encoder_dim <= 0) throw std::invalid_argument("embedding.encoder_dim must be positive");
    if (embed_dim <= 0 || heads <= 0)
      throw std::invalid_argument("embedding dims must be positive");
    if (embed_dim % heads != 0)
      throw std::invalid_argument("embedding.embed_dim must be divisible by embedding.heads");
  }
};

/// One class's slice of a batch with enough provenance to reassemble it.
template <typename T>
struct ClassGroup {
  int64_t class_id = 0;
  ad::Var<T> rows;                       // (n_y, b)
  std::vector<int64_t> source_indices;   // positions in the original batch
};

/// Buckets rows by label; groups come out ordered by ascending class id and
/// source_indices preserve within-class batch order.
template <typename T>
std::vector<ClassGroup<T>> group_by_class(const ad::Var<T>& s, const std::vector<int64_t>& labels) {
  if (s->value.rank() != 2) throw std::invalid_argument("group_by_class: expected a 2-d feature batch");
  if (static_cast<int64_t>(labels.size()) != s->value.rows())
    throw std::invalid_argument("group_by_class: label count mismatch");
  std::map<int64_t, std::vector<int64_t>> buckets;
  for (size_t i = 0; i < labels.size(); ++i) buckets[labels[i]].push_back(static_cast<int64_t>(i));
  std::vector<ClassGroup<T>> groups;
  groups.reserve(buckets.size());
  for (auto& [cls, idx] : buckets)
    groups.push_back(ClassGroup<T>{cls, ad::select_rows(s, idx), idx});
  return groups;
}

/// Exact inverse of group_by_class at the index level.
template <typename T>
ad::Var<T> assemble(const std::vector<ClassGroup<T>>& groups) {
  if (groups.empty()) throw std::invalid_argument("assemble: no groups");
  int64_t n = 0;
  for (const auto& g : groups) n += static_cast<int64_t>(g.source_indices.size());
  std::vector<int64_t> inverse(static_cast<size_t>(n), -1);
  int64_t row = 0;
  std::vector<ad::Var<T>> parts;
  for (const auto& g : groups) {
    parts.push_back(g.rows);
    for (int64_t src : g.source_indices) {
      if (src < 0 || src >= n || inverse[static_cast<size_t>(src)] != -1)
        throw std::invalid_argument("assemble: source indices do not form a permutation");
      inverse[static_cast<size_t>(src)] = row++;
    }
  }
  return ad::select_rows(ad::concat_rows(parts), inverse);
}

/// Reassembles the natural and adversarial groupings into batch order and
/// normalizes every row to unit Euclidean length. The two groupings must
/// agree on classes and provenance (same labels on both branches).
template <typename T>
std::pair<ad::Var<T>, ad::Var<T>> assemble_normalize(const std::vector<ClassGroup<T>>& natural,
                                                     const std::vector<ClassGroup<T>>& adversarial) {
  if (natural.size() != adversarial.size())
    throw std::invalid_argument("assemble_normalize: group count mismatch");
  for (size_t i = 0; i < natural.size(); ++i)
    if (natural[i].class_id != adversarial[i].class_id ||
        natural[i].source_indices != adversarial[i].source_indices)
      throw std::invalid_argument("assemble_normalize: groupings disagree on provenance");
  return {ad::l2_normalize_rows(assemble(natural)), ad::l2_normalize_rows(assemble(adversarial))};
}

template <typename T>
class EmbeddingSpace {
 public:
  EmbeddingSpace(const EmbeddingConfig& cfg, Rng& rng) : cfg_(cfg), proj_(cfg.encoder_dim, cfg.embed_dim, rng) {
    cfg_.validate();
    const int64_t b = cfg_.embed_dim;
    const int64_t hd = cfg_.head_dim();
    for (int64_t j = 0; j < cfg_.heads; ++j) {
      wq_.push_back(ad::leaf(nn::init_uniform<T>(Shape{b, hd}, b, rng), true));
      wk_.push_back(ad::leaf(nn::init_uniform<T>(Shape{b, hd}, b, rng), true));
      wv_.push_back(ad::leaf(nn::init_uniform<T>(Shape{b, hd}, b, rng), true));
    }
    wo_ = ad::leaf(nn::init_uniform<T>(Shape{cfg_.heads * hd, b}, cfg_.heads * hd, rng), true);
    ln_gamma_ = ad::leaf(Tensor<T>(Shape{b}, T{1}), true);
    ln_beta_ = ad::leaf(Tensor<T>(Shape{b}, T{0}), true);
  }

  const EmbeddingConfig& config() const { return cfg_; }

  /// Projection into the embedding space; one shared map for natural and
  /// adversarial features.
  ad::Var<T> embed_linear(const ad::Var<T>& z) const {
    if (z->value.cols() != cfg_.encoder_dim)
      throw std::invalid_argument("embed_linear: feature dim " + std::to_string(z->value.cols()) +
                                  " != encoder_dim " + std::to_string(cfg_.encoder_dim));
    return proj_.forward(z);
  }

  /// Attention within one class group. Rows are normalized once (the
  /// normalization does not depend on the head), projected per head to
  /// queries/keys/values, mixed by row-softmax attention, concatenated,
  /// projected back and added to the input as a residual.
  ClassGroup<T> class_attention(const ClassGroup<T>& group) const {
    const auto& S = group.rows;
    if (S->value.cols() != cfg_.embed_dim)
      throw std::invalid_argument("class_attention: group width mismatch");
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg_.head_dim())));
    auto normed = ad::layer_norm_rows(S, ln_gamma_, ln_beta_);
    std::vector<ad::Var<T>> heads;
    for (int64_t j = 0; j < cfg_.heads; ++j) {
      auto q = ad::matmul(normed, wq_[static_cast<size_t>(j)]);
      auto k = ad::matmul(normed, wk_[static_cast<size_t>(j)]);
      auto v = ad::matmul(normed, wv_[static_cast<size_t>(j)]);
      auto scores = ad::softmax_rows(ad::scale(ad::matmul(q, k, false, true), inv_sqrt));
      auto out = ad::matmul(scores, v);
      for (int64_t i = 0; i < out->value.numel(); ++i)
        if (!std::isfinite(static_cast<double>(out->value[i])))
          throw std::runtime_error("class_attention: non-finite output in head " + std::to_string(j));
      heads.push_back(std::move(out));
    }
    auto mixed = ad::matmul(ad::concat_cols(heads), wo_);
    return ClassGroup<T>{group.class_id, ad::add(S, mixed), group.source_indices};
  }

  /// Full path for one branch: project, group, attend per group.
  std::vector<ClassGroup<T>> embed_and_attend(const ad::Var<T>& z,
                                              const std::vector<int64_t>& labels) const {
    auto groups = group_by_class(embed_linear(z), labels);
    for (auto& g : groups) g = class_attention(g);
    return groups;
  }

  std::vector<std::pair<std::string, ad::Var<T>>> named_parameters() const {
    std::vector<std::pair<std::string, ad::Var<T>>> out;
    proj_.collect("proj", out);
    for (int64_t j = 0; j < cfg_.heads; ++j) {
      const std::string p = "head" + std::to_string(j);
      out.emplace_back(p + ".wq", wq_[static_cast<size_t>(j)]);
      out.emplace_back(p + ".wk", wk_[static_cast<size_t>(j)]);
      out.emplace_back(p + ".wv", wv_[static_cast<size_t>(j)]);
    }
    out.emplace_back("wo", wo_);
    out.emplace_back("ln.gamma", ln_gamma_);
    out.emplace_back("ln.beta", ln_beta_);
    return out;
  }

  std::vector<ad::Var<T>> parameters() const {
    std::vector<ad::Var<T>> out;
    for (auto& [name, p] : named_parameters()) out.push_back(p);
    return out;
  }

 private:
  EmbeddingConfig cfg_;
  nn::Linear<T> proj_;
  std::vector<ad::Var<T>> wq_, wk_, wv_;
  ad::Var<T> wo_;
  ad::Var<T> ln_gamma_, ln_beta_;
};

}  // namespace morel::embedding
