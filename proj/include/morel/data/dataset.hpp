#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "morel/core/kernels.hpp"
#include "morel/core/rng.hpp"
#include "morel/core/tensor.hpp"

namespace morel::data {

/// A labeled image set in the pixel domain: values in [0,1], labels stored
/// 0-based internally (reports use the dataset's native names).
struct LabeledImages {
  Tensor<float> images;  // (N, C, H, W)
  std::vector<int64_t> labels;
  int64_t class_count = 0;

  int64_t size() const { return images.empty() ? 0 : images.dim(0); }
};

enum class Split { train, test };

/// Generation knobs for the procedural dataset. Every image is a shared
/// smooth background plus two class-coded components and pixel noise:
///   - pattern: a dense moderate-amplitude class pattern whose margin
///     survives small per-pixel perturbations (the robust feature);
///   - signature: a low-amplitude class code that fits inside the usual
///     attack budget, so models leaning on it are easy to fool.
/// Everything derives from the seed.
struct SyntheticSpec {
  int64_t classes = 10;
  int64_t per_class = 16;
  uint64_t seed = 0;
  int64_t channels = 3;
  int64_t height = 32;
  int64_t width = 32;
  float noise = 0.08f;
  float pattern = 0.10f;
  float signature = 0.012f;
};

/// Loads cifar10/cifar100 from their published binary layouts, or generates
/// the seeded synthetic set. Throws with path context on missing/corrupt
/// files and validates every invariant before returning.
LabeledImages load_dataset(const std::string& name, Split split, const std::string& root,
                           const SyntheticSpec& synth = {});

/// Human-readable label names for reports; defaults to stringified indices.
std::vector<std::string> label_names(const std::string& dataset, int64_t class_count);

void validate(const LabeledImages& data);

/// Deterministic subsample without replacement, stratification-free.
LabeledImages subsample(const LabeledImages& data, int64_t count, uint64_t seed);

/// batch_size >= 1 is enough even for the contrastive objective: each
/// natural sample's adversarial twin is always a positive, so a singleton
/// batch still has a positive pair after concatenation.
struct BatchPlan {
  int64_t batch_size = 8;
  bool shuffle = false;
  uint64_t seed = 0;
};

struct Batch {
  Tensor<float> images;  // (n, C, H, W)
  std::vector<int64_t> labels;
  std::vector<int64_t> indices;  // positions in the source dataset
};

/// Partitions the dataset into consecutive batches; every index appears
/// exactly once, the final short batch is kept, and a given (plan.seed)
/// always yields the same order.
std::vector<Batch> make_batches(const LabeledImages& data, const BatchPlan& plan);

/// Standard crop-with-padding + horizontal flip augmentation; returns a new
/// batch tensor of the same shape.
Tensor<float> augment_crop_flip(const Tensor<float>& images, Rng& rng, int64_t pad = 4);

/// Elementwise min(max(x,0),1); idempotent. All attacks rely on this domain.
template <typename T>
Tensor<T> clamp_to_domain(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  kern::table<T>().clamp(x.data(), T{0}, T{1}, out.data(), x.numel());
  return out;
}

}  // namespace morel::data
