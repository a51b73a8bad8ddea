#include "morel/data/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace fs = std::filesystem;

namespace morel::data {

namespace {

std::vector<unsigned char> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file: " + p.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

fs::path resolve_dir(const std::string& root, const std::vector<std::string>& candidates,
                     const std::string& probe_file) {
  for (const auto& c : candidates) {
    fs::path dir = c.empty() ? fs::path(root) : fs::path(root) / c;
    if (fs::exists(dir / probe_file)) return dir;
  }
  throw std::runtime_error("dataset files not found under root '" + root + "' (looked for " +
                           probe_file + ")");
}

// CIFAR-10 binary record: 1 label byte + 3072 pixel bytes (RRR GGG BBB).
// CIFAR-100 binary record: coarse label byte + fine label byte + 3072 pixels.
void append_cifar_records(const std::vector<unsigned char>& bytes, int label_bytes,
                          int label_offset, const std::string& path_for_errors,
                          std::vector<float>& pixels, std::vector<int64_t>& labels) {
  const size_t record = static_cast<size_t>(label_bytes) + 3072;
  if (bytes.empty() || bytes.size() % record != 0)
    throw std::runtime_error("corrupt dataset file (size " + std::to_string(bytes.size()) +
                             " not a multiple of " + std::to_string(record) + "): " + path_for_errors);
  const size_t n = bytes.size() / record;
  pixels.reserve(pixels.size() + n * 3072);
  for (size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * record;
    labels.push_back(static_cast<int64_t>(rec[label_offset]));
    for (size_t j = 0; j < 3072; ++j)
      pixels.push_back(static_cast<float>(rec[label_bytes + j]) / 255.0f);
  }
}

LabeledImages load_cifar10(Split split, const std::string& root) {
  const fs::path dir = resolve_dir(root, {"", "cifar-10-batches-bin", "cifar10"},
                                   split == Split::train ? "data_batch_1.bin" : "test_batch.bin");
  std::vector<float> pixels;
  std::vector<int64_t> labels;
  if (split == Split::train) {
    for (int b = 1; b <= 5; ++b) {
      const fs::path p = dir / ("data_batch_" + std::to_string(b) + ".bin");
      append_cifar_records(read_file(p), 1, 0, p.string(), pixels, labels);
    }
  } else {
    const fs::path p = dir / "test_batch.bin";
    append_cifar_records(read_file(p), 1, 0, p.string(), pixels, labels);
  }
  const int64_t n = static_cast<int64_t>(labels.size());
  LabeledImages out{Tensor<float>(Shape{n, 3, 32, 32}, std::move(pixels)), std::move(labels), 10};
  validate(out);
  return out;
}

LabeledImages load_cifar100(Split split, const std::string& root) {
  const fs::path dir = resolve_dir(root, {"", "cifar-100-binary", "cifar100"},
                                   split == Split::train ? "train.bin" : "test.bin");
  const fs::path p = dir / (split == Split::train ? "train.bin" : "test.bin");
  std::vector<float> pixels;
  std::vector<int64_t> labels;
  append_cifar_records(read_file(p), 2, 1, p.string(), pixels, labels);  // fine label
  const int64_t n = static_cast<int64_t>(labels.size());
  LabeledImages out{Tensor<float>(Shape{n, 3, 32, 32}, std::move(pixels)), std::move(labels), 100};
  validate(out);
  return out;
}

// Bilinear upsample of a coarse per-class grid; gives smooth prototypes with
// large inter-class distances.
void fill_prototype(Tensor<float>& proto, Rng& rng, int64_t C, int64_t H, int64_t W) {
  const int64_t g = 8;
  std::vector<float> grid(static_cast<size_t>(C * g * g));
  for (auto& v : grid) v = static_cast<float>(rng.uniform(0.2, 0.8));
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t y = 0; y < H; ++y) {
      const double gy = static_cast<double>(y) / (H - 1) * (g - 1);
      const int64_t y0 = static_cast<int64_t>(gy), y1 = std::min(y0 + 1, g - 1);
      const double fy = gy - y0;
      for (int64_t x = 0; x < W; ++x) {
        const double gx = static_cast<double>(x) / (W - 1) * (g - 1);
        const int64_t x0 = static_cast<int64_t>(gx), x1 = std::min(x0 + 1, g - 1);
        const double fx = gx - x0;
        const auto at = [&](int64_t yy, int64_t xx) {
          return grid[static_cast<size_t>((c * g + yy) * g + xx)];
        };
        const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                         fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
        proto[(c * H + y) * W + x] = static_cast<float>(v);
      }
    }
  }
}

LabeledImages load_synthetic(Split split, const SyntheticSpec& spec) {
  const int64_t C = spec.channels, H = spec.height, W = spec.width;
  const int64_t d = C * H * W;
  const int64_t n = spec.classes * spec.per_class;
  Rng root(spec.seed);

  Tensor<float> background(Shape{C, H, W});
  {
    Rng brng = root.fork("synthetic-bg");
    fill_prototype(background, brng, C, H, W);
    // keep headroom for the class components and noise
    for (int64_t i = 0; i < d; ++i) background[i] = 0.35f + 0.6f * (background[i] - 0.2f);
  }

  std::vector<Tensor<float>> patterns;
  std::vector<Tensor<float>> signatures;
  for (int64_t y = 0; y < spec.classes; ++y) {
    Tensor<float> pat(Shape{C, H, W});
    Rng prng = root.fork("synthetic-pattern", static_cast<uint64_t>(y));
    for (int64_t i = 0; i < d; ++i) pat[i] = prng.uniform() < 0.5 ? -1.0f : 1.0f;
    patterns.push_back(std::move(pat));
    Tensor<float> sig(Shape{C, H, W});
    Rng srng = root.fork("synthetic-sig", static_cast<uint64_t>(y));
    for (int64_t i = 0; i < d; ++i) sig[i] = srng.uniform() < 0.5 ? -1.0f : 1.0f;
    signatures.push_back(std::move(sig));
  }

  const char* split_tag = split == Split::train ? "synthetic-train" : "synthetic-test";
  Tensor<float> images(Shape{n, C, H, W});
  std::vector<int64_t> labels(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const int64_t y = i % spec.classes;
    labels[static_cast<size_t>(i)] = y;
    Rng srng = root.fork(split_tag, static_cast<uint64_t>(i));
    float* dst = images.data() + i * d;
    const float* pat = patterns[static_cast<size_t>(y)].data();
    const float* sig = signatures[static_cast<size_t>(y)].data();
    for (int64_t j = 0; j < d; ++j) {
      const float v = background[j] + spec.pattern * pat[j] + spec.signature * sig[j] +
                      spec.noise * static_cast<float>(srng.normal());
      dst[j] = std::min(1.0f, std::max(0.0f, v));
    }
  }
  LabeledImages out{std::move(images), std::move(labels), spec.classes};
  validate(out);
  return out;
}

const char* kCifar10Names[10] = {"airplane", "automobile", "bird",  "cat",  "deer",
                                 "dog",      "frog",       "horse", "ship", "truck"};

}  // namespace

LabeledImages load_dataset(const std::string& name, Split split, const std::string& root,
                           const SyntheticSpec& synth) {
  if (name == "cifar10") return load_cifar10(split, root);
  if (name == "cifar100") return load_cifar100(split, root);
  if (name == "synthetic") return load_synthetic(split, synth);
  throw std::invalid_argument("unknown dataset name: '" + name +
                              "' (expected cifar10, cifar100 or synthetic)");
}

std::vector<std::string> label_names(const std::string& dataset, int64_t class_count) {
  std::vector<std::string> names;
  if (dataset == "cifar10" && class_count == 10) {
    for (const char* n : kCifar10Names) names.emplace_back(n);
    return names;
  }
  for (int64_t i = 0; i < class_count; ++i) names.push_back("class_" + std::to_string(i));
  return names;
}

void validate(const LabeledImages& data) {
  if (data.images.rank() != 4) throw std::runtime_error("dataset images must be (N,C,H,W)");
  if (data.images.dim(0) != static_cast<int64_t>(data.labels.size()))
    throw std::runtime_error("dataset image/label count mismatch");
  if (data.class_count <= 0) throw std::runtime_error("dataset class_count must be positive");
  for (int64_t i = 0; i < data.images.numel(); ++i) {
    const float v = data.images[i];
    if (!(v >= 0.0f && v <= 1.0f))
      throw std::runtime_error("dataset pixel outside [0,1] at flat index " + std::to_string(i));
  }
  for (size_t i = 0; i < data.labels.size(); ++i)
    if (data.labels[i] < 0 || data.labels[i] >= data.class_count)
      throw std::runtime_error("dataset label out of range at index " + std::to_string(i));
}

LabeledImages subsample(const LabeledImages& data, int64_t count, uint64_t seed) {
  const int64_t n = data.size();
  if (count >= n) return data;
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(static_cast<size_t>(count));
  std::sort(idx.begin(), idx.end());

  const int64_t d = data.images.numel() / n;
  Tensor<float> images(Shape{count, data.images.dim(1), data.images.dim(2), data.images.dim(3)});
  std::vector<int64_t> labels(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    std::copy_n(data.images.data() + idx[static_cast<size_t>(i)] * d, d, images.data() + i * d);
    labels[static_cast<size_t>(i)] = data.labels[static_cast<size_t>(idx[static_cast<size_t>(i)])];
  }
  return LabeledImages{std::move(images), std::move(labels), data.class_count};
}

std::vector<Batch> make_batches(const LabeledImages& data, const BatchPlan& plan) {
  if (plan.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  const int64_t n = data.size();
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  if (plan.shuffle) {
    Rng rng(plan.seed);
    rng.shuffle(order);
  }
  const int64_t d = n > 0 ? data.images.numel() / n : 0;
  std::vector<Batch> out;
  for (int64_t start = 0; start < n; start += plan.batch_size) {
    const int64_t b = std::min(plan.batch_size, n - start);
    Batch batch;
    batch.images = Tensor<float>(Shape{b, data.images.dim(1), data.images.dim(2), data.images.dim(3)});
    batch.labels.resize(static_cast<size_t>(b));
    batch.indices.resize(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) {
      const int64_t src = order[static_cast<size_t>(start + i)];
      std::copy_n(data.images.data() + src * d, d, batch.images.data() + i * d);
      batch.labels[static_cast<size_t>(i)] = data.labels[static_cast<size_t>(src)];
      batch.indices[static_cast<size_t>(i)] = src;
    }
    out.push_back(std::move(batch));
  }
  return out;
}

Tensor<float> augment_crop_flip(const Tensor<float>& images, Rng& rng, int64_t pad) {
  const int64_t n = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  Tensor<float> out(images.shape());
  for (int64_t i = 0; i < n; ++i) {
    const int64_t dy = rng.uniform_int(2 * pad + 1) - pad;
    const int64_t dx = rng.uniform_int(2 * pad + 1) - pad;
    const bool flip = rng.uniform() < 0.5;
    for (int64_t c = 0; c < C; ++c) {
      const float* src = images.data() + (i * C + c) * H * W;
      float* dst = out.data() + (i * C + c) * H * W;
      for (int64_t y = 0; y < H; ++y) {
        const int64_t sy = y + dy;
        for (int64_t x = 0; x < W; ++x) {
          const int64_t sx = (flip ? W - 1 - x : x) + dx;
          dst[y * W + x] =
              (sy >= 0 && sy < H && sx >= 0 && sx < W) ? src[sy * W + sx] : 0.0f;
        }
      }
    }
  }
  return out;
}

}  // namespace morel::data
