#pragma once

// Versioned binary checkpoint container: a JSON header (model architecture,
// embedding config, epoch, best metric, config echo, tensor directory) plus
// a raw little-endian payload. Parameter groups are namespaced (model /
// model_buffer / embedding / optimizer) so export-for-inference can drop
// everything the deployed model does not need.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "morel/embedding/embedding.hpp"
#include "morel/nn/models.hpp"
#include "morel/nn/optimizer.hpp"

namespace morel::train {

inline constexpr char kCheckpointMagic[8] = {'M', 'O', 'R', 'E', 'L', 'C', 'K', '1'};
inline constexpr int kCheckpointVersion = 1;

struct CheckpointInfo {
  std::string kind;  // best | last | export
  int64_t epoch = 0;
  double best_metric = 0.0;
  uint64_t seed = 0;
  std::string method;
  std::string dtype;
  std::string config_echo;
  nn::ModelSpec model_spec;
  std::optional<embedding::EmbeddingConfig> embedding_config;
  bool has_optimizer = false;
};

namespace detail {

inline nlohmann::json model_spec_to_json(const nn::ModelSpec& s) {
  return {{"kind", s.kind},
          {"input_shape", s.input_shape},
          {"classes", s.classes},
          {"widths", s.widths},
          {"batch_norm", s.batch_norm}};
}

inline nn::ModelSpec model_spec_from_json(const nlohmann::json& j) {
  nn::ModelSpec s;
  s.kind = j.at("kind").get<std::string>();
  s.input_shape = j.at("input_shape").get<Shape>();
  s.classes = j.at("classes").get<int64_t>();
  s.widths = j.at("widths").get<std::vector<int64_t>>();
  s.batch_norm = j.at("batch_norm").get<bool>();
  return s;
}

template <typename T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

struct TensorEntry {
  std::string name;
  Shape shape;
  int64_t offset = 0;  // element offset into the payload
};

}  // namespace detail

/// Serializer: collects named tensors then writes header + payload.
template <typename T>
class CheckpointWriter {
 public:
  void add(const std::string& name, const Tensor<T>& t) {
    entries_.push_back({name, t.shape(), static_cast<int64_t>(payload_.size())});
    payload_.insert(payload_.end(), t.data(), t.data() + t.numel());
  }

  void write(const std::string& path, const CheckpointInfo& info) const {
    nlohmann::json header;
    header["version"] = kCheckpointVersion;
    header["kind"] = info.kind;
    header["epoch"] = info.epoch;
    header["best_metric"] = info.best_metric;
    header["seed"] = info.seed;
    header["method"] = info.method;
    header["dtype"] = detail::dtype_name<T>();
    header["config_echo"] = info.config_echo;
    header["model"] = detail::model_spec_to_json(info.model_spec);
    if (info.embedding_config) {
      header["embedding"] = {{"encoder_dim", info.embedding_config->encoder_dim},
                             {"embed_dim", info.embedding_config->embed_dim},
                             {"heads", info.embedding_config->heads}};
    }
    header["has_optimizer"] = info.has_optimizer;
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& e : entries_)
      tensors.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}});
    header["tensors"] = tensors;

    const std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    out.write(reinterpret_cast<const char*>(payload_.data()),
              static_cast<std::streamsize>(payload_.size() * sizeof(T)));
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
  }

 private:
  std::vector<detail::TensorEntry> entries_;
  std::vector<T> payload_;
};

template <typename T>
class CheckpointReader {
 public:
  explicit CheckpointReader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
      throw std::runtime_error("not a checkpoint file (bad magic): " + path);
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
    header_ = nlohmann::json::parse(hs, nullptr, false);
    if (header_.is_discarded()) throw std::runtime_error("corrupt checkpoint header: " + path);
    if (header_.at("version").get<int>() != kCheckpointVersion)
      throw std::runtime_error("checkpoint version mismatch in " + path);
    if (header_.at("dtype").get<std::string>() != detail::dtype_name<T>())
      throw std::runtime_error("checkpoint dtype " + header_.at("dtype").get<std::string>() +
                               " does not match requested " + detail::dtype_name<T>());
    for (const auto& t : header_.at("tensors")) {
      detail::TensorEntry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<Shape>();
      e.offset = t.at("offset").get<int64_t>();
      entries_.push_back(std::move(e));
    }
    payload_start_ = static_cast<int64_t>(sizeof(kCheckpointMagic) + sizeof(hlen) + hlen);
    in.seekg(0, std::ios::end);
    const int64_t bytes = static_cast<int64_t>(in.tellg()) - payload_start_;
    payload_.resize(static_cast<size_t>(bytes) / sizeof(T));
    in.seekg(payload_start_);
    in.read(reinterpret_cast<char*>(payload_.data()), bytes);
    if (!in) throw std::runtime_error("truncated checkpoint payload: " + path);
  }

  CheckpointInfo info() const {
    CheckpointInfo i;
    i.kind = header_.at("kind").get<std::string>();
    i.epoch = header_.at("epoch").get<int64_t>();
    i.best_metric = header_.at("best_metric").get<double>();
    i.seed = header_.at("seed").get<uint64_t>();
    i.method = header_.at("method").get<std::string>();
    i.dtype = header_.at("dtype").get<std::string>();
    i.config_echo = header_.at("config_echo").get<std::string>();
    i.model_spec = detail::model_spec_from_json(header_.at("model"));
    if (header_.contains("embedding")) {
      embedding::EmbeddingConfig ec;
      ec.encoder_dim = header_["embedding"].at("encoder_dim").get<int64_t>();
      ec.embed_dim = header_["embedding"].at("embed_dim").get<int64_t>();
      ec.heads = header_["embedding"].at("heads").get<int64_t>();
      i.embedding_config = ec;
    }
    i.has_optimizer = header_.value("has_optimizer", false);
    return i;
  }

  bool has(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return true;
    return false;
  }

  std::vector<std::string> names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
      if (e.name.rfind(prefix, 0) == 0) out.push_back(e.name);
    return out;
  }

  Tensor<T> read(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.name != name) continue;
      const int64_t count = shape_numel(e.shape);
      if (e.offset + count > static_cast<int64_t>(payload_.size()))
        throw std::runtime_error("corrupt checkpoint: tensor '" + name + "' out of bounds");
      Tensor<T> t(e.shape);
      std::copy_n(payload_.data() + e.offset, count, t.data());
      return t;
    }
    throw std::runtime_error("checkpoint " + path_ + " has no tensor '" + name + "'");
  }

  void read_into(const std::string& name, Tensor<T>& dst) const {
    Tensor<T> t = read(name);
    if (!t.same_shape(dst))
      throw std::runtime_error("checkpoint tensor '" + name + "' shape " + shape_str(t.shape()) +
                               " does not match " + shape_str(dst.shape()));
    dst = std::move(t);
  }

 private:
  std::string path_;
  nlohmann::json header_;
  std::vector<detail::TensorEntry> entries_;
  std::vector<T> payload_;
  int64_t payload_start_ = 0;
};

/// Writes model (+buffers), optional embedding space, optional optimizer
/// velocity buffers (ordered exactly like the parameter list they belong to).
template <typename T>
void save_checkpoint(const std::string& path, CheckpointInfo info, nn::Classifier<T>& model,
                     const embedding::EmbeddingSpace<T>* space, nn::Sgd<T>* optimizer) {
  CheckpointWriter<T> w;
  for (const auto& [name, p] : model.named_parameters()) w.add("model." + name, p->value);
  for (const auto& [name, buf] : model.named_buffers()) w.add("model_buffer." + name, *buf);
  if (space) for (const auto& [name, p] : space->named_parameters()) w.add("embedding." + name, p->value);
  if (optimizer) {
    std::vector<std::string> names;
    for (const auto& [name, p] : model.named_parameters()) names.push_back("model." + name);
    if (space)
      for (const auto& [name, p] : space->named_parameters()) names.push_back("embedding." + name);
    if (names.size() != optimizer->size())
      throw std::logic_error("optimizer state does not line up with the parameter list");
    for (size_t i = 0; i < names.size(); ++i) w.add("optimizer." + names[i], optimizer->velocity(i));
  }
  info.has_optimizer = optimizer != nullptr;
  w.write(path, info);
}

template <typename T>
struct LoadedCheckpoint {
  CheckpointInfo info;
  std::unique_ptr<nn::Classifier<T>> model;
  std::unique_ptr<embedding::EmbeddingSpace<T>> space;  // null when absent
};

/// Rebuilds the model (and embedding space, when stored) from the header and
/// fills every tensor bit-exactly.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  CheckpointReader<T> r(path);
  LoadedCheckpoint<T> out;
  out.info = r.info();
  Rng init_rng(0);  // placeholder init, every tensor is overwritten
  out.model = nn::make_classifier<T>(out.info.model_spec, init_rng);
  for (const auto& [name, p] : out.model->named_parameters()) r.read_into("model." + name, p->value);
  for (const auto& [name, buf] : out.model->named_buffers()) r.read_into("model_buffer." + name, *buf);
  if (out.info.embedding_config && !r.names_with_prefix("embedding.").empty()) {
    out.space = std::make_unique<embedding::EmbeddingSpace<T>>(*out.info.embedding_config, init_rng);
    for (const auto& [name, p] : out.space->named_parameters())
      r.read_into("embedding." + name, p->value);
  }
  return out;
}

/// Restores optimizer velocity buffers for a freshly constructed Sgd whose
/// parameter order is model params then embedding params.
template <typename T>
void load_optimizer_state(const std::string& path, nn::Classifier<T>& model,
                          const embedding::EmbeddingSpace<T>* space, nn::Sgd<T>& optimizer) {
  CheckpointReader<T> r(path);
  std::vector<std::string> names;
  for (const auto& [name, p] : model.named_parameters()) names.push_back("model." + name);
  if (space)
    for (const auto& [name, p] : space->named_parameters()) names.push_back("embedding." + name);
  if (names.size() != optimizer.size())
    throw std::logic_error("optimizer state does not line up with the parameter list");
  for (size_t i = 0; i < names.size(); ++i) r.read_into("optimizer." + names[i], optimizer.velocity(i));
}

/// Inference-only export: keeps the model parameters and buffers, drops the
/// embedding space and optimizer state entirely.
template <typename T>
void export_model(const std::string& checkpoint_path, const std::string& out_path) {
  auto loaded = load_checkpoint<T>(checkpoint_path);
  CheckpointInfo info = loaded.info;
  info.kind = "export";
  info.embedding_config.reset();
  info.has_optimizer = false;
  save_checkpoint<T>(out_path, info, *loaded.model, nullptr, nullptr);
}

}  // namespace morel::train
