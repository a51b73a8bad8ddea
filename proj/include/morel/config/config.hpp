#pragma once

// Declarative run configuration: a flat, diff-able key=value document with
// dotted sections (train.lr, attack.epsilon). Presets are named bundles
// merged before file values and --set overrides; unknown keys are rejected,
// not ignored, and the post-merge document is echoed into the run directory.

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "morel/data/dataset.hpp"
#include "morel/nn/models.hpp"
#include "morel/train/trainer.hpp"

namespace morel::config {

/// Invalid configuration; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class KeyValues {
 public:
  static KeyValues parse_text(const std::string& text, const std::string& origin = "<inline>");
  static KeyValues parse_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  const std::string* find(const std::string& key) const;
  bool contains(const std::string& key) const { return find(key) != nullptr; }
  /// Later documents win key-by-key.
  void merge_from(const KeyValues& overrides);
  std::string to_text() const;
  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

 private:
  std::vector<std::pair<std::string, std::string>> items_;  // insertion-ordered
};

/// Everything a run needs: dataset selection, model, training, evaluation
/// suite, output location.
struct RunConfig {
  std::string dataset = "synthetic";
  std::string dataset_root = "data";
  int64_t synth_classes = 10;
  int64_t synth_per_class = 64;
  double synth_noise = 0.08;
  double synth_pattern = 0.10;
  double synth_signature = 0.012;
  int64_t train_subsample = 0;
  int64_t test_subsample = 0;
  nn::ModelSpec model;
  train::TrainConfig train;
  std::vector<std::string> eval_suite = {"fgsm", "pgd20", "pgd100", "cw"};
  double eval_epsilon = 8.0 / 255.0;
  int64_t eval_batch = 128;
  std::string out_dir = "runs/default";
  std::string device = "cpu";

  data::SyntheticSpec synthetic_spec() const {
    data::SyntheticSpec s;
    s.classes = synth_classes;
    s.per_class = synth_per_class;
    s.noise = static_cast<float>(synth_noise);
    s.pattern = static_cast<float>(synth_pattern);
    s.signature = static_cast<float>(synth_signature);
    s.seed = Rng(train.seed).fork("dataset").seed();
    return s;
  }
};

/// The built-in defaults document (every known key with its default value).
KeyValues defaults();

/// Named preset bundle (morel-t, morel-m, trades, mart, natural).
KeyValues preset(const std::string& name);

/// defaults <- preset <- file <- --set overrides, in that order.
KeyValues effective_config(const std::optional<std::string>& preset_name,
                           const std::optional<std::string>& config_path,
                           const std::vector<std::string>& set_overrides);

/// Typed view of a merged document. Throws ConfigError with a field-level
/// message on bad values and rejects unknown keys.
RunConfig build_run_config(const KeyValues& kv);

}  // namespace morel::config
