#include "morel/config/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace morel::config {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] void fail(const std::string& key, const std::string& value, const std::string& want) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + want);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  fail(key, v, "a boolean");
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    fail(key, v, "an integer");
  }
}

// Accepts plain decimals and simple fractions like 8/255.
double parse_real(const std::string& key, const std::string& v) {
  try {
    const auto slash = v.find('/');
    size_t pos = 0;
    if (slash != std::string::npos) {
      const double num = std::stod(v.substr(0, slash), &pos);
      if (pos != slash) throw std::invalid_argument(v);
      const double den = std::stod(v.substr(slash + 1), &pos);
      if (pos != v.size() - slash - 1 || den == 0) throw std::invalid_argument(v);
      return num / den;
    }
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    fail(key, v, "a real number");
  }
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int64_t> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int64_t> out;
  for (const auto& item : split_list(v)) out.push_back(parse_int(key, item));
  return out;
}

/// Tracks which keys a typed build consumed so leftovers can be rejected.
class Reader {
 public:
  explicit Reader(const KeyValues& kv) : kv_(kv) {}

  std::string str(const std::string& key, const std::string& fallback) {
    consumed_.insert(key);
    const std::string* v = kv_.find(key);
    return v ? *v : fallback;
  }
  bool boolean(const std::string& key, bool fb) {
    consumed_.insert(key);
    const std::string* v = kv_.find(key);
    return v ? parse_bool(key, *v) : fb;
  }
  int64_t integer(const std::string& key, int64_t fb) {
    consumed_.insert(key);
    const std::string* v = kv_.find(key);
    return v ? parse_int(key, *v) : fb;
  }
  double real(const std::string& key, double fb) {
    consumed_.insert(key);
    const std::string* v = kv_.find(key);
    return v ? parse_real(key, *v) : fb;
  }
  std::vector<int64_t> int_list(const std::string& key, std::vector<int64_t> fb) {
    consumed_.insert(key);
    const std::string* v = kv_.find(key);
    return v ? parse_int_list(key, *v) : fb;
  }
  std::vector<std::string> str_list(const std::string& key, std::vector<std::string> fb) {
    consumed_.insert(key);
    const std::string* v = kv_.find(key);
    return v ? split_list(*v) : fb;
  }

  void reject_unknown() const {
    std::vector<std::string> unknown;
    for (const auto& [k, v] : kv_.items())
      if (!consumed_.count(k)) unknown.push_back(k);
    if (!unknown.empty()) {
      std::string msg = "unknown config key(s):";
      for (const auto& k : unknown) msg += " '" + k + "'";
      throw ConfigError(msg);
    }
  }

 private:
  const KeyValues& kv_;
  std::set<std::string> consumed_;
};

void read_attack(Reader& r, const std::string& prefix, attacks::AttackSpec& spec) {
  const std::string fam = r.str(prefix + ".family", attacks::to_string(spec.family));
  try {
    spec.family = attacks::family_from_string(fam);
  } catch (const std::exception& e) {
    throw ConfigError("config key '" + prefix + ".family': " + e.what());
  }
  spec.epsilon = r.real(prefix + ".epsilon", spec.epsilon);
  spec.step_size = r.real(prefix + ".step_size", spec.step_size);
  spec.iterations = r.integer(prefix + ".iterations", spec.iterations);
  spec.random_start = r.boolean(prefix + ".random_start", spec.random_start);
  const std::string il = r.str(prefix + ".inner_loss", attacks::to_string(spec.inner_loss));
  try {
    spec.inner_loss = attacks::inner_loss_from_string(il);
  } catch (const std::exception& e) {
    throw ConfigError("config key '" + prefix + ".inner_loss': " + e.what());
  }
  spec.confidence = r.real(prefix + ".confidence", spec.confidence);
  spec.c_const = r.real(prefix + ".c_const", spec.c_const);
  spec.lr = r.real(prefix + ".lr", spec.lr);
}

}  // namespace

KeyValues KeyValues::parse_text(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    kv.set(key, value);
  }
  return kv;
}

KeyValues KeyValues::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str(), path);
}

void KeyValues::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : items_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  items_.emplace_back(key, value);
}

const std::string* KeyValues::find(const std::string& key) const {
  for (const auto& [k, v] : items_)
    if (k == key) return &v;
  return nullptr;
}

void KeyValues::merge_from(const KeyValues& overrides) {
  for (const auto& [k, v] : overrides.items_) set(k, v);
}

std::string KeyValues::to_text() const {
  std::string out;
  for (const auto& [k, v] : items_) out += k + " = " + v + "\n";
  return out;
}

KeyValues defaults() {
  return KeyValues::parse_text(R"(
dataset.name = synthetic
dataset.root = data
dataset.train_subsample = 0
dataset.test_subsample = 0
dataset.synth.classes = 10
dataset.synth.per_class = 64
dataset.synth.noise = 0.08
dataset.synth.pattern = 0.10
dataset.synth.signature = 0.012
model.kind = toy_cnn
model.widths = 16,32,64
model.batch_norm = true
method = morel-t
seed = 0
out = runs/default
device = cpu
train.epochs = 100
train.batch_size = 8
train.lr = 0.01
train.momentum = 0.9
train.weight_decay = 1e-4
train.lr_milestones = 75,90
train.lr_factor = 0.01
train.augment = false
train.eval_subsample = 0
train.attack_bn_running_stats = false
train.val_fraction = 0
attack.family = pgd
attack.epsilon = 8/255
attack.step_size = 2/255
attack.iterations = 10
attack.random_start = true
attack.inner_loss = kl
attack.confidence = 1
attack.c_const = 15
attack.lr = 0.01
eval_attack.family = pgd
eval_attack.epsilon = 8/255
eval_attack.step_size = 0.8/255
eval_attack.iterations = 20
eval_attack.random_start = true
eval_attack.inner_loss = ce
eval_attack.confidence = 1
eval_attack.c_const = 15
eval_attack.lr = 0.01
losses.alpha = 1e-5
losses.tau = 0.1
losses.inv_lambda = 6
losses.l2_variant = trades
losses.contrastive_inputs = concat
losses.kl_direction = nat_adv
cs.k1 = 0.1
cs.k2 = 0.9
cs.gamma = 2e-5
cs.a1 = 0
cs.a2 = 0
cs.abs_mode = false
embedding.dim = 128
embedding.heads = 2
eval.suite = fgsm,pgd20,pgd100,cw
eval.epsilon = 8/255
eval.batch_size = 128
)",
                               "<defaults>");
}

KeyValues preset(const std::string& name) {
  if (name == "morel-t")
    return KeyValues::parse_text("method = morel-t\nlosses.l2_variant = trades\nattack.inner_loss = kl\n");
  if (name == "morel-m")
    return KeyValues::parse_text("method = morel-m\nlosses.l2_variant = mart\nattack.inner_loss = ce\n");
  if (name == "trades")
    return KeyValues::parse_text("method = trades\nlosses.l2_variant = trades\nattack.inner_loss = kl\n");
  if (name == "mart")
    return KeyValues::parse_text("method = mart\nlosses.l2_variant = mart\nattack.inner_loss = ce\n");
  if (name == "natural") return KeyValues::parse_text("method = natural\n");
  throw ConfigError("unknown preset '" + name +
                    "' (expected morel-t, morel-m, trades, mart or natural)");
}

KeyValues effective_config(const std::optional<std::string>& preset_name,
                           const std::optional<std::string>& config_path,
                           const std::vector<std::string>& set_overrides) {
  KeyValues kv = defaults();
  if (preset_name) kv.merge_from(preset(*preset_name));
  if (config_path) kv.merge_from(KeyValues::parse_file(*config_path));
  for (const auto& s : set_overrides) {
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + s + "'");
    KeyValues one;
    one.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    kv.merge_from(one);
  }
  return kv;
}

RunConfig build_run_config(const KeyValues& kv) {
  Reader r(kv);
  RunConfig c;

  c.dataset = r.str("dataset.name", c.dataset);
  if (c.dataset != "synthetic" && c.dataset != "cifar10" && c.dataset != "cifar100")
    throw ConfigError("dataset.name must be synthetic, cifar10 or cifar100 (got '" + c.dataset + "')");
  c.dataset_root = r.str("dataset.root", c.dataset_root);
  c.train_subsample = r.integer("dataset.train_subsample", c.train_subsample);
  c.test_subsample = r.integer("dataset.test_subsample", c.test_subsample);
  c.synth_classes = r.integer("dataset.synth.classes", c.synth_classes);
  c.synth_per_class = r.integer("dataset.synth.per_class", c.synth_per_class);
  c.synth_noise = r.real("dataset.synth.noise", c.synth_noise);
  c.synth_pattern = r.real("dataset.synth.pattern", c.synth_pattern);
  c.synth_signature = r.real("dataset.synth.signature", c.synth_signature);

  c.model.kind = r.str("model.kind", c.model.kind);
  c.model.widths = r.int_list("model.widths", c.model.widths);
  c.model.batch_norm = r.boolean("model.batch_norm", c.model.batch_norm);

  try {
    c.train.method = train::method_from_string(r.str("method", "morel-t"));
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config key 'method': ") + e.what());
  }
  c.train.seed = static_cast<uint64_t>(r.integer("seed", 0));
  c.out_dir = r.str("out", c.out_dir);
  c.device = r.str("device", c.device);
  if (c.device != "cpu")
    throw ConfigError("device '" + c.device + "' is not available in this build (only cpu)");

  c.train.epochs = r.integer("train.epochs", c.train.epochs);
  c.train.batch_size = r.integer("train.batch_size", c.train.batch_size);
  c.train.sgd.lr = r.real("train.lr", c.train.sgd.lr);
  c.train.sgd.momentum = r.real("train.momentum", c.train.sgd.momentum);
  c.train.sgd.weight_decay = r.real("train.weight_decay", c.train.sgd.weight_decay);
  c.train.lr_milestones = r.int_list("train.lr_milestones", c.train.lr_milestones);
  // milestones beyond the horizon never fire; drop them so short runs work
  // with the default schedule
  std::erase_if(c.train.lr_milestones, [&](int64_t m) { return m >= c.train.epochs; });
  c.train.lr_factor = r.real("train.lr_factor", c.train.lr_factor);
  c.train.augment = r.boolean("train.augment", c.train.augment);
  c.train.eval_subsample = r.integer("train.eval_subsample", c.train.eval_subsample);
  c.train.attack_bn_running_stats =
      r.boolean("train.attack_bn_running_stats", c.train.attack_bn_running_stats);
  c.train.val_fraction = r.real("train.val_fraction", c.train.val_fraction);

  read_attack(r, "attack", c.train.train_attack);
  read_attack(r, "eval_attack", c.train.eval_attack);

  c.train.loss.alpha = r.real("losses.alpha", c.train.loss.alpha);
  c.train.loss.tau = r.real("losses.tau", c.train.loss.tau);
  c.train.loss.inv_lambda = r.real("losses.inv_lambda", c.train.loss.inv_lambda);
  const std::string variant = r.str("losses.l2_variant", "trades");
  if (variant == "trades")
    c.train.loss.l2_variant = losses::L2Variant::trades;
  else if (variant == "mart")
    c.train.loss.l2_variant = losses::L2Variant::mart;
  else
    throw ConfigError("losses.l2_variant must be trades or mart (got '" + variant + "')");
  const std::string ci = r.str("losses.contrastive_inputs", "concat");
  if (ci == "concat")
    c.train.loss.contrastive_inputs = losses::ContrastiveInputs::concat;
  else if (ci == "natural")
    c.train.loss.contrastive_inputs = losses::ContrastiveInputs::natural;
  else
    throw ConfigError("losses.contrastive_inputs must be concat or natural (got '" + ci + "')");
  const std::string kld = r.str("losses.kl_direction", "nat_adv");
  if (kld == "nat_adv")
    c.train.loss.kl_swapped = false;
  else if (kld == "adv_nat")
    c.train.loss.kl_swapped = true;
  else
    throw ConfigError("losses.kl_direction must be nat_adv or adv_nat (got '" + kld + "')");

  c.train.cs.k1 = r.real("cs.k1", c.train.cs.k1);
  c.train.cs.k2 = r.real("cs.k2", c.train.cs.k2);
  c.train.cs.gamma = r.real("cs.gamma", c.train.cs.gamma);
  c.train.cs.a1 = r.real("cs.a1", c.train.cs.a1);
  c.train.cs.a2 = r.real("cs.a2", c.train.cs.a2);
  c.train.cs.abs_mode = r.boolean("cs.abs_mode", c.train.cs.abs_mode);

  c.train.embed_dim = r.integer("embedding.dim", c.train.embed_dim);
  c.train.embed_heads = r.integer("embedding.heads", c.train.embed_heads);

  c.eval_suite = r.str_list("eval.suite", c.eval_suite);
  c.eval_epsilon = r.real("eval.epsilon", c.eval_epsilon);
  c.eval_batch = r.integer("eval.batch_size", c.eval_batch);

  r.reject_unknown();

  try {
    c.train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return c;
}

}  // namespace morel::config
