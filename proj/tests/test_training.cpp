#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "morel/train/trainer.hpp"

using namespace morel;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("morel_train_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// tiny 3x8x8 synthetic set so a fit() call costs well under a second
data::LabeledImages tiny_data(data::Split split, int64_t classes = 2, int64_t per_class = 16) {
  data::SyntheticSpec spec;
  spec.classes = classes;
  spec.per_class = per_class;
  spec.seed = 17;
  spec.height = 8;
  spec.width = 8;
  return data::load_dataset("synthetic", split, "", spec);
}

train::TrainConfig tiny_config(train::Method method, int64_t epochs = 1) {
  train::TrainConfig cfg;
  cfg.method = method;
  cfg.epochs = epochs;
  cfg.lr_milestones.clear();  // the documented drops sit beyond these short runs
  cfg.batch_size = 8;
  cfg.embed_dim = 8;
  cfg.embed_heads = 2;
  cfg.seed = 5;
  cfg.train_attack.iterations = 3;  // keep unit tests quick
  cfg.eval_attack.iterations = 3;
  return cfg;
}

nn::ModelSpec tiny_model_spec() {
  nn::ModelSpec spec;
  spec.kind = "toy_cnn";
  spec.input_shape = {3, 8, 8};
  spec.classes = 2;
  spec.widths = {4, 4, 4};
  spec.batch_norm = true;
  return spec;
}

template <typename T>
Tensor<T> logits_on(nn::Classifier<T>& model, const data::LabeledImages& d) {
  auto x = d.images.template cast<T>();
  ad::ParamFreeze<T> freeze(model.parameters());
  return model.forward_graph(ad::leaf(x, false), nn::NetMode::eval)->value;
}

}  // namespace

TEST_CASE("learning rate schedule: factor applies at each milestone") {
  train::TrainConfig cfg;
  cfg.epochs = 100;
  cfg.sgd.lr = 0.01;
  cfg.lr_milestones = {75, 90};
  cfg.lr_factor = 0.01;
  CHECK(train::lr_at_epoch(0, cfg) == doctest::Approx(0.01));
  CHECK(train::lr_at_epoch(74, cfg) == doctest::Approx(0.01));
  CHECK(train::lr_at_epoch(75, cfg) == doctest::Approx(1e-4));
  CHECK(train::lr_at_epoch(89, cfg) == doctest::Approx(1e-4));
  CHECK(train::lr_at_epoch(90, cfg) == doctest::Approx(1e-6));
  CHECK(train::lr_at_epoch(99, cfg) == doctest::Approx(1e-6));
  cfg.lr_factor = 0.1;  // conventional drop for ablations
  CHECK(train::lr_at_epoch(80, cfg) == doctest::Approx(1e-3));
}

TEST_CASE("train config validation") {
  train::TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  SUBCASE("epochs") {
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("milestones must be increasing and inside the run") {
    cfg.lr_milestones = {90, 75};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.lr_milestones = {75, 100};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("embedding divisibility") {
    cfg.embed_dim = 6;
    cfg.embed_heads = 4;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
}

TEST_CASE("train_step with zero learning rate reports losses but freezes parameters") {
  auto spec = tiny_model_spec();
  Rng init(3);
  auto model = nn::make_classifier<double>(spec, init);
  auto cfg = tiny_config(train::Method::morel_t);
  train::Trainer<double> trainer(cfg, spec, *model);
  trainer.optimizer().set_lr(0.0);

  auto d = tiny_data(data::Split::train);
  auto batches = data::make_batches(d, {8, false, 0});
  std::vector<Tensor<double>> before;
  for (auto& [name, p] : model->named_parameters()) before.push_back(p->value);

  Rng arng(1);
  auto metrics = trainer.train_step(batches[0].images.cast<double>(), batches[0].labels, arng, 0, 0);
  CHECK(std::isfinite(metrics.l1));
  CHECK(std::isfinite(metrics.l2));
  CHECK(std::isfinite(metrics.scalarized));
  CHECK(metrics.l1 > 0.0);
  size_t i = 0;
  for (auto& [name, p] : model->named_parameters()) {
    CHECK(kern::table_f64().max_abs_diff(before[i].data(), p->value.data(), p->value.numel()) == 0.0);
    ++i;
  }
}

TEST_CASE("identical seeds give identical step metrics") {
  auto spec = tiny_model_spec();
  auto cfg = tiny_config(train::Method::morel_m);
  auto run_step = [&]() {
    Rng init(9);
    auto model = nn::make_classifier<double>(spec, init);
    train::Trainer<double> trainer(cfg, spec, *model);
    auto d = tiny_data(data::Split::train);
    auto batches = data::make_batches(d, {8, false, 0});
    Rng arng(42);
    return trainer.train_step(batches[0].images.cast<double>(), batches[0].labels, arng, 0, 0);
  };
  auto a = run_step();
  auto b = run_step();
  CHECK(a.l1 == b.l1);
  CHECK(a.l2 == b.l2);
  CHECK(a.scalarized == b.scalarized);
}

TEST_CASE("fit bookkeeping: history rows, best metric definition") {
  TempDir tmp("fit");
  auto spec = tiny_model_spec();
  Rng init(3);
  auto model = nn::make_classifier<float>(spec, init);
  auto cfg = tiny_config(train::Method::morel_t, 2);
  train::Trainer<float> trainer(cfg, spec, *model);
  auto train_d = tiny_data(data::Split::train);  // 32 samples -> 4 batches
  auto test_d = tiny_data(data::Split::test, 2, 8);
  auto result = trainer.fit(train_d, test_d, tmp.path.string());

  int64_t step_rows = 0, epoch_rows = 0;
  double max_robust = -1;
  for (const auto& row : result.history) {
    if (row.kind == "step") ++step_rows;
    if (row.kind == "epoch") {
      ++epoch_rows;
      max_robust = std::max(max_robust, row.robust_acc);
    }
  }
  CHECK(step_rows == 8);  // 4 batches x 2 epochs
  CHECK(epoch_rows == 2);
  CHECK(result.best_metric == doctest::Approx(max_robust));
  CHECK(fs::exists(result.best_path));
  CHECK(fs::exists(result.last_path));
  CHECK(fs::exists(result.history_path));
  std::ifstream hist(result.history_path);
  std::string header;
  std::getline(hist, header);
  CHECK(header == train::history_header());
}

TEST_CASE("checkpoint round trip restores the forward map bitwise") {
  TempDir tmp("ckpt");
  auto spec = tiny_model_spec();
  Rng init(7);
  auto model = nn::make_classifier<float>(spec, init);
  auto cfg = tiny_config(train::Method::morel_t);
  train::Trainer<float> trainer(cfg, spec, *model);
  auto d = tiny_data(data::Split::train);
  auto batches = data::make_batches(d, {8, false, 0});
  Rng arng(1);
  trainer.train_step(batches[0].images.cast<float>(), batches[0].labels, arng, 0, 0);

  const std::string path = (tmp.path / "state.ckpt").string();
  trainer.save(path, "last", 0, 12.5);

  auto loaded = train::load_checkpoint<float>(path);
  CHECK(loaded.info.kind == "last");
  CHECK(loaded.info.best_metric == 12.5);
  CHECK(loaded.info.method == "morel-t");
  REQUIRE(loaded.space != nullptr);

  auto test_d = tiny_data(data::Split::test, 2, 4);
  auto a = logits_on(*model, test_d);
  auto b = logits_on(*loaded.model, test_d);
  CHECK(kern::table_f32().max_abs_diff(a.data(), b.data(), a.numel()) == 0.0f);

  SUBCASE("optimizer state restores into a fresh trainer") {
    Rng init2(1234);  // different init; restore() must overwrite everything
    auto model2 = nn::make_classifier<float>(spec, init2);
    train::Trainer<float> trainer2(cfg, spec, *model2);
    auto [epoch, best] = trainer2.restore(path);
    CHECK(epoch == 0);
    CHECK(best == 12.5);
    auto c = logits_on(*model2, test_d);
    CHECK(kern::table_f32().max_abs_diff(a.data(), c.data(), a.numel()) == 0.0f);
    for (size_t i = 0; i < trainer.optimizer().size(); ++i) {
      auto& va = trainer.optimizer().velocity(i);
      auto& vb = trainer2.optimizer().velocity(i);
      CHECK(kern::table_f32().max_abs_diff(va.data(), vb.data(), va.numel()) == 0.0f);
    }
  }

  SUBCASE("export strips the embedding namespace and shrinks the file") {
    const std::string exported = (tmp.path / "exported.ckpt").string();
    train::export_model<float>(path, exported);
    CHECK(fs::file_size(exported) < fs::file_size(path));
    train::CheckpointReader<float> reader(exported);
    CHECK(reader.names_with_prefix("embedding.").empty());
    CHECK(reader.names_with_prefix("optimizer.").empty());
    CHECK_FALSE(reader.names_with_prefix("model.").empty());
    auto lo = train::load_checkpoint<float>(exported);
    auto c = logits_on(*lo.model, test_d);
    CHECK(kern::table_f32().max_abs_diff(a.data(), c.data(), a.numel()) == 0.0f);
  }

  SUBCASE("corrupt and mismatched files are rejected") {
    const std::string bad = (tmp.path / "bad.ckpt").string();
    {
      std::ofstream out(bad, std::ios::binary);
      out.write("NOTACKPTFILE", 12);
    }
    CHECK_THROWS_AS(train::load_checkpoint<float>(bad), std::runtime_error);
    CHECK_THROWS_AS(train::load_checkpoint<double>(path), std::runtime_error);  // dtype mismatch

    // container from a future version
    const std::string versioned = (tmp.path / "future.ckpt").string();
    {
      const std::string header = "{\"version\": 99, \"dtype\": \"f32\", \"tensors\": []}";
      std::ofstream out(versioned, std::ios::binary);
      out.write(train::kCheckpointMagic, sizeof(train::kCheckpointMagic));
      const uint64_t hlen = header.size();
      out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
      out.write(header.data(), static_cast<std::streamsize>(header.size()));
    }
    CHECK_THROWS_WITH_AS(train::load_checkpoint<float>(versioned),
                         doctest::Contains("version"), std::runtime_error);
  }
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  auto spec = tiny_model_spec();
  auto cfg = tiny_config(train::Method::morel_t, 3);
  auto train_d = tiny_data(data::Split::train);
  auto test_d = tiny_data(data::Split::test, 2, 4);

  TempDir dir_a("resume_full");
  Rng init_a(11);
  auto model_a = nn::make_classifier<float>(spec, init_a);
  train::Trainer<float> trainer_a(cfg, spec, *model_a);
  auto full = trainer_a.fit(train_d, test_d, dir_a.path.string());

  TempDir dir_b("resume_half");
  auto cfg_short = cfg;
  cfg_short.epochs = 2;
  Rng init_b(11);
  auto model_b = nn::make_classifier<float>(spec, init_b);
  train::Trainer<float> trainer_b(cfg_short, spec, *model_b);
  auto part = trainer_b.fit(train_d, test_d, dir_b.path.string());

  Rng init_c(999);
  auto model_c = nn::make_classifier<float>(spec, init_c);
  train::Trainer<float> trainer_c(cfg, spec, *model_c);
  auto [epoch, best] = trainer_c.restore(part.last_path);
  CHECK(epoch == 1);
  auto resumed = trainer_c.fit(train_d, test_d, dir_b.path.string(), epoch + 1, best);

  // epoch-2 step metrics must line up exactly with the uninterrupted run
  std::vector<train::HistoryRow> full_e2, resumed_e2;
  for (const auto& r : full.history)
    if (r.epoch == 2 && r.kind == "step") full_e2.push_back(r);
  for (const auto& r : resumed.history)
    if (r.epoch == 2 && r.kind == "step") resumed_e2.push_back(r);
  REQUIRE(full_e2.size() == resumed_e2.size());
  REQUIRE(!full_e2.empty());
  for (size_t i = 0; i < full_e2.size(); ++i) {
    CHECK(full_e2[i].l1 == resumed_e2[i].l1);
    CHECK(full_e2[i].l2 == resumed_e2[i].l2);
    CHECK(full_e2[i].scalarized == resumed_e2[i].scalarized);
  }
}

TEST_CASE("a validation fraction can be carved from the train split") {
  TempDir tmp("valfrac");
  auto spec = tiny_model_spec();
  Rng init(3);
  auto model = nn::make_classifier<float>(spec, init);
  auto cfg = tiny_config(train::Method::natural);
  cfg.val_fraction = 0.25;  // 8 of 32 samples held out
  train::Trainer<float> trainer(cfg, spec, *model);
  auto train_d = tiny_data(data::Split::train);
  auto unused_val = tiny_data(data::Split::test, 2, 2);
  auto result = trainer.fit(train_d, unused_val, tmp.path.string());
  int64_t step_rows = 0;
  for (const auto& r : result.history) {
    if (r.kind == "step") ++step_rows;
    if (r.kind == "epoch") CHECK(r.eval_count == 8);
  }
  CHECK(step_rows == 3);  // 24 remaining samples / batch 8
}

TEST_CASE("epoch history rows carry mean losses alongside accuracies") {
  TempDir tmp("epochrow");
  auto spec = tiny_model_spec();
  Rng init(3);
  auto model = nn::make_classifier<float>(spec, init);
  auto cfg = tiny_config(train::Method::morel_t);
  train::Trainer<float> trainer(cfg, spec, *model);
  auto result = trainer.fit(tiny_data(data::Split::train), tiny_data(data::Split::test, 2, 4),
                            tmp.path.string());
  double sum = 0;
  int64_t steps = 0;
  for (const auto& r : result.history) {
    if (r.kind == "step") {
      sum += r.scalarized;
      ++steps;
    }
    if (r.kind == "epoch") {
      CHECK(r.scalarized == doctest::Approx(sum / steps));
      CHECK(r.l1 > 0.0);
    }
  }
}

TEST_CASE("the optimizer minimizes exactly the scalarized objective") {
  // one-parameter model: L1 = w^2, L2 = (w - 1)^2
  scalarization::ScalarizationParams<double> cs;
  cs.k1 = 0.1;
  cs.k2 = 0.9;
  cs.gamma = 2e-5;
  const double w0 = 0.3, lr = 0.05;

  auto w = ad::leaf(Tensor<double>::scalar(w0), true);
  typename nn::Sgd<double>::Hparams hp;
  hp.lr = lr;
  hp.momentum = 0.0;
  hp.weight_decay = 0.0;
  nn::Sgd<double> opt({w}, hp);

  auto l1 = ad::mul(w, w);
  auto one = ad::constant(Tensor<double>::scalar(1.0));
  auto l2 = ad::mul(ad::sub(w, one), ad::sub(w, one));
  auto s = scalarization::conic_scalarize(l1, l2, cs);
  opt.zero_grad();
  ad::backward(s);
  opt.step();

  const double manual_grad = (cs.k1 + cs.gamma) * 2.0 * w0 + (cs.k2 + cs.gamma) * 2.0 * (w0 - 1.0);
  const double manual_w = w0 - lr * manual_grad;
  CHECK(std::abs(w->value[0] - manual_w) <= 1e-9);
}

TEST_CASE("non-finite losses abort with context") {
  auto spec = tiny_model_spec();
  Rng init(3);
  auto model = nn::make_classifier<double>(spec, init);
  auto cfg = tiny_config(train::Method::morel_t);
  train::Trainer<double> trainer(cfg, spec, *model);
  // poison the head weight; upstream activations would flush a NaN to zero
  for (auto& [name, p] : model->named_parameters())
    if (name == "head.weight") p->value[0] = std::nan("");
  auto d = tiny_data(data::Split::train);
  auto batches = data::make_batches(d, {8, false, 0});
  Rng arng(1);
  CHECK_THROWS_WITH_AS(
      trainer.train_step(batches[0].images.cast<double>(), batches[0].labels, arng, 0, 0),
      doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("natural method trains without attack or embedding") {
  auto spec = tiny_model_spec();
  Rng init(3);
  auto model = nn::make_classifier<double>(spec, init);
  auto cfg = tiny_config(train::Method::natural);
  train::Trainer<double> trainer(cfg, spec, *model);
  CHECK(trainer.space() == nullptr);
  auto d = tiny_data(data::Split::train);
  auto batches = data::make_batches(d, {8, false, 0});
  Rng arng(1);
  auto m = trainer.train_step(batches[0].images.cast<double>(), batches[0].labels, arng, 0, 0);
  CHECK(m.l1 == 0.0);
  CHECK(m.l2 > 0.0);
  CHECK(m.scalarized == m.l2);
}
