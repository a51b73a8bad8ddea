#include <doctest.h>

#include "morel/eval/evaluation.hpp"
#include "morel/eval/report.hpp"

using namespace morel;

namespace {

// dataset whose images are channel one-hots of the label: (n, c, 1, 1)
data::LabeledImages onehot_data(int64_t classes, int64_t per_class) {
  const int64_t n = classes * per_class;
  data::LabeledImages d;
  d.images = Tensor<float>(Shape{n, classes, 1, 1});
  d.labels.resize(static_cast<size_t>(n));
  d.class_count = classes;
  for (int64_t i = 0; i < n; ++i) {
    const int64_t y = i % classes;
    d.labels[static_cast<size_t>(i)] = y;
    d.images[i * classes + y] = 1.0f;
  }
  return d;
}

std::unique_ptr<nn::Mlp<float>> identity_model(int64_t classes) {
  Rng rng(1);
  auto m = std::make_unique<nn::Mlp<float>>(std::vector<int64_t>{classes, classes}, rng);
  Tensor<float> eye(Shape{classes, classes});
  for (int64_t i = 0; i < classes; ++i) eye.at(i, i) = 1.0f;
  m->layer(0).weight->value = eye;
  m->layer(0).bias->value.fill(0.0f);
  return m;
}

}  // namespace

TEST_CASE("accuracy: chance level for constant logits, perfect for a memorizer") {
  auto d = onehot_data(10, 4);
  Rng rng(2);
  nn::Mlp<float> constant(std::vector<int64_t>{10, 10}, rng);
  constant.layer(0).weight->value.fill(0.0f);
  constant.layer(0).bias->value.fill(0.0f);
  CHECK(evaluation::accuracy(constant, d) == doctest::Approx(10.0));

  auto perfect = identity_model(10);
  CHECK(evaluation::accuracy(*perfect, d) == doctest::Approx(100.0));
}

TEST_CASE("null attack reproduces clean accuracy bitwise") {
  auto d = onehot_data(4, 8);
  auto model = identity_model(4);
  attacks::AttackSpec null_spec;
  null_spec.family = attacks::Family::fgsm;
  null_spec.epsilon = 0.0;
  const double clean = evaluation::accuracy(*model, d);
  const double robust = evaluation::robust_accuracy(*model, d, null_spec, Rng(3));
  CHECK(clean == robust);
}

TEST_CASE("white-box attacks reduce accuracy on a weakly separated model") {
  auto d = onehot_data(4, 8);
  auto model = identity_model(4);
  attacks::AttackSpec pgd;
  pgd.family = attacks::Family::pgd;
  pgd.epsilon = 0.6;  // large enough to cross the one-hot margins
  pgd.step_size = 0.15;
  pgd.iterations = 10;
  pgd.random_start = false;
  const double robust = evaluation::robust_accuracy(*model, d, pgd, Rng(4));
  CHECK(robust < evaluation::accuracy(*model, d));
}

TEST_CASE("evaluation never mutates parameters") {
  auto d = onehot_data(4, 4);
  auto model = identity_model(4);
  std::vector<Tensor<float>> before;
  for (auto& [name, p] : model->named_parameters()) before.push_back(p->value);
  attacks::AttackSpec spec;
  spec.family = attacks::Family::pgd;
  spec.epsilon = 0.1;
  spec.step_size = 0.05;
  spec.iterations = 3;
  evaluation::robust_accuracy(*model, d, spec, Rng(5));
  size_t i = 0;
  for (auto& [name, p] : model->named_parameters())
    CHECK(kern::table_f32().max_abs_diff(before[i++].data(), p->value.data(), p->value.numel()) == 0.0f);
}

TEST_CASE("black-box evaluation rejects parameter-identical surrogates") {
  auto d = onehot_data(4, 2);
  auto target = identity_model(4);
  auto twin = identity_model(4);  // same weights, different object
  attacks::AttackSpec spec;
  spec.family = attacks::Family::fgsm;
  spec.epsilon = 0.1;
  CHECK_THROWS_AS(evaluation::transfer_accuracy(*target, *twin, d, spec, Rng(6)),
                  std::invalid_argument);

  // a genuinely different surrogate is allowed, architecture need not match
  Rng rng(7);
  nn::Mlp<float> other(std::vector<int64_t>{4, 6, 4}, rng);
  CHECK_NOTHROW(evaluation::transfer_accuracy(*target, other, d, spec, Rng(8)));
}

TEST_CASE("standard suite matches the evaluation protocol") {
  auto suite = evaluation::standard_suite(8.0 / 255.0);
  REQUIRE(suite.size() == 4);
  CHECK(suite[0].first == "fgsm");
  CHECK(suite[1].first == "pgd-20");
  CHECK(suite[1].second.iterations == 20);
  CHECK(suite[1].second.step_size == doctest::Approx(8.0 / 255.0 / 10.0));
  CHECK(suite[2].first == "pgd-100");
  CHECK(suite[2].second.iterations == 100);
  CHECK(suite[3].first == "cw-linf");
  CHECK(suite[3].second.iterations == 10);
  CHECK(suite[3].second.lr == doctest::Approx(1e-2));
  CHECK(suite[3].second.confidence == doctest::Approx(1.0));
  CHECK(suite[3].second.c_const == doctest::Approx(15.0));
  for (const auto& [name, spec] : suite) CHECK(spec.epsilon == doctest::Approx(8.0 / 255.0));

  CHECK(evaluation::suite_from_names({"fgsm", "pgd20"}, 0.03).size() == 2);
  CHECK_THROWS_AS(evaluation::suite_from_names({"autoattack"}, 0.03), std::invalid_argument);
}

TEST_CASE("reports: degenerate suite, aggregation and JSON round trip") {
  auto d = onehot_data(4, 4);
  auto model = identity_model(4);
  auto suite = evaluation::suite_from_names({"none"}, 0.0);
  auto report = evaluation::build_report<float>("demo", "best", "synthetic", *model, d, suite,
                                                "whitebox", nullptr, "", 11);
  CHECK(report.per_attack.size() == 1);
  CHECK(report.avg_robust == report.clean_acc);  // a null attack scores clean accuracy
  CHECK(report.avg_robust == report.recompute_avg());

  report.timestamp = "2000-01-01T00:00:00Z";
  auto j = evaluation::report_to_json(report);
  auto back = evaluation::report_from_json(j);
  CHECK(back.model_id == report.model_id);
  CHECK(back.checkpoint_kind == report.checkpoint_kind);
  CHECK(back.clean_acc == report.clean_acc);
  CHECK(back.avg_robust == report.avg_robust);
  CHECK(back.per_attack == report.per_attack);
  CHECK(back.seed == report.seed);
  CHECK(back.specs.size() == report.specs.size());
  CHECK(back.specs[0].second.epsilon == report.specs[0].second.epsilon);
  CHECK(evaluation::report_to_json(back) == j);

  SUBCASE("blackbox without surrogate is rejected") {
    CHECK_THROWS_AS(evaluation::build_report<float>("demo", "best", "synthetic", *model, d, suite,
                                                    "blackbox", nullptr, "", 11),
                    std::invalid_argument);
  }
  SUBCASE("empty suite is rejected") {
    CHECK_THROWS_AS(evaluation::build_report<float>("demo", "best", "synthetic", *model, d, {},
                                                    "whitebox", nullptr, "", 11),
                    std::invalid_argument);
  }
}

TEST_CASE("table and chart rendering") {
  evaluation::RobustnessReport best;
  best.model_id = "demo";
  best.checkpoint_kind = "best";
  best.dataset = "synthetic";
  best.clean_acc = 91.25;
  best.per_attack = {{"fgsm", 55.5}, {"pgd-20", 44.25}};
  best.avg_robust = best.recompute_avg();
  auto last = best;
  last.checkpoint_kind = "last";
  last.clean_acc = 90.0;

  const std::string table = evaluation::render_table({best, last});
  CHECK(table.find("clean(best)") != std::string::npos);
  CHECK(table.find("clean(last)") != std::string::npos);
  CHECK(table.find("pgd-20(best)") != std::string::npos);
  CHECK(table.find("avg-robust(last)") != std::string::npos);
  CHECK(table.find("91.25") != std::string::npos);

  const std::string svg = evaluation::render_svg(best);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("fgsm") != std::string::npos);
}
