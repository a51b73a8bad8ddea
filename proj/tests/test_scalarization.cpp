#include <doctest.h>

#include "morel/core/rng.hpp"
#include "morel/scalarization/scalarization.hpp"

using namespace morel;
using P = scalarization::ScalarizationParams<double>;

TEST_CASE("reduces to the weighted sum when gamma and a vanish") {
  P p;
  p.k1 = 0.1;
  p.k2 = 0.9;
  p.gamma = 0.0;
  p.a1 = p.a2 = 0.0;
  CHECK(scalarization::conic_scalarize(1.0, 2.0, p) == 0.1 * 1.0 + 0.9 * 2.0);
  CHECK(scalarization::conic_scalarize(1.0, 2.0, p) == doctest::Approx(1.9));
}

TEST_CASE("default parameters on L = (1, 2)") {
  P p;  // k = (0.1, 0.9), gamma = 2e-5, a = (0, 0)
  CHECK(std::abs(scalarization::conic_scalarize(1.0, 2.0, p) - 1.90006) <= 1e-9);
}

TEST_CASE("gradient with respect to each loss equals k_i + gamma exactly") {
  P p;
  auto l1 = ad::leaf(Tensor<double>::scalar(1.0), true);
  auto l2 = ad::leaf(Tensor<double>::scalar(2.0), true);
  auto s = scalarization::conic_scalarize<double>(l1, l2, p);
  CHECK(s->value[0] == doctest::Approx(1.90006).epsilon(1e-12));
  ad::backward(s);
  CHECK(l1->grad[0] == p.k1 + p.gamma);
  CHECK(l2->grad[0] == p.k2 + p.gamma);
}

TEST_CASE("strictly monotone in each loss") {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    P p;
    p.k1 = 0.05 + rng.uniform();
    p.k2 = 0.05 + rng.uniform();
    p.gamma = rng.uniform() * 0.04;
    p.a1 = rng.uniform() * 0.1;
    p.a2 = rng.uniform() * 0.1;
    const double l1 = rng.uniform() * 3, l2 = rng.uniform() * 3;
    const double base = scalarization::conic_scalarize(l1, l2, p);
    CHECK(scalarization::conic_scalarize(l1 + 0.1, l2, p) > base);
    CHECK(scalarization::conic_scalarize(l1, l2 + 0.1, p) > base);
  }
}

TEST_CASE("configuration is rejected when gamma reaches min(k)") {
  P p;
  p.k1 = 0.1;
  p.k2 = 0.9;
  p.gamma = 0.1;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p.gamma = 0.0999;
  CHECK_NOTHROW(p.validate());
  p.gamma = -1e-9;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("absolute-value augmentation mode") {
  P p;
  p.k1 = 0.5;
  p.k2 = 0.5;
  p.gamma = 0.25;
  p.a1 = 1.0;
  p.a2 = 0.0;
  p.abs_mode = true;
  // L1 below the reference point: d1 = -0.5, |d1| flips its augmentation sign
  const double v = scalarization::conic_scalarize(0.5, 2.0, p);
  CHECK(v == doctest::Approx(0.5 * -0.5 + 0.5 * 2.0 + 0.25 * (0.5 + 2.0)).epsilon(1e-12));
  p.abs_mode = false;
  const double w = scalarization::conic_scalarize(0.5, 2.0, p);
  CHECK(w == doctest::Approx(0.5 * -0.5 + 0.5 * 2.0 + 0.25 * (-0.5 + 2.0)).epsilon(1e-12));
  CHECK(v > w);

  // differentiable path agrees in abs mode as well
  auto l1 = ad::leaf(Tensor<double>::scalar(0.5), true);
  auto l2 = ad::leaf(Tensor<double>::scalar(2.0), true);
  p.abs_mode = true;
  auto s = scalarization::conic_scalarize<double>(l1, l2, p);
  CHECK(s->value[0] == doctest::Approx(v).epsilon(1e-14));
  ad::backward(s);
  CHECK(l1->grad[0] == doctest::Approx(p.k1 - p.gamma).epsilon(1e-14));  // d1 < 0
  CHECK(l2->grad[0] == doctest::Approx(p.k2 + p.gamma).epsilon(1e-14));
}

TEST_CASE("reference point check is advisory") {
  P p;
  p.a1 = 0.5;
  p.a2 = 0.0;
  CHECK(scalarization::reference_point_ok(1.0, 1.0, p));
  CHECK_FALSE(scalarization::reference_point_ok(0.4, 1.0, p));
  // violating the premise still evaluates (diagnostic, not fatal)
  CHECK_NOTHROW(scalarization::conic_scalarize(0.4, 1.0, p));
}
