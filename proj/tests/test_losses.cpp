#include <doctest.h>

#include <cmath>
#include <vector>

#include "morel/core/rng.hpp"
#include "morel/losses/losses.hpp"

using namespace morel;
using V = ad::Var<double>;

// ---------------------------------------------------------------------------
// Independent straight-line oracles. These never touch the autodiff path.
// ---------------------------------------------------------------------------
namespace oracle {

double cosine(const Tensor<double>& t, const Tensor<double>& ta) {
  const int64_t n = t.rows(), b = t.cols();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    double dot = 0, na = 0, nb = 0;
    for (int64_t j = 0; j < b; ++j) {
      dot += t.at(i, j) * ta.at(i, j);
      na += t.at(i, j) * t.at(i, j);
      nb += ta.at(i, j) * ta.at(i, j);
    }
    acc += dot / (std::sqrt(na) * std::sqrt(nb));
  }
  return 1.0 - acc / static_cast<double>(n);
}

// double loop over anchors and positives, plain exp arithmetic
double contrastive(const Tensor<double>& t, const std::vector<int64_t>& y, double tau) {
  const int64_t n = t.rows(), b = t.cols();
  auto sim = [&](int64_t i, int64_t j) {
    double s = 0;
    for (int64_t k = 0; k < b; ++k) s += t.at(i, k) * t.at(j, k);
    return s / tau;
  };
  double total = 0;
  for (int64_t j = 0; j < n; ++j) {
    std::vector<int64_t> positives;
    for (int64_t p = 0; p < n; ++p)
      if (p != j && y[static_cast<size_t>(p)] == y[static_cast<size_t>(j)]) positives.push_back(p);
    REQUIRE(!positives.empty());
    double denom = 0;
    for (int64_t q = 0; q < n; ++q)
      if (q != j) denom += std::exp(sim(j, q));
    double inner = 0;
    for (int64_t p : positives) inner += std::log(std::exp(sim(j, p)) / denom);
    total += -inner / static_cast<double>(positives.size());
  }
  return total;
}

std::vector<double> softmax(const double* row, int64_t c) {
  double mx = row[0];
  for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
  std::vector<double> p(static_cast<size_t>(c));
  double z = 0;
  for (int64_t j = 0; j < c; ++j) {
    p[static_cast<size_t>(j)] = std::exp(row[j] - mx);
    z += p[static_cast<size_t>(j)];
  }
  for (auto& v : p) v /= z;
  return p;
}

double kl(const Tensor<double>& pl, const Tensor<double>& ql) {
  const int64_t n = pl.rows(), c = pl.cols();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    auto p = softmax(pl.data() + i * c, c);
    auto q = softmax(ql.data() + i * c, c);
    for (int64_t j = 0; j < c; ++j)
      acc += p[static_cast<size_t>(j)] *
             (std::log(p[static_cast<size_t>(j)]) - std::log(q[static_cast<size_t>(j)]));
  }
  return acc / static_cast<double>(n);
}

double cross_entropy(const Tensor<double>& logits, const std::vector<int64_t>& y) {
  const int64_t n = logits.rows(), c = logits.cols();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    auto p = softmax(logits.data() + i * c, c);
    acc += -std::log(p[static_cast<size_t>(y[static_cast<size_t>(i)])]);
  }
  return acc / static_cast<double>(n);
}

double trades(const Tensor<double>& ln, const Tensor<double>& la, const std::vector<int64_t>& y,
              double inv_lambda) {
  return cross_entropy(ln, y) + inv_lambda * kl(ln, la);
}

double mart(const Tensor<double>& ln, const Tensor<double>& la, const std::vector<int64_t>& y,
            double inv_lambda) {
  const int64_t n = ln.rows(), c = ln.cols();
  double bce = 0, reg = 0;
  for (int64_t i = 0; i < n; ++i) {
    auto pa = softmax(la.data() + i * c, c);
    auto pn = softmax(ln.data() + i * c, c);
    const int64_t yi = y[static_cast<size_t>(i)];
    bce += -std::log(pa[static_cast<size_t>(yi)]);
    double other_max = -1;
    for (int64_t j = 0; j < c; ++j)
      if (j != yi) other_max = std::max(other_max, pa[static_cast<size_t>(j)]);
    bce += -std::log(1.0 - other_max);
    double kli = 0;
    for (int64_t j = 0; j < c; ++j)
      kli += pn[static_cast<size_t>(j)] *
             (std::log(pn[static_cast<size_t>(j)]) - std::log(pa[static_cast<size_t>(j)]));
    reg += kli * (1.0 - pn[static_cast<size_t>(yi)]);
  }
  return bce / n + inv_lambda * reg / n;
}

}  // namespace oracle

namespace {

Tensor<double> rand_t(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(s));
  rng.fill_uniform(t, lo, hi);
  return t;
}

Tensor<double> unit_rows(Rng& rng, int64_t n, int64_t b) {
  Tensor<double> t = rand_t(rng, {n, b}, -1.0, 1.0);
  for (int64_t i = 0; i < n; ++i) {
    double norm = 0;
    for (int64_t j = 0; j < b; ++j) norm += t.at(i, j) * t.at(i, j);
    norm = std::sqrt(norm);
    for (int64_t j = 0; j < b; ++j) t.at(i, j) /= norm;
  }
  return t;
}

std::vector<int64_t> balanced_labels(int64_t n, int64_t classes) {
  std::vector<int64_t> y(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) y[static_cast<size_t>(i)] = i % classes;
  return y;
}

}  // namespace

TEST_CASE("cosine alignment: fixed points of the formula") {
  Rng rng(1);
  Tensor<double> t = unit_rows(rng, 4, 6);
  SUBCASE("identical rows give zero") {
    CHECK(losses::cosine_alignment_loss(ad::leaf(t, false), ad::leaf(t, false))->value[0] ==
          doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("antipodal rows give two") {
    Tensor<double> neg = t;
    for (int64_t i = 0; i < neg.numel(); ++i) neg[i] = -neg[i];
    CHECK(losses::cosine_alignment_loss(ad::leaf(t, false), ad::leaf(neg, false))->value[0] ==
          doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("pairwise orthogonal rows give one") {
    Tensor<double> a(Shape{2, 4}, {1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0});
    Tensor<double> b(Shape{2, 4}, {0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0});
    CHECK(losses::cosine_alignment_loss(ad::leaf(a, false), ad::leaf(b, false))->value[0] ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("zero iff rows align up to positive scale") {
    Tensor<double> scaled = t;
    for (int64_t i = 0; i < scaled.numel(); ++i) scaled[i] *= 3.7;
    CHECK(losses::cosine_alignment_loss(ad::leaf(t, false), ad::leaf(scaled, false))->value[0] ==
          doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("zero-norm rows are rejected") {
    Tensor<double> z(Shape{4, 6});
    CHECK_THROWS_AS(losses::cosine_alignment_loss(ad::leaf(t, false), ad::leaf(z, false)),
                    std::runtime_error);
  }
  SUBCASE("value stays within [0, 2] on random inputs") {
    for (int i = 0; i < 50; ++i) {
      Tensor<double> a = unit_rows(rng, 3, 5);
      Tensor<double> b = unit_rows(rng, 3, 5);
      const double v = losses::cosine_alignment_loss(ad::leaf(a, false), ad::leaf(b, false))->value[0];
      CHECK(v >= -1e-12);
      CHECK(v <= 2.0 + 1e-12);
    }
  }
}

TEST_CASE("contrastive loss: collapsed fixture equals 2n log(2n-1)") {
  Tensor<double> t(Shape{4, 3});
  for (int64_t i = 0; i < 4; ++i) {
    t.at(i, 0) = 0.6;
    t.at(i, 1) = 0.8;
    t.at(i, 2) = 0.0;
  }
  const double v =
      losses::multi_positive_contrastive_loss(ad::leaf(t, false), {0, 0, 0, 0}, 0.37)->value[0];
  CHECK(v == doctest::Approx(4.0 * std::log(3.0)).epsilon(1e-9));  // ~4.3944
}

TEST_CASE("contrastive loss: unit-vector fixture matches the double-loop oracle") {
  Tensor<double> t(Shape{4, 4});
  t.at(0, 0) = 1.0;
  t.at(1, 0) = 1.0;
  t.at(2, 1) = 1.0;
  t.at(3, 1) = 1.0;
  std::vector<int64_t> y{0, 0, 1, 1};
  const double got =
      losses::multi_positive_contrastive_loss(ad::leaf(t, false), y, 1.0)->value[0];
  CHECK(std::abs(got - oracle::contrastive(t, y, 1.0)) <= 1e-9);
}

TEST_CASE("contrastive loss: randomized oracle equivalence") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t classes = 1 + rng.uniform_int(3);
    const int64_t n = 2 * (1 + rng.uniform_int(4));  // even, so every class pairs up
    const int64_t b = 2 + rng.uniform_int(15);
    Tensor<double> t = unit_rows(rng, n, b);
    auto y = balanced_labels(n, std::min(classes, n / 2));
    const double tau = 0.05 + rng.uniform() * 1.5;
    const double got = losses::multi_positive_contrastive_loss(ad::leaf(t, false), y, tau)->value[0];
    const double want = oracle::contrastive(t, y, tau);
    CHECK(std::abs(got - want) <= 1e-9);
  }
}

TEST_CASE("contrastive loss is invariant under simultaneous permutation") {
  Rng rng(3);
  Tensor<double> t = unit_rows(rng, 6, 5);
  std::vector<int64_t> y{0, 1, 0, 2, 1, 2};
  std::vector<int64_t> perm{4, 2, 0, 5, 1, 3};
  Tensor<double> tp(Shape{6, 5});
  std::vector<int64_t> yp(6);
  for (int64_t i = 0; i < 6; ++i) {
    std::copy_n(t.data() + perm[static_cast<size_t>(i)] * 5, 5, tp.data() + i * 5);
    yp[static_cast<size_t>(i)] = y[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  }
  const double a = losses::multi_positive_contrastive_loss(ad::leaf(t, false), y, 0.3)->value[0];
  const double b = losses::multi_positive_contrastive_loss(ad::leaf(tp, false), yp, 0.3)->value[0];
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("contrastive loss rejects anchors without positives") {
  Rng rng(4);
  Tensor<double> t = unit_rows(rng, 3, 4);
  CHECK_THROWS_WITH_AS(
      losses::multi_positive_contrastive_loss(ad::leaf(t, false), {0, 0, 1}, 0.5),
      doctest::Contains("no positive partner"), std::runtime_error);
}

TEST_CASE("lower temperature sharpens the separation gradient") {
  // fixture from the unit-vector oracle case; gradient magnitude w.r.t. the
  // features must strictly grow when tau drops from 1 to 0.5
  Tensor<double> t(Shape{4, 4});
  t.at(0, 0) = 1.0;
  t.at(1, 0) = 1.0;
  t.at(2, 1) = 1.0;
  t.at(3, 1) = 1.0;
  std::vector<int64_t> y{0, 0, 1, 1};
  auto grad_norm = [&](double tau) {
    auto leaf = ad::leaf(t, true);
    auto loss = losses::multi_positive_contrastive_loss(leaf, y, tau);
    ad::backward(loss);
    double norm = 0;
    for (int64_t i = 0; i < leaf->grad.numel(); ++i) norm += leaf->grad[i] * leaf->grad[i];
    return std::sqrt(norm);
  };
  CHECK(grad_norm(0.5) > grad_norm(1.0));
}

TEST_CASE("kl divergence values and properties") {
  SUBCASE("identical logits give zero") {
    Rng rng(5);
    Tensor<double> p = rand_t(rng, {3, 4}, -2.0, 2.0);
    CHECK(losses::kl_divergence(ad::leaf(p, false), ad::leaf(p, false))->value[0] ==
          doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("two-class hand value") {
    Tensor<double> p(Shape{1, 2}, {0.0, 0.0});             // uniform
    Tensor<double> q(Shape{1, 2}, {std::log(3.0), 0.0});   // (3/4, 1/4)
    const double v = losses::kl_divergence(ad::leaf(p, false), ad::leaf(q, false))->value[0];
    const double want = 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25);
    CHECK(v == doctest::Approx(want).epsilon(1e-12));
    CHECK(v == doctest::Approx(0.14384).epsilon(1e-4));
  }
  SUBCASE("non-negative on random logit pairs, matches the direct formula") {
    Rng rng(6);
    for (int i = 0; i < 1000; ++i) {
      Tensor<double> p = rand_t(rng, {2, 5}, -4.0, 4.0);
      Tensor<double> q = rand_t(rng, {2, 5}, -4.0, 4.0);
      const double v = losses::kl_divergence(ad::leaf(p, false), ad::leaf(q, false))->value[0];
      CHECK(v >= -1e-12);
      CHECK(std::abs(v - oracle::kl(p, q)) <= 1e-10);
    }
  }
  SUBCASE("zero iff logits differ by a per-row constant") {
    Rng rng(7);
    Tensor<double> p = rand_t(rng, {3, 4}, -2.0, 2.0);
    Tensor<double> q = p;
    for (int64_t i = 0; i < 3; ++i)
      for (int64_t j = 0; j < 4; ++j) q.at(i, j) += 0.77 * static_cast<double>(i + 1);
    CHECK(losses::kl_divergence(ad::leaf(p, false), ad::leaf(q, false))->value[0] ==
          doctest::Approx(0.0).epsilon(1e-14));
  }
}

TEST_CASE("trades loss composition") {
  Rng rng(8);
  Tensor<double> ln = rand_t(rng, {4, 3}, -2.0, 2.0);
  Tensor<double> la = rand_t(rng, {4, 3}, -2.0, 2.0);
  std::vector<int64_t> y{0, 2, 1, 0};
  SUBCASE("identical logits leave only the cross-entropy") {
    const double v =
        losses::trades_loss(ad::leaf(ln, false), ad::leaf(ln, false), y, 6.0)->value[0];
    CHECK(v == doctest::Approx(oracle::cross_entropy(ln, y)).epsilon(1e-12));
  }
  SUBCASE("fixture assembles cross-entropy plus weighted divergence") {
    const double v =
        losses::trades_loss(ad::leaf(ln, false), ad::leaf(la, false), y, 6.0)->value[0];
    CHECK(std::abs(v - oracle::trades(ln, la, y, 6.0)) <= 1e-10);
    CHECK(v >= 0.0);
  }
  SUBCASE("swapped direction measures the reverse divergence") {
    const double v =
        losses::trades_loss(ad::leaf(ln, false), ad::leaf(la, false), y, 6.0, true)->value[0];
    CHECK(v == doctest::Approx(oracle::cross_entropy(ln, y) + 6.0 * oracle::kl(la, ln)).epsilon(1e-10));
  }
}

TEST_CASE("mart loss: fixtures and oracle equivalence") {
  std::vector<int64_t> y{0, 1};
  SUBCASE("confident correct natural prediction silences the regularizer") {
    Tensor<double> ln(Shape{2, 2}, {60.0, -60.0, -60.0, 60.0});  // p_y ~ 1
    Rng rng(9);
    Tensor<double> la = rand_t(rng, {2, 2}, -1.0, 1.0);
    const double v = losses::mart_loss(ad::leaf(ln, false), ad::leaf(la, false), y, 6.0)->value[0];
    // regularizer weight (1 - p_y) vanishes; only the boosted CE term remains
    double bce = 0;
    for (int64_t i = 0; i < 2; ++i) {
      auto pa = oracle::softmax(la.data() + i * 2, 2);
      bce += -std::log(pa[static_cast<size_t>(y[static_cast<size_t>(i)])]);
      bce += -std::log(1.0 - pa[static_cast<size_t>(1 - y[static_cast<size_t>(i)])]);
    }
    CHECK(v == doctest::Approx(bce / 2.0).epsilon(1e-9));
  }
  SUBCASE("identical logits zero the divergence term") {
    Rng rng(10);
    Tensor<double> ln = rand_t(rng, {2, 2}, -1.0, 1.0);
    const double v = losses::mart_loss(ad::leaf(ln, false), ad::leaf(ln, false), y, 6.0)->value[0];
    CHECK(v == doctest::Approx(oracle::mart(ln, ln, y, 6.0)).epsilon(1e-12));
  }
  SUBCASE("two-class fixture matches the straight-line oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor<double> ln = rand_t(rng, {3, 2}, -2.0, 2.0);
      Tensor<double> la = rand_t(rng, {3, 2}, -2.0, 2.0);
      std::vector<int64_t> yy{0, 1, 1};
      const double got =
          losses::mart_loss(ad::leaf(ln, false), ad::leaf(la, false), yy, 6.0)->value[0];
      CHECK(std::abs(got - oracle::mart(ln, la, yy, 6.0)) <= 1e-9);
      CHECK(got >= 0.0);
    }
  }
}

TEST_CASE("robustness objective composes its two terms") {
  Rng rng(12);
  Tensor<double> t = unit_rows(rng, 4, 6);
  Tensor<double> ta = unit_rows(rng, 4, 6);
  std::vector<int64_t> y{0, 1, 0, 1};
  losses::LossParams<double> lp;
  lp.alpha = 1e-5;
  lp.tau = 0.1;

  auto l1 = losses::robustness_loss(ad::leaf(t, false), ad::leaf(ta, false), y, lp);
  std::vector<int64_t> y_cat(y);
  y_cat.insert(y_cat.end(), y.begin(), y.end());
  Tensor<double> cat(Shape{8, 6});
  std::copy_n(t.data(), t.numel(), cat.data());
  std::copy_n(ta.data(), ta.numel(), cat.data() + t.numel());
  const double cosine = losses::cosine_alignment_loss(ad::leaf(t, false), ad::leaf(ta, false))->value[0];
  const double csl =
      losses::multi_positive_contrastive_loss(ad::leaf(cat, false), y_cat, lp.tau)->value[0];
  CHECK(l1->value[0] == doctest::Approx(cosine + lp.alpha * csl).epsilon(1e-14));

  SUBCASE("vanishing alpha leaves the cosine term") {
    lp.alpha = 1e-12;
    auto small = losses::robustness_loss(ad::leaf(t, false), ad::leaf(ta, false), y, lp);
    CHECK(small->value[0] == doctest::Approx(cosine).epsilon(1e-9));
  }
  SUBCASE("natural-only contrastive mode") {
    lp.contrastive_inputs = losses::ContrastiveInputs::natural;
    auto nat_only = losses::robustness_loss(ad::leaf(t, false), ad::leaf(ta, false), y, lp);
    const double csl_nat =
        losses::multi_positive_contrastive_loss(ad::leaf(t, false), y, lp.tau)->value[0];
    CHECK(nat_only->value[0] == doctest::Approx(cosine + lp.alpha * csl_nat).epsilon(1e-14));
  }
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(13);
  const double h = 1e-6, rtol = 1e-3;
  auto fd_check = [&](const std::function<V(const V&)>& build, Tensor<double> x) {
    auto leaf = ad::leaf(x, true);
    auto loss = build(leaf);
    ad::backward(loss);
    auto eval = [&](const Tensor<double>& probe) { return build(ad::leaf(probe, false))->value[0]; };
    for (int64_t i = 0; i < x.numel(); ++i) {
      Tensor<double> p = x, m = x;
      p[i] += h;
      m[i] -= h;
      const double fd = (eval(p) - eval(m)) / (2 * h);
      const double adg = leaf->grad.empty() ? 0.0 : leaf->grad[i];
      CHECK(std::abs(adg - fd) <= rtol * std::max({std::abs(fd), std::abs(adg), 1e-4}));
    }
  };
  std::vector<int64_t> y{0, 1, 0, 1};

  // Eq-style alignment loss through both arguments
  Tensor<double> ta = unit_rows(rng, 4, 5);
  fd_check([&](const V& v) { return losses::cosine_alignment_loss(v, ad::leaf(ta, false)); },
           unit_rows(rng, 4, 5));
  // contrastive through the features
  fd_check([&](const V& v) { return losses::multi_positive_contrastive_loss(v, y, 0.3); },
           unit_rows(rng, 4, 5));
  // L2 variants through natural and adversarial logits
  Tensor<double> la = rand_t(rng, {4, 3}, -1.5, 1.5);
  fd_check([&](const V& v) { return losses::trades_loss(v, ad::leaf(la, false), y, 6.0); },
           rand_t(rng, {4, 3}, -1.5, 1.5));
  fd_check([&](const V& v) { return losses::trades_loss(ad::leaf(la, false), v, y, 6.0); },
           rand_t(rng, {4, 3}, -1.5, 1.5));
  fd_check([&](const V& v) { return losses::mart_loss(v, ad::leaf(la, false), y, 6.0); },
           rand_t(rng, {4, 3}, -1.5, 1.5));
  fd_check([&](const V& v) { return losses::mart_loss(ad::leaf(la, false), v, y, 6.0); },
           rand_t(rng, {4, 3}, -1.5, 1.5));
}

TEST_CASE("loss parameter validation") {
  losses::LossParams<double> lp;
  CHECK_NOTHROW(lp.validate());
  lp.alpha = 0.0;
  CHECK_THROWS_AS(lp.validate(), std::invalid_argument);
  lp.alpha = 1e-5;
  lp.tau = 0.0;
  CHECK_THROWS_AS(lp.validate(), std::invalid_argument);
  lp.tau = 0.1;
  lp.inv_lambda = -1.0;
  CHECK_THROWS_AS(lp.validate(), std::invalid_argument);
}
