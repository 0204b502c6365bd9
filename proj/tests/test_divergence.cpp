#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "ifsl/divergence.hpp"
#include "ifsl/evaluation.hpp"
#include "ifsl/rng.hpp"

using namespace ifsl;

namespace {

Tensor gaussian(Rng& rng, std::size_t n, std::size_t d, double shift = 0.0) {
  Tensor t = Tensor::matrix(n, d);
  for (double& v : t.data()) v = rng.normal() + shift;
  return t;
}

double rbf(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j, double sigma) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) s += (a(i, k) - b(j, k)) * (a(i, k) - b(j, k));
  return std::exp(-s / (2.0 * sigma * sigma));
}

double naive_mmd2(const Tensor& a, const Tensor& b, double sigma, bool unbiased) {
  const double n = double(a.rows()), m = double(b.rows());
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.rows(); ++j)
      if (!unbiased || i != j) xx += rbf(a, i, a, j, sigma);
  for (std::size_t i = 0; i < b.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j)
      if (!unbiased || i != j) yy += rbf(b, i, b, j, sigma);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) xy += rbf(a, i, b, j, sigma);
  if (unbiased) return xx / (n * (n - 1)) + yy / (m * (m - 1)) - 2.0 * xy / (n * m);
  return xx / (n * n) + yy / (m * m) - 2.0 * xy / (n * m);
}

}  // namespace

TEST_CASE("MMD estimator") {
  Rng rng(1);
  SUBCASE("identical multisets give exactly zero") {
    const Tensor a = gaussian(rng, 7, 3);
    Tensor shuffled = Tensor::matrix(7, 3);
    const std::size_t order[] = {3, 0, 6, 1, 5, 2, 4};
    for (std::size_t r = 0; r < 7; ++r)
      for (std::size_t c = 0; c < 3; ++c) shuffled(r, c) = a(order[r], c);
    CHECK(mmd2(a, a, 1.3, MmdEstimator::kBiased) == 0.0);
    CHECK(mmd2(a, shuffled, 1.3, MmdEstimator::kBiased) == 0.0);
  }
  SUBCASE("single points have a closed form") {
    const Tensor x = Tensor::row({1.0, 2.0}), y = Tensor::row({0.0, -1.0});
    const double sigma = 1.7;
    CHECK(mmd2(x, y, sigma, MmdEstimator::kBiased) ==
          doctest::Approx(2.0 - 2.0 * std::exp(-10.0 / (2.0 * sigma * sigma))).epsilon(1e-12));
  }
  SUBCASE("n=m=5 matches a double-loop kernel sum") {
    const Tensor a = gaussian(rng, 5, 4), b = gaussian(rng, 5, 4, 0.5);
    CHECK(std::abs(mmd2(a, b, 0.9, MmdEstimator::kBiased) - naive_mmd2(a, b, 0.9, false)) <= 1e-10);
    CHECK(std::abs(mmd2(a, b, 0.9, MmdEstimator::kUnbiased) - naive_mmd2(a, b, 0.9, true)) <= 1e-10);
  }
  SUBCASE("symmetric in its arguments") {
    const Tensor a = gaussian(rng, 6, 2), b = gaussian(rng, 9, 2, 1.0);
    CHECK(mmd2(a, b, 1.0) == mmd2(b, a, 1.0));
  }
  SUBCASE("bandwidth must be positive") {
    const Tensor a = gaussian(rng, 3, 2);
    CHECK_THROWS_AS(mmd2(a, a, 0.0), std::invalid_argument);
  }
}

TEST_CASE("permutation test") {
  Rng rng(2);
  int accepted = 0;
  for (int t = 0; t < 20; ++t) {
    const Tensor a = gaussian(rng, 30, 3), b = gaussian(rng, 30, 3);
    accepted += !mmd_permutation_test(a, b, 200, 100 + t).rejected();
  }
  CHECK(accepted >= 18);
  const Tensor a = gaussian(rng, 30, 3), b = gaussian(rng, 30, 3, 1.5);
  const auto r = mmd_permutation_test(a, b, 200, 7);
  CHECK(r.rejected());
  CHECK(r.p_value < 0.05);
}

TEST_CASE("proxy A-distance") {
  Rng rng(3);
  SUBCASE("identically distributed samples are indistinguishable") {
    const double p = pad(gaussian(rng, 400, 4), gaussian(rng, 400, 4), 1);
    CHECK(p >= 0.0);
    CHECK(p < 0.35);
  }
  SUBCASE("separable domains reach the bound") {
    CHECK(pad(gaussian(rng, 100, 4, -6.0), gaussian(rng, 100, 4, 6.0), 1) == 2.0);
  }
  SUBCASE("mid separation is bounded and stable across seeds") {
    const Tensor a = gaussian(rng, 200, 4), b = gaussian(rng, 200, 4, 0.5);
    double lo = 2.0, hi = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
      const double p = pad(a, b, s);
      CHECK(p >= 0.0);
      CHECK(p <= 2.0);
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
    CHECK(hi - lo <= 0.4);
  }
  SUBCASE("too few samples are rejected") {
    CHECK_THROWS_AS(pad(gaussian(rng, 5, 2), gaussian(rng, 50, 2)), std::invalid_argument);
  }
}

TEST_CASE("similarity weights and TKL") {
  SUBCASE("uniform weights") {
    const auto w = weights_from_distances(WeightScheme::kUniform, {3, 1, 4, 1, 5});
    for (double v : w.weights) CHECK(v == 0.2);
  }
  SUBCASE("proportional rule") {
    const auto w = weights_from_distances(WeightScheme::kMmd, {1.0, 3.0});
    CHECK(w.weights == std::vector<double>{0.25, 0.75});
  }
  SUBCASE("a single validation set always has weight one") {
    for (WeightScheme s : kAllSchemes) CHECK(weights_from_distances(s, {0.37}).weights == std::vector<double>{1.0});
  }
  SUBCASE("negative noise is clamped, all-zero falls back to uniform") {
    const auto w = weights_from_distances(WeightScheme::kMmd, {-0.1, 0.3});
    CHECK(w.weights == std::vector<double>{0.0, 1.0});
    const auto z = weights_from_distances(WeightScheme::kMmd, {-0.1, 0.0});
    CHECK(z.fell_back);
    CHECK(z.weights == std::vector<double>{0.5, 0.5});
  }
  SUBCASE("weights sum to one") {
    Rng rng(4);
    for (int t = 0; t < 50; ++t) {
      std::vector<double> d(1 + rng.index(6));
      for (double& v : d) v = rng.uniform(0.0, 10.0);
      double s = 0.0;
      for (double v : weights_from_distances(WeightScheme::kPad, d).weights) s += v;
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
  SUBCASE("TKL") {
    CHECK(tkl_uniform({2.0, 4.0}) == 3.0);
    CHECK(tkl({2.0, 4.0}, {0.25, 0.75}) == 3.5);
    for (WeightScheme s : kAllSchemes) CHECK(tkl({0.0, 0.0, 0.0}, weights_from_distances(s, {1, 2, 3}).weights) == 0.0);
    CHECK_THROWS_AS(tkl({1.0}, {0.5, 0.5}), std::invalid_argument);
  }
  SUBCASE("scheme names round-trip") {
    for (WeightScheme s : kAllSchemes) CHECK(parse_scheme(scheme_name(s)) == s);
    CHECK_THROWS_AS(parse_scheme("cosine"), std::invalid_argument);
  }
}

TEST_CASE("accuracy") {
  const std::vector<std::size_t> labels = {0, 1, 2, 0, 1, 2};
  CHECK(accuracy(labels, labels) == 1.0);
  const std::vector<std::size_t> constant(6, 1);
  CHECK(accuracy(constant, labels) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const auto& w = testing::toy_world();
  const auto& ds = w.datasets[2];
  const auto cls = w.model.build_classifier(ds.class_names(), kEvalTemplate);
  std::size_t correct = 0, total = 0;
  for (std::size_t i : ds.indices(Split::kTest)) {
    correct += classify(w.model.encode_image(ds.samples[i].tokens).data(), cls).predicted == ds.samples[i].class_id;
    ++total;
  }
  CHECK(zero_shot_accuracy(w.model, ds) == double(correct) / double(total));
}

TEST_CASE("dataset-level divergences") {
  // An untrained encoder keeps the input geometry, so a sibling domain under
  // the same branch must look closer than a distant one.
  auto home_g = testing::toy_generator("home", 0);
  home_g.test_per_class = 6;
  auto sib_g = home_g;
  sib_g.name = "sib";
  sib_g.branch = {0, 1};
  auto far_g = home_g;
  far_g.name = "far";
  far_g.branch = {6, 0};
  home_g.active = sib_g.active = {0, 1, 2, 3, 4, 5};
  far_g.active = {10, 11, 12, 13, 14, 15};
  const auto home = generate(home_g), sib = generate(sib_g), far = generate(far_g);
  const MiniClipModel m(testing::toy_model_config(), build_vocab({&home, &sib, &far}, default_templates()), 2);

  CHECK(std::abs(unified_mmd(home, home, m, MmdEstimator::kBiased)) <= 1e-12);
  CHECK(unified_mmd(home, far, m) == unified_mmd(far, home, m));
  CHECK(unified_mmd(home, far, m) > unified_mmd(home, sib, m));
  CHECK(taxonomy_distance(home, far) > taxonomy_distance(home, sib));

  const auto w = compute_weights(home, {&sib, &far}, WeightScheme::kTaxonomy, m);
  CHECK(w.weights[1] > w.weights[0]);

  CHECK(pad(home, far, m) >= pad(home, sib, m));
  const auto r = knowledge_report(m, m, home, {&sib, &far}, {std::begin(kAllSchemes), std::end(kAllSchemes)});
  for (double k : r.knowledge_lost) CHECK(k == 0.0);
  for (WeightScheme s : kAllSchemes) CHECK(r.tkl_for(s) == 0.0);
  CHECK(r.csv().rfind("set,acc_before,acc_after,knowledge_lost\n", 0) == 0);
}
