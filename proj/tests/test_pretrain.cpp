#include <cmath>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "ifsl/audit.hpp"
#include "ifsl/evaluation.hpp"
#include "ifsl/pretrain.hpp"
#include "ifsl/rng.hpp"

using namespace ifsl;

namespace {

Tensor unit_rows(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t = Tensor::matrix(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    double n = 0.0;
    for (std::size_t j = 0; j < c; ++j) n += (t(i, j) = rng.normal()) * t(i, j);
    for (std::size_t j = 0; j < c; ++j) t(i, j) /= std::sqrt(n);
  }
  return t;
}

// Double-loop symmetric InfoNCE.
double naive_infonce(const Tensor& img, const Tensor& txt, double tau) {
  const std::size_t b = img.rows();
  auto sim = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < img.cols(); ++k) s += img(i, k) * txt(j, k);
    return tau * s;
  };
  double li = 0.0, lt = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double zi = 0.0, zt = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      zi += std::exp(sim(i, j));
      zt += std::exp(sim(j, i));
    }
    li += std::log(zi) - sim(i, i);
    lt += std::log(zt) - sim(i, i);
  }
  return 0.5 * (li + lt) / double(b);
}

}  // namespace

TEST_CASE("contrastive loss reference cases") {
  SUBCASE("perfect alignment with a sharp temperature approaches zero") {
    const Tensor e = Tensor::identity(4);
    CHECK(contrastive_loss(e, e, 200.0) < 1e-12);
  }
  SUBCASE("uniform logits give log B") {
    const Tensor e = Tensor::from_rows({{1, 0}, {1, 0}, {1, 0}});
    CHECK(contrastive_loss(e, e, 7.0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }
  SUBCASE("random B=4 matches a double-loop oracle") {
    Rng rng(12);
    const Tensor a = unit_rows(rng, 4, 6), b = unit_rows(rng, 4, 6);
    CHECK(std::abs(contrastive_loss(a, b, 3.5) - naive_infonce(a, b, 3.5)) <= 1e-10);
  }
  SUBCASE("a single pair is rejected") {
    const Tensor e = Tensor::identity(1);
    CHECK_THROWS_AS(contrastive_loss(e, e, 1.0), std::invalid_argument);
  }
}

TEST_CASE("recorded contrastive loss agrees with the plain one and with finite differences") {
  Rng rng(13);
  const Tensor a = unit_rows(rng, 5, 4), b = unit_rows(rng, 5, 4);
  Tape tape;
  Var va = tape.leaf(a), vb = tape.leaf(b), vt = tape.leaf(Tensor::scalar(2.0));
  Var loss = contrastive_loss(tape, va, vb, vt);
  CHECK(std::abs(tape.value(loss)[0] - contrastive_loss(a, b, 2.0)) <= 1e-12);
  tape.backward(loss);
  const Tensor ga = tape.grad(va);
  std::vector<double> x(a.data().begin(), a.data().end());
  auto f = [&](const std::vector<double>& xs) { return contrastive_loss(Tensor(a.shape(), xs), b, 2.0); };
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(testing::relative_error(ga[i], testing::central_difference(f, x, i)) < 1e-6);
  }
  auto ft = [&](const std::vector<double>& t) { return contrastive_loss(a, b, t[0]); };
  std::vector<double> t{2.0};
  CHECK(testing::relative_error(tape.grad(vt)[0], testing::central_difference(ft, t, 0)) < 1e-6);
}

TEST_CASE("vocabulary") {
  const auto ds = generate(testing::toy_generator("voc", 0));
  const auto vocab = build_vocab({&ds}, default_templates());
  std::set<std::string> words(vocab.begin(), vocab.end());
  CHECK(words.size() == vocab.size());
  for (const auto& n : ds.class_names()) CHECK(words.count(n));
  CHECK(words.count("photo"));
  // A class word colliding with a template word would make prompts ambiguous.
  MultimodalDataset clash = ds;
  clash.classes[0].name = "photo";
  CHECK_THROWS_AS(build_vocab({&clash}, default_templates()), std::invalid_argument);
}

TEST_CASE("batches hold unique classes and exclusions are never sampled") {
  const auto a = generate(testing::toy_generator("pa", 0));
  const auto b = generate(testing::toy_generator("pb", 1));
  PretrainConfig pc;
  pc.model = testing::toy_model_config();
  pc.steps = 12;
  pc.exclude = {{0, 2}, {1, 0}};
  bool unique = true, saw_excluded = false, batch_size_ok = true;
  pc.observer = [&](std::size_t, const std::vector<ClassRef>& classes, const std::vector<std::size_t>& chosen) {
    std::set<ClassRef> seen(classes.begin(), classes.end());
    unique = unique && seen.size() == classes.size();
    batch_size_ok = batch_size_ok && classes.size() == 6 && chosen.size() == 6;
    for (std::size_t i = 0; i < classes.size(); ++i) {
      const auto& ds = classes[i].dataset == 0 ? a : b;
      if (ds.samples[chosen[i]].class_id != classes[i].class_id) saw_excluded = true;
      if (ds.samples[chosen[i]].split != Split::kTrain) saw_excluded = true;
      if (pc.exclude.count(classes[i])) saw_excluded = true;
    }
  };
  AuditLog::instance().clear();
  pretrain({&a, &b}, pc);
  CHECK(unique);
  CHECK(batch_size_ok);
  CHECK_FALSE(saw_excluded);
  for (std::size_t i : AuditLog::instance().samples("pretrain", "pa")) CHECK(a.samples[i].class_id != 2);
  for (std::size_t i : AuditLog::instance().samples("pretrain", "pb")) CHECK(b.samples[i].class_id != 0);
  CHECK_FALSE(AuditLog::instance().samples("pretrain", "pa").empty());
}

TEST_CASE("pretraining is deterministic and validates its config") {
  const auto a = generate(testing::toy_generator("da", 0));
  PretrainConfig pc;
  pc.model = testing::toy_model_config();
  pc.steps = 5;
  pc.seed = 4;
  const auto r1 = pretrain({&a}, pc), r2 = pretrain({&a}, pc);
  CHECK(r1.model.parameters() == r2.model.parameters());
  CHECK(r1.log.loss == r2.log.loss);
  CHECK(r1.log.loss.size() == 5);
  pc.lr = 0.0;
  CHECK_THROWS_AS(pretrain({&a}, pc), std::invalid_argument);
  pc.lr = 1e-3;
  pc.templates = {"no slot"};
  CHECK_THROWS_AS(pretrain({&a}, pc), std::invalid_argument);
  pc.templates = default_templates();
  for (std::uint32_t c = 0; c < 4; ++c) pc.exclude.insert({0, c});
  CHECK_THROWS_AS(pretrain({&a}, pc), std::invalid_argument);
}

TEST_CASE("pretraining learns the toy roster") {
  const auto& w = testing::toy_world();
  for (const auto& d : w.datasets) CHECK(zero_shot_accuracy(w.model, d) > 0.5);
  CHECK(w.model.temperature() <= 100.0);
}
