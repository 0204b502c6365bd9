#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "ifsl/audit.hpp"
#include "ifsl/evaluation.hpp"
#include "ifsl/rng.hpp"
#include "ifsl/tape.hpp"
#include "ifsl/unlearn.hpp"

using namespace ifsl;

namespace {

// Zero-shot cross-entropy of one sample, through the public inference path only.
double sample_loss(const MiniClipModel& m, const MultimodalDataset& ds, std::size_t i) {
  const auto w = m.build_classifier(ds.class_names(), kEvalTemplate);
  const Tensor logits = matmul_nt(m.encode_image(ds.samples[i].tokens), w.weights);
  return cross_entropy(logits.data(), ds.samples[i].class_id, 1.0);
}

}  // namespace

TEST_CASE("dampening rule") {
  SUBCASE("selected parameter is scaled by beta") {
    CHECK(dampen_value(2.0, 4.0, 1.0, {1.0, 1.0}) == 0.5);
  }
  SUBCASE("unselected parameter is untouched") {
    CHECK(dampen_value(2.0, 0.5, 1.0, {1.0, 1.0}) == 2.0);
  }
  SUBCASE("beta is clamped at one") {
    CHECK(dampen_value(2.0, 4.0, 1.0, {1.0, 10.0}) == 2.0);
  }
  SUBCASE("zero retain importance removes the parameter") {
    CHECK(dampen_value(-3.0, 1e-6, 0.0, {10.0, 1.0}) == 0.0);
  }
  SUBCASE("zero forget importance never selects") {
    CHECK(dampen_value(-3.0, 0.0, 0.0, {10.0, 1.0}) == -3.0);
  }
  SUBCASE("bad settings") {
    CHECK_THROWS_AS((DampeningConfig{0.0, 1.0}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((DampeningConfig{1.0, -1.0}.validate()), std::invalid_argument);
  }
}

TEST_CASE("dampen applies the rule element-wise") {
  const auto& w = testing::toy_world();
  const std::size_t n = w.model.parameters().total_size();
  FisherDiagonal ff{std::vector<double>(n, 0.0), FisherSource::kForget, 1};
  FisherDiagonal fr{std::vector<double>(n, 1.0), FisherSource::kRetain, 1};
  ff.values[3] = 4.0;
  ff.values[10] = 0.5;
  const DampenResult r = dampen(w.model, ff, fr, {1.0, 1.0});
  CHECK(r.dampened == 1);
  const auto before = w.model.parameters().flatten(), after = r.model.parameters().flatten();
  for (std::size_t i = 0; i < n; ++i) CHECK(after[i] == (i == 3 ? 0.25 * before[i] : before[i]));
  fr.values.pop_back();
  CHECK_THROWS_AS(dampen(w.model, ff, fr, {1.0, 1.0}), std::invalid_argument);
}

TEST_CASE("Fisher diagonal") {
  const auto& w = testing::toy_world();
  const auto& ds = w.datasets[0];
  const auto train = ds.indices(Split::kTrain);
  const std::vector<std::size_t> three = {train[0], train[7], train[13]};
  const FisherDiagonal f = estimate_fisher(w.model, {{&ds, three}}, FisherSource::kForget);
  CHECK(f.samples == 3);
  CHECK(f.values.size() == w.model.parameters().total_size());

  SUBCASE("a parameter without gradient gets zero importance") {
    // Token embedding of a template word that the evaluation prompt never uses.
    const std::size_t id = w.model.tokenizer().encode("blurry", 1)[0];
    const auto& store = w.model.parameters();
    const std::size_t table = w.model.text_index().input_weight;
    const std::size_t width = store.at(table).cols();
    for (std::size_t j = 0; j < width; ++j) CHECK(f.values[store.offset(table) + id * width + j] == 0.0);
  }
  SUBCASE("duplicating every sample leaves the estimate unchanged") {
    const FisherDiagonal d = estimate_fisher(
        w.model, {{&ds, {three[0], three[0], three[1], three[1], three[2], three[2]}}}, FisherSource::kForget);
    for (std::size_t i = 0; i < f.values.size(); ++i) CHECK(d.values[i] == doctest::Approx(f.values[i]).epsilon(1e-12));
  }
  SUBCASE("matches squared finite-difference gradients") {
    MiniClipModel probe = w.model;
    auto flat = probe.parameters().flatten();
    // Probe the most important coordinates plus a random spread.
    std::vector<std::size_t> coords;
    for (std::size_t k = 0; k < 5; ++k) {
      std::size_t best = 0;
      for (std::size_t i = 0; i < f.values.size(); ++i)
        if (f.values[i] > f.values[best] && std::find(coords.begin(), coords.end(), i) == coords.end()) best = i;
      coords.push_back(best);
    }
    Rng rng(21);
    for (int k = 0; k < 25; ++k) coords.push_back(rng.index(flat.size()));
    for (std::size_t c : coords) {
      double expect = 0.0;
      for (std::size_t s : three) {
        auto loss = [&](const std::vector<double>& x) {
          probe.parameters().assign_flat(x);
          return sample_loss(probe, ds, s);
        };
        const double g = testing::central_difference(loss, flat, c);
        expect += g * g / 3.0;
      }
      probe.parameters().assign_flat(flat);
      if (expect < 1e-14 && f.values[c] < 1e-14) continue;
      CHECK(testing::relative_error(f.values[c], expect) < 1e-6 + 1e-5 * (expect < 1e-8));
    }
  }
  SUBCASE("estimation is recorded in the audit log") {
    CHECK(AuditLog::instance().samples("unlearn", ds.name).count(three[1]));
  }
  SUBCASE("empty input is rejected") {
    CHECK_THROWS_AS(estimate_fisher(w.model, {}, FisherSource::kRetain), std::invalid_argument);
  }
}

TEST_CASE("knowledge-loss levels") {
  const auto all = KnowledgeLossLevel::all();
  REQUIRE(all.size() == 4);
  CHECK(all[0].name() == "default");
  CHECK(all[0].accepts(5.0));
  CHECK_FALSE(all[0].accepts(5.01));
  CHECK(KnowledgeLossLevel::parse("L50").target == 50.0);
  CHECK(KnowledgeLossLevel::parse("L90").accepts(85.0));
  CHECK_FALSE(KnowledgeLossLevel::parse("L25").accepts(19.0));
  CHECK_THROWS_AS(KnowledgeLossLevel::parse("L70"), std::invalid_argument);
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i].target > all[i - 1].target);
}

TEST_CASE("calibration on the toy roster") {
  const auto& w = testing::toy_world();
  const auto& d = w.datasets;
  CHECK_THROWS_AS(prepare_unlearning(w.model, d[0], {&d[1]}, {&d[1]}), std::invalid_argument);
  const UnlearningProblem p = prepare_unlearning(w.model, d[0], {&d[1]}, {&d[2]});
  const auto [acc0, tkl0] = p.measure(w.model);
  CHECK(tkl0 == 0.0);
  CHECK(acc0 == doctest::Approx(zero_shot_accuracy(w.model, d[0])));
  const CalibrationResult r = calibrate(p, KnowledgeLossLevel::parse("default"));
  REQUIRE(r.success);
  CHECK(r.tkl <= 5.0);
  CHECK(r.forget_accuracy <= 1.5 / double(d[0].classes.size()) + 1e-12);
  CHECK_FALSE(r.trials.empty());
  // Reapplying the chosen settings reproduces the measurement.
  const auto un = dampen(w.model, p.forget_fisher, p.retain_fisher, r.config).model;
  const auto [acc, tkl] = p.measure(un);
  CHECK(acc == r.forget_accuracy);
  CHECK(tkl == r.tkl);
  // Held-out sets never feed a gradient.
  CHECK(AuditLog::instance().samples("unlearn", d[2].name).empty());
}
