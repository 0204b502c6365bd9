#include "ifsl/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <stdexcept>

#include "ifsl/audit.hpp"
#include "ifsl/divergence.hpp"
#include "ifsl/evaluation.hpp"

namespace ifsl {

FisherDiagonal estimate_fisher(const MiniClipModel& model, const std::vector<FisherBatch>& batches,
                               FisherSource source, const FisherOptions& options) {
  const auto& params = model.parameters();
  FisherDiagonal out;
  out.source = source;
  out.values.assign(params.total_size(), 0.0);
  std::vector<std::size_t> offsets(params.count());
  for (std::size_t p = 0; p < params.count(); ++p) offsets[p] = params.offset(p);

  for (const auto& batch : batches) {
    if (!batch.dataset) throw std::invalid_argument("estimate_fisher: null dataset");
    const auto& ds = *batch.dataset;
    const auto samples = batch.samples.empty() ? ds.indices(Split::kTrain) : batch.samples;
    AuditLog::instance().record("unlearn", ds.name, samples);

    Tape tape;
    ModelGraph graph(tape, model, true);
    std::vector<std::vector<std::size_t>> prompts;
    for (const auto& c : ds.classes) prompts.push_back(model.tokenize(format_prompt(options.templ, c.name)));
    const Var classifier = graph.encode_texts(prompts);
    const Var tau = graph.temperature();
    const std::size_t mark = tape.size();
    for (std::size_t i : samples) {
      const Sample& s = ds.samples.at(i);
      const Var f = graph.encode_image(s.tokens);
      Var logits = tape.matmul_nt(f, classifier);
      if (options.scale_by_temperature) logits = tape.scale_by(logits, tau);
      const Var loss = tape.cross_entropy(logits, {std::size_t(s.class_id)});
      tape.backward(loss);
      for (std::size_t p = 0; p < params.count(); ++p) {
        const Tensor g = tape.grad(graph.leaves()[p]);
        double* dst = out.values.data() + offsets[p];
        for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k] * g[k];
      }
      tape.truncate(mark);
      ++out.samples;
    }
  }
  if (out.samples == 0) throw std::invalid_argument("estimate_fisher: empty sample set");
  for (double& v : out.values) v /= double(out.samples);
  return out;
}

void DampeningConfig::validate() const {
  if (!(alpha > 0.0) || !(lambda > 0.0)) throw std::invalid_argument("dampening: alpha and lambda must be > 0");
}

double dampen_value(double theta, double f_forget, double f_retain, const DampeningConfig& cfg) {
  if (!(f_forget > cfg.alpha * f_retain)) return theta;
  const double beta = std::min(cfg.lambda * f_retain / f_forget, 1.0);
  return beta * theta;
}

DampenResult dampen(const MiniClipModel& model, const FisherDiagonal& forget,
                    const FisherDiagonal& retain, const DampeningConfig& cfg) {
  cfg.validate();
  std::vector<double> flat = model.parameters().flatten();
  if (forget.values.size() != flat.size() || retain.values.size() != flat.size()) {
    throw std::invalid_argument("dampen: Fisher layout does not match the model");
  }
  DampenResult out{model, 0};
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double before = flat[i];
    flat[i] = dampen_value(before, forget.values[i], retain.values[i], cfg);
    out.dampened += forget.values[i] > cfg.alpha * retain.values[i] && flat[i] != before;
  }
  out.model.parameters().assign_flat(flat);
  return out;
}

std::string KnowledgeLossLevel::name() const {
  switch (label) {
    case LevelLabel::kDefault: return "default";
    case LevelLabel::kL25: return "L25";
    case LevelLabel::kL50: return "L50";
    case LevelLabel::kL90: return "L90";
  }
  return "?";
}

std::vector<KnowledgeLossLevel> KnowledgeLossLevel::all() {
  return {{LevelLabel::kDefault, 0.0, 5.0},
          {LevelLabel::kL25, 25.0, 5.0},
          {LevelLabel::kL50, 50.0, 5.0},
          {LevelLabel::kL90, 90.0, 5.0}};
}

KnowledgeLossLevel KnowledgeLossLevel::parse(const std::string& s) {
  for (const auto& l : all())
    if (l.name() == s) return l;
  throw std::invalid_argument("unknown knowledge-loss level: " + s);
}

std::pair<double, double> UnlearningProblem::measure(const MiniClipModel& dampened) const {
  const double forget_acc = zero_shot_accuracy(dampened, *forget);
  std::vector<double> lost;
  for (std::size_t v = 0; v < validation.size(); ++v) {
    lost.push_back(validation_before[v] - 100.0 * zero_shot_accuracy(dampened, *validation[v]));
  }
  return {forget_acc, tkl_uniform(lost)};
}

UnlearningProblem prepare_unlearning(const MiniClipModel& model, const MultimodalDataset& forget,
                                     const std::vector<const MultimodalDataset*>& retain,
                                     const std::vector<const MultimodalDataset*>& validation,
                                     const FisherOptions& fisher) {
  if (retain.empty()) throw std::invalid_argument("unlearning needs at least one retain set");
  if (validation.empty()) throw std::invalid_argument("unlearning needs at least one validation set");
  std::set<std::string> used = {forget.name};
  for (const auto* r : retain) used.insert(r->name);
  for (const auto* v : validation) {
    if (used.count(v->name)) {
      throw std::invalid_argument("validation set " + v->name + " is also a forget or retain set");
    }
  }
  UnlearningProblem p;
  p.model = &model;
  p.forget = &forget;
  p.retain = retain;
  p.validation = validation;
  p.forget_fisher = estimate_fisher(model, {{&forget, {}}}, FisherSource::kForget, fisher);
  std::vector<FisherBatch> rb;
  for (const auto* r : retain) rb.push_back({r, {}});
  p.retain_fisher = estimate_fisher(model, rb, FisherSource::kRetain, fisher);
  for (const auto* v : validation) p.validation_before.push_back(100.0 * zero_shot_accuracy(model, *v));
  return p;
}

CalibrationResult calibrate(const UnlearningProblem& problem, const KnowledgeLossLevel& level,
                            const CalibrationOptions& options) {
  if (options.alphas.empty() || !(options.lambda_min > 0.0) || !(options.lambda_max > options.lambda_min)) {
    throw std::invalid_argument("calibrate: bad search options");
  }
  for (double a : options.alphas)
    if (!(a > 0.0)) throw std::invalid_argument("calibrate: alphas must be > 0");
  // The default level asks for as much forgetting as the budget allows, so
  // its bisection homes in on the upper edge of the window.
  const double aim = level.label == LevelLabel::kDefault ? level.upper() : level.target;
  CalibrationResult result;
  std::optional<std::size_t> best;
  auto better = [](const CalibrationTrial& a, const CalibrationTrial& b) {
    if (a.forget_accuracy != b.forget_accuracy) return a.forget_accuracy < b.forget_accuracy;
    return a.tkl < b.tkl;
  };
  // Bisection on log10(lambda) for one alpha; returns the TKL range seen.
  auto search = [&](double alpha) {
    double lo = std::log10(options.lambda_min), hi = std::log10(options.lambda_max);
    double tmin = std::numeric_limits<double>::infinity(), tmax = -tmin;
    for (std::size_t step = 0; step < options.bisection_steps; ++step) {
      const double mid = 0.5 * (lo + hi);
      const DampeningConfig cfg{alpha, std::pow(10.0, mid)};
      const auto dampened = dampen(*problem.model, problem.forget_fisher, problem.retain_fisher, cfg);
      const auto [facc, t] = problem.measure(dampened.model);
      result.trials.push_back({cfg, facc, t});
      tmin = std::min(tmin, t);
      tmax = std::max(tmax, t);
      if (level.accepts(t) && (!best || better(result.trials.back(), result.trials[*best]))) {
        best = result.trials.size() - 1;
      }
      // Larger lambda dampens less.
      if (t > aim) lo = mid;
      else hi = mid;
    }
    return std::pair{tmin, tmax};
  };

  std::vector<double> alphas = options.alphas;
  std::sort(alphas.begin(), alphas.end(), std::greater<>());  // mildest first
  std::vector<std::pair<double, double>> ranges;
  for (double alpha : alphas) ranges.push_back(search(alpha));

  if (!best) {
    // Look for neighbours whose TKL ranges straddle the target.
    for (std::size_t i = 0; i + 1 < alphas.size() && !best; ++i) {
      if (!(ranges[i].second < aim && ranges[i + 1].first > aim)) continue;
      double mild = alphas[i], strong = alphas[i + 1];
      for (std::size_t r = 0; r < options.alpha_refinements && !best; ++r) {
        const double alpha = std::sqrt(mild * strong);
        const auto [tmin, tmax] = search(alpha);
        if (tmax < aim) mild = alpha;
        else strong = alpha;
        (void)tmin;
      }
      result.refined = best.has_value();
    }
  }

  if (!best) {
    // Report the closest attempt so callers can show what was reached.
    std::size_t closest = 0;
    for (std::size_t i = 1; i < result.trials.size(); ++i) {
      if (std::abs(result.trials[i].tkl - aim) < std::abs(result.trials[closest].tkl - aim)) closest = i;
    }
    const auto& t = result.trials[closest];
    result.config = t.config;
    result.forget_accuracy = t.forget_accuracy;
    result.tkl = t.tkl;
    return result;
  }
  const auto& t = result.trials[*best];
  result.success = true;
  result.config = t.config;
  result.forget_accuracy = t.forget_accuracy;
  result.tkl = t.tkl;
  result.dampened = dampen(*problem.model, problem.forget_fisher, problem.retain_fisher, t.config).dampened;
  return result;
}

}  // namespace ifsl
