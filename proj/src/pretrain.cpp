#include "ifsl/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ifsl/audit.hpp"
#include "ifsl/evaluation.hpp"
#include "ifsl/rng.hpp"

namespace ifsl {

namespace {
constexpr double kMinTemperature = 1.0;
}  // namespace

std::vector<std::string> default_templates() {
  return {"a photo of a {class}",        "an image of a {class}",   "a picture of the {class}",
          "a blurry photo of a {class}", "a close up of the {class}", "a rendering of a {class}",
          "a good photo of the {class}", "itap of a {class}"};
}

std::vector<std::string> build_vocab(const std::vector<const MultimodalDataset*>& datasets,
                                     const std::vector<std::string>& templates) {
  std::vector<std::string> vocab;
  std::set<std::string> seen;
  auto push = [&](const std::string& w) {
    if (seen.insert(w).second) vocab.push_back(w);
  };
  std::vector<std::string> all = templates;
  all.push_back(kEvalTemplate);
  for (const auto& t : all) {
    std::istringstream is(t);
    std::string w;
    while (is >> w)
      if (w != "{class}") push(w);
  }
  const std::set<std::string> template_words = seen;
  for (const auto* ds : datasets) {
    for (const auto& w : ds->vocab()) {
      if (template_words.count(w)) {
        throw std::invalid_argument("class word '" + w + "' collides with a template word");
      }
      push(w);
    }
  }
  return vocab;
}

void PretrainConfig::validate() const {
  model.validate();
  if (!(lr > 0.0)) throw std::invalid_argument("pretrain: learning rate must be > 0");
  if (!(max_temperature >= kMinTemperature)) throw std::invalid_argument("pretrain: max_temperature must be >= 1");
  if (templates.empty()) throw std::invalid_argument("pretrain: template pool is empty");
  for (const auto& t : templates) {
    if (t.find("{class}") == std::string::npos) {
      throw std::invalid_argument("pretrain: template without {class}: " + t);
    }
  }
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  out << "step,loss\n" << std::setprecision(10);
  for (std::size_t i = 0; i < loss.size(); ++i) out << i << ',' << loss[i] << '\n';
}

double contrastive_loss(const Tensor& image_embeds, const Tensor& text_embeds, double tau) {
  Tape tape;
  Var loss = contrastive_loss(tape, tape.constant(image_embeds), tape.constant(text_embeds),
                              tape.constant(Tensor::scalar(tau)));
  return tape.value(loss)[0];
}

Var contrastive_loss(Tape& tape, Var image_embeds, Var text_embeds, Var tau) {
  const std::size_t b = tape.value(image_embeds).rows();
  if (b < 2) throw std::invalid_argument("contrastive_loss: batch size must be >= 2");
  if (tape.value(text_embeds).rows() != b) throw ShapeError("contrastive_loss: batch mismatch");
  std::vector<std::size_t> diag(b);
  for (std::size_t i = 0; i < b; ++i) diag[i] = i;
  Var logits = tape.scale_by(tape.matmul_nt(image_embeds, text_embeds), tau);
  Var i2t = tape.cross_entropy(logits, diag);
  Var t2i = tape.cross_entropy(tape.transpose(logits), diag);
  return tape.scale(tape.add(i2t, t2i), 0.5);
}

PretrainResult pretrain(const std::vector<const MultimodalDataset*>& datasets,
                        const PretrainConfig& config) {
  config.validate();
  if (datasets.empty()) throw std::invalid_argument("pretrain: no datasets");
  std::vector<ClassRef> included;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    datasets[d]->validate();
    if (datasets[d]->n_tokens != config.model.image_tokens || datasets[d]->dim != config.model.hidden_dim) {
      throw ShapeError("pretrain: dataset " + datasets[d]->name + " token grid does not match model");
    }
    for (const auto& c : datasets[d]->classes) {
      ClassRef ref{d, c.id};
      if (!config.exclude.count(ref)) included.push_back(ref);
    }
  }
  if (included.empty()) throw std::invalid_argument("pretrain: every class is excluded");
  if (included.size() < 2) throw std::invalid_argument("pretrain: need at least two included classes");

  MiniClipModel model(config.model, build_vocab(datasets, config.templates), mix_seed(config.seed, 1));
  Rng rng(mix_seed(config.seed, 2));

  // Train pools and tokenized prompts per included class.
  std::vector<std::vector<std::size_t>> pools;
  std::vector<std::vector<std::vector<std::size_t>>> prompts;
  for (const auto& ref : included) {
    const auto& ds = *datasets[ref.dataset];
    pools.push_back(ds.indices(Split::kTrain, ref.class_id));
    std::vector<std::vector<std::size_t>> per_template;
    for (const auto& t : config.templates) {
      per_template.push_back(model.tokenize(format_prompt(t, ds.classes[ref.class_id].name)));
    }
    prompts.push_back(std::move(per_template));
  }

  auto& params = model.parameters();
  std::vector<Tensor*> targets;
  for (std::size_t i = 0; i < params.count(); ++i) targets.push_back(&params.at(i));
  Adam adam(AdamOptions{config.lr});
  TrainLog log;
  log.loss.reserve(config.steps);
  const std::size_t temp_index = model.temperature_index();

  std::vector<std::size_t> chosen(included.size());
  std::vector<std::vector<std::size_t>> texts(included.size());
  for (std::size_t step = 0; step < config.steps; ++step) {
    for (std::size_t c = 0; c < included.size(); ++c) {
      chosen[c] = pools[c][rng.index(pools[c].size())];
      texts[c] = prompts[c][rng.index(prompts[c].size())];
    }
    if (config.observer) config.observer(step, included, chosen);
    for (std::size_t c = 0; c < included.size(); ++c) {
      AuditLog::instance().record("pretrain", datasets[included[c].dataset]->name, {&chosen[c], 1});
    }

    Tape tape;
    ModelGraph graph(tape, model, true);
    std::vector<Var> img_rows;
    img_rows.reserve(included.size());
    for (std::size_t c = 0; c < included.size(); ++c) {
      img_rows.push_back(graph.encode_image(datasets[included[c].dataset]->samples[chosen[c]].tokens));
    }
    Var images = tape.concat_rows(img_rows);
    Var text = graph.encode_texts(texts);
    Var loss = contrastive_loss(tape, images, text, graph.temperature());
    const double value = tape.value(loss)[0];
    if (!std::isfinite(value)) throw NumericError("pretrain: divergent loss at step " + std::to_string(step));
    log.loss.push_back(value);
    tape.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(targets.size());
    for (Var leaf : graph.leaves()) grads.push_back(tape.grad(leaf));
    adam.step(targets, grads);
    double& tau = params.at(temp_index)[0];
    tau = std::clamp(tau, kMinTemperature, config.max_temperature);
  }
  params.round_to_f32();

  double acc = 0.0;
  std::size_t groups = 0;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    std::vector<std::uint32_t> classes;
    for (const auto& ref : included)
      if (ref.dataset == d) classes.push_back(ref.class_id);
    if (classes.size() < 2) continue;
    acc += zero_shot_accuracy(model, *datasets[d], classes, Split::kTest);
    ++groups;
  }
  log.probe_accuracy = groups ? acc / double(groups) : 0.0;
  return {std::move(model), std::move(log)};
}

}  // namespace ifsl
