#include "ifsl/fewshot.hpp"

#include <algorithm>
#include <stdexcept>

#include "ifsl/audit.hpp"
#include "ifsl/rng.hpp"

namespace ifsl {

using nlohmann::json;

const char* method_name(Method m) {
  switch (m) {
    case Method::kZeroShot: return "zeroshot";
    case Method::kLinear: return "linear";
    case Method::kRes: return "res";
    case Method::kSep: return "sep";
    case Method::kSepRes: return "sepres";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  for (Method m : kAllMethods)
    if (s == method_name(m)) return m;
  throw std::invalid_argument("unknown method: " + s);
}

void AdapterConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("adapter: lr must be > 0");
  if (!(res_alpha >= 0.0)) throw std::invalid_argument("adapter: res_alpha must be >= 0");
  if (!(omega_t >= 0.0) || !(omega_v >= 0.0)) throw std::invalid_argument("adapter: loss weights must be >= 0");
  if (!(prompt_init_std >= 0.0)) throw std::invalid_argument("adapter: prompt_init_std must be >= 0");
  if (templ.find("{class}") == std::string::npos) throw std::invalid_argument("adapter: template without {class}");
}

json AdapterConfig::to_json() const {
  return {{"n_prompts", n_prompts}, {"res_alpha", res_alpha}, {"omega_t", omega_t},
          {"omega_v", omega_v},     {"lr", lr},               {"epochs", epochs},
          {"prompt_init_std", prompt_init_std}, {"template", templ}};
}

AdapterConfig AdapterConfig::from_json(const json& j) {
  AdapterConfig c;
  c.n_prompts = j.value("n_prompts", c.n_prompts);
  c.res_alpha = j.value("res_alpha", c.res_alpha);
  c.omega_t = j.value("omega_t", c.omega_t);
  c.omega_v = j.value("omega_v", c.omega_v);
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.prompt_init_std = j.value("prompt_init_std", c.prompt_init_std);
  c.templ = j.value("template", c.templ);
  c.validate();
  return c;
}

ParameterStore AdapterState::to_store() const {
  ParameterStore s;
  if (!visual_prompt.empty()) s.add("adapter.visual_prompt", visual_prompt);
  if (!text_prompt.empty()) s.add("adapter.text_prompt", text_prompt);
  if (!residual.empty()) s.add("adapter.residual", residual);
  if (!linear.empty()) s.add("adapter.linear", linear);
  return s;
}

json AdapterState::metadata() const {
  return {{"method", method_name(method)}, {"n_prompts", n_prompts}, {"res_alpha", res_alpha},
          {"omega_t", omega_t},           {"omega_v", omega_v}};
}

AdapterState AdapterState::from_store(const ParameterStore& store, const json& meta) {
  AdapterState a;
  a.method = parse_method(meta.at("method").get<std::string>());
  a.n_prompts = meta.value("n_prompts", std::size_t(0));
  a.res_alpha = meta.value("res_alpha", 0.0);
  a.omega_t = meta.value("omega_t", 0.0);
  a.omega_v = meta.value("omega_v", 0.0);
  if (store.contains("adapter.visual_prompt")) a.visual_prompt = store.at("adapter.visual_prompt");
  if (store.contains("adapter.text_prompt")) a.text_prompt = store.at("adapter.text_prompt");
  if (store.contains("adapter.residual")) a.residual = store.at("adapter.residual");
  if (store.contains("adapter.linear")) a.linear = store.at("adapter.linear");
  return a;
}

AdapterState init_adapter(const MiniClipModel& model, std::size_t n_classes, Method method,
                          const AdapterConfig& config, std::uint64_t seed) {
  config.validate();
  if (n_classes == 0) throw std::invalid_argument("init_adapter: no classes");
  const auto& mc = model.config();
  AdapterState a;
  a.method = method;
  a.res_alpha = config.res_alpha;
  a.omega_t = config.omega_t;
  a.omega_v = config.omega_v;
  const bool prompts = method == Method::kSep || method == Method::kSepRes;
  if (prompts && config.n_prompts > 0) {
    if (config.n_prompts > mc.image_tokens) throw std::invalid_argument("init_adapter: n_prompts exceeds image tokens");
    Rng rng(mix_seed(seed, 0x70726f6d7074ULL));
    a.n_prompts = config.n_prompts;
    a.visual_prompt = Tensor::matrix(config.n_prompts, mc.hidden_dim);
    a.text_prompt = Tensor::matrix(config.n_prompts, mc.hidden_dim);
    for (double& v : a.visual_prompt.data()) v = rng.normal(0.0, config.prompt_init_std);
    for (double& v : a.text_prompt.data()) v = rng.normal(0.0, config.prompt_init_std);
  }
  if (method == Method::kRes || method == Method::kSepRes) a.residual = Tensor::matrix(n_classes, mc.embed_dim);
  if (method == Method::kLinear) a.linear = Tensor::matrix(n_classes, mc.embed_dim);
  return a;
}

Tensor encode_images_prompted(const MiniClipModel& model, std::span<const Tensor> images,
                              const Tensor* visual_prompt) {
  if (!visual_prompt || visual_prompt->empty()) return model.encode_images(images);
  Tape tape;
  ModelGraph g(tape, model, false);
  const PromptInput p{tape.constant(*visual_prompt), visual_prompt->rows()};
  const std::size_t mark = tape.size();
  Tensor out = Tensor::matrix(images.size(), model.config().embed_dim);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor& e = tape.value(g.encode_image(images[i], &p));
    std::copy(e.data().begin(), e.data().end(), out.row_span(i).begin());
    tape.truncate(mark);
  }
  return out;
}

Tensor encode_classifier_prompted(const MiniClipModel& model, const std::vector<std::string>& class_names,
                                  const std::string& templ, const Tensor* text_prompt) {
  if (!text_prompt || text_prompt->empty()) return model.build_classifier(class_names, templ).weights;
  std::vector<std::vector<std::size_t>> prompts;
  for (const auto& n : class_names) prompts.push_back(model.tokenize(format_prompt(templ, n)));
  Tape tape;
  ModelGraph g(tape, model, false);
  const PromptInput p{tape.constant(*text_prompt), text_prompt->rows()};
  return tape.value(g.encode_texts(prompts, &p));
}

EnhancedEmbeddings sep_forward(const MiniClipModel& model, const AdapterState& adapter,
                               std::span<const Tensor> images, const std::vector<std::string>& class_names,
                               const std::string& templ) {
  EnhancedEmbeddings e;
  e.g_sep = encode_images_prompted(model, images, &adapter.visual_prompt);
  e.w_sep = encode_classifier_prompted(model, class_names, templ, &adapter.text_prompt);
  e.w_sepres = adapter.residual.empty() ? e.w_sep : sepres_classifier(e.w_sep, adapter.residual, adapter.res_alpha);
  return e;
}

Tensor sepres_classifier(const Tensor& w_sep, const Tensor& residual, double alpha) {
  if (!w_sep.same_shape(residual)) throw ShapeError("sepres_classifier: shape mismatch");
  Tensor out = w_sep;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = w_sep[i] + alpha * residual[i];
  return out;
}

Var sepres_classifier(Tape& tape, Var w_sep, Var residual, double alpha) {
  return tape.add(w_sep, tape.scale(residual, alpha));
}

Var sepres_loss(Tape& tape, Var g_sep, Var g_clip, Var w_sepres, Var w_clip, const std::vector<std::size_t>& labels,
                Var tau, double omega_t, double omega_v) {
  const Var ce_sep = tape.cross_entropy(tape.scale_by(tape.matmul_nt(g_sep, w_sepres), tau), labels);
  const Var ce_clip = tape.cross_entropy(tape.scale_by(tape.matmul_nt(g_clip, w_sepres), tau), labels);
  const Var kg_t = tape.mean_squares(tape.sub(w_clip, w_sepres));
  const Var kg_v = tape.mean_squares(tape.sub(g_sep, g_clip));
  Var loss = tape.add(ce_sep, tape.scale(kg_t, omega_t));
  loss = tape.add(loss, tape.scale(kg_v, omega_v));
  return tape.add(loss, ce_clip);
}

double sepres_loss(const Tensor& g_sep, const Tensor& g_clip, const Tensor& w_sepres, const Tensor& w_clip,
                   const std::vector<std::size_t>& labels, double tau, double omega_t, double omega_v) {
  Tape tape;
  const Var v = sepres_loss(tape, tape.constant(g_sep), tape.constant(g_clip), tape.constant(w_sepres),
                            tape.constant(w_clip), labels, tape.constant(Tensor::scalar(tau)), omega_t, omega_v);
  return tape.value(v)[0];
}

Tensor adapter_logits(const MiniClipModel& model, const AdapterState& adapter, std::span<const Tensor> images,
                      const std::vector<std::string>& class_names, const std::string& templ) {
  if (adapter.method == Method::kLinear) {
    if (adapter.linear.rows() != class_names.size()) throw ShapeError("adapter_logits: class count mismatch");
    return matmul_nt(model.encode_images(images), adapter.linear);
  }
  const auto e = sep_forward(model, adapter, images, class_names, templ);
  return matmul_nt(e.g_sep, e.w_sepres);
}

namespace {

struct Trainable {
  Var var;
  Tensor* value;
};

}  // namespace

FitResult fit_adapter(const MiniClipModel& model, const MultimodalDataset& ds, const FewShotEpisode& episode,
                      Method method, const AdapterConfig& config, std::uint64_t seed) {
  config.validate();
  if (episode.support.empty()) throw std::invalid_argument("fit_adapter: empty support set");
  if (episode.query.empty()) throw std::invalid_argument("fit_adapter: empty query set");
  const std::vector<std::string> names = class_names(ds, episode.classes);
  FitResult result;
  result.state = init_adapter(model, names.size(), method, config, seed);
  AdapterState& st = result.state;

  std::vector<Tensor> support;
  std::vector<std::size_t> labels;
  for (std::size_t i : episode.support) {
    const Sample& s = ds.samples.at(i);
    if (s.split != Split::kTrain) throw std::invalid_argument("fit_adapter: support sample outside the train split");
    support.push_back(s.tokens);
    labels.push_back(episode.label_of(s.class_id));
  }

  if (method != Method::kZeroShot && !(method == Method::kSep && !st.prompted())) {
    AuditLog::instance().record("fewshot", ds.name, episode.support);
    Tape tape;
    ModelGraph graph(tape, model, false);
    const Var tau = graph.temperature();
    const Var g_clip = tape.constant(model.encode_images(support));
    std::vector<Trainable> params;
    Var loss;
    if (method == Method::kLinear) {
      const Var w = tape.leaf(st.linear);
      params.push_back({w, &st.linear});
      loss = tape.cross_entropy(tape.scale_by(tape.matmul_nt(g_clip, w), tau), labels);
    } else {
      const Var w_clip = tape.constant(model.build_classifier(names, config.templ).weights);
      Var g_sep = g_clip, w_sep = w_clip;
      if (st.prompted()) {
        const Var q = tape.leaf(st.visual_prompt);
        const Var t = tape.leaf(st.text_prompt);
        params.push_back({q, &st.visual_prompt});
        params.push_back({t, &st.text_prompt});
        const PromptInput pv{q, st.n_prompts}, pt{t, st.n_prompts};
        std::vector<Var> rows;
        for (const Tensor& img : support) rows.push_back(graph.encode_image(img, &pv));
        g_sep = tape.concat_rows(rows);
        std::vector<std::vector<std::size_t>> prompts;
        for (const auto& n : names) prompts.push_back(model.tokenize(format_prompt(config.templ, n)));
        w_sep = graph.encode_texts(prompts, &pt);
      }
      Var w = w_sep;
      if (!st.residual.empty()) {
        const Var y = tape.leaf(st.residual);
        params.push_back({y, &st.residual});
        w = sepres_classifier(tape, w_sep, y, st.res_alpha);
      }
      loss = sepres_loss(tape, g_sep, g_clip, w, w_clip, labels, tau, st.omega_t, st.omega_v);
    }

    Adam adam(AdamOptions{config.lr});
    std::vector<Tensor*> targets;
    for (auto& p : params) targets.push_back(p.value);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      if (epoch > 0) {
        for (auto& p : params) tape.set_leaf(p.var, *p.value);
        tape.replay();
      }
      result.loss.push_back(tape.value(loss)[0]);
      tape.backward(loss);
      std::vector<Tensor> grads;
      for (auto& p : params) grads.push_back(tape.grad(p.var));
      adam.step(targets, grads);
    }
  }

  std::vector<Tensor> query;
  std::vector<std::size_t> qlabels;
  for (std::size_t i : episode.query) {
    query.push_back(ds.samples.at(i).tokens);
    qlabels.push_back(episode.label_of(ds.samples[i].class_id));
  }
  result.query_logits = adapter_logits(model, st, query, names, config.templ);
  std::vector<std::size_t> pred;
  for (std::size_t r = 0; r < result.query_logits.rows(); ++r) pred.push_back(argmax(result.query_logits.row_span(r)));
  result.accuracy = accuracy(pred, qlabels);
  return result;
}

}  // namespace ifsl
