#include "ifsl/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "ifsl/token_fusion.hpp"

namespace ifsl {

void ModelConfig::validate() const {
  if (hidden_dim == 0 || embed_dim == 0 || n_layers == 0 || mlp_dim == 0 || image_tokens == 0 ||
      max_text_tokens == 0) {
    throw std::invalid_argument("ModelConfig: all dimensions must be >= 1");
  }
  if (!(temperature_init > 0.0)) throw std::invalid_argument("ModelConfig: temperature must be > 0");
}

Tokenizer::Tokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    if (vocab_[i].empty() || vocab_[i].find_first_of(" \t\n") != std::string::npos) {
      throw std::invalid_argument("vocabulary entries must be single nonempty words");
    }
    if (!ids_.emplace(vocab_[i], i).second) {
      throw std::invalid_argument("duplicate vocabulary entry: " + vocab_[i]);
    }
  }
}

std::vector<std::size_t> Tokenizer::encode(const std::string& text, std::size_t max_tokens) const {
  std::istringstream is(text);
  std::vector<std::size_t> ids;
  std::string word;
  while (is >> word) {
    auto it = ids_.find(word);
    if (it == ids_.end()) throw std::invalid_argument("unknown vocabulary token: '" + word + "'");
    ids.push_back(it->second);
  }
  if (ids.empty()) throw std::invalid_argument("empty text");
  if (ids.size() > max_tokens) {
    throw std::invalid_argument("text '" + text + "' has " + std::to_string(ids.size()) +
                                " tokens, limit is " + std::to_string(max_tokens));
  }
  return ids;
}

std::string format_prompt(const std::string& templ, const std::string& class_name) {
  const std::string slot = "{class}";
  const auto pos = templ.find(slot);
  if (pos == std::string::npos) throw std::invalid_argument("template lacks {class}: " + templ);
  std::string out = templ;
  out.replace(pos, slot.size(), class_name);
  return out;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

Classification classify(std::span<const double> embedding, const ClassifierMatrix& classifier) {
  const Tensor& w = classifier.weights;
  if (embedding.size() != w.cols()) {
    throw ShapeError("classify: embedding dim " + std::to_string(embedding.size()) +
                     " != classifier dim " + std::to_string(w.cols()));
  }
  Classification out;
  out.logits.resize(w.rows());
  for (std::size_t c = 0; c < w.rows(); ++c) out.logits[c] = dot(embedding, w.row_span(c));
  out.predicted = argmax(out.logits);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Tensor gaussian(Rng* rng, std::size_t rows, std::size_t cols, double stddev) {
  Tensor t = Tensor::matrix(rows, cols);
  if (rng)
    for (double& v : t.data()) v = rng->normal(0.0, stddev);
  return t;
}

}  // namespace

void MiniClipModel::build_layout(ParameterStore& store, Rng* rng) const {
  const std::size_t D = config_.hidden_dim;
  const std::size_t H = config_.mlp_dim;
  const std::size_t d = config_.embed_dim;
  const double wscale = 1.0 / std::sqrt(double(D));

  auto encoder = [&](const std::string& prefix, bool image) {
    if (image) {
      store.add(prefix + ".patch.weight", gaussian(rng, D, D, wscale));
      store.add(prefix + ".patch.bias", Tensor::matrix(1, D));
      store.add(prefix + ".pos", gaussian(rng, config_.image_tokens, D, 0.02));
    } else {
      store.add(prefix + ".token_embedding", gaussian(rng, tokenizer_.size(), D, 0.5));
      store.add(prefix + ".pos", gaussian(rng, config_.max_text_tokens, D, 0.1));
    }
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      const std::string b = prefix + ".blocks." + std::to_string(l);
      store.add(b + ".ln1.gamma", Tensor::matrix(1, D, 1.0));
      store.add(b + ".ln1.beta", Tensor::matrix(1, D));
      store.add(b + ".attn.wq", gaussian(rng, D, D, wscale));
      store.add(b + ".attn.wk", gaussian(rng, D, D, wscale));
      store.add(b + ".attn.wv", gaussian(rng, D, D, wscale));
      store.add(b + ".attn.wo", gaussian(rng, D, D, 0.5 * wscale));
      store.add(b + ".ln2.gamma", Tensor::matrix(1, D, 1.0));
      store.add(b + ".ln2.beta", Tensor::matrix(1, D));
      store.add(b + ".mlp.w1", gaussian(rng, D, H, wscale));
      store.add(b + ".mlp.b1", Tensor::matrix(1, H));
      store.add(b + ".mlp.w2", gaussian(rng, H, D, 0.5 / std::sqrt(double(H))));
      store.add(b + ".mlp.b2", Tensor::matrix(1, D));
    }
    store.add(prefix + ".ln_final.gamma", Tensor::matrix(1, D, 1.0));
    store.add(prefix + ".ln_final.beta", Tensor::matrix(1, D));
    store.add(prefix + ".proj", gaussian(rng, D, d, wscale));
  };
  encoder("image", true);
  encoder("text", false);
  store.add("logit_scale", Tensor::scalar(config_.temperature_init));
}

void MiniClipModel::index_layout() {
  auto fill = [&](const std::string& prefix, bool image, EncoderIndex& e) {
    if (image) {
      e.input_weight = params_.index_of(prefix + ".patch.weight");
      e.input_bias = params_.index_of(prefix + ".patch.bias");
    } else {
      e.input_weight = params_.index_of(prefix + ".token_embedding");
    }
    e.pos = params_.index_of(prefix + ".pos");
    e.blocks.clear();
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      const std::string b = prefix + ".blocks." + std::to_string(l);
      e.blocks.push_back({params_.index_of(b + ".ln1.gamma"), params_.index_of(b + ".ln1.beta"),
                          params_.index_of(b + ".attn.wq"), params_.index_of(b + ".attn.wk"),
                          params_.index_of(b + ".attn.wv"), params_.index_of(b + ".attn.wo"),
                          params_.index_of(b + ".ln2.gamma"), params_.index_of(b + ".ln2.beta"),
                          params_.index_of(b + ".mlp.w1"), params_.index_of(b + ".mlp.b1"),
                          params_.index_of(b + ".mlp.w2"), params_.index_of(b + ".mlp.b2")});
    }
    e.lnf_gamma = params_.index_of(prefix + ".ln_final.gamma");
    e.lnf_beta = params_.index_of(prefix + ".ln_final.beta");
    e.proj = params_.index_of(prefix + ".proj");
  };
  fill("image", true, image_);
  fill("text", false, text_);
  temperature_ = params_.index_of("logit_scale");
}

MiniClipModel::MiniClipModel(ModelConfig config, std::vector<std::string> vocab, std::uint64_t seed)
    : config_(config), tokenizer_(std::move(vocab)) {
  config_.validate();
  if (tokenizer_.size() == 0) throw std::invalid_argument("model vocabulary is empty");
  Rng rng(seed);
  build_layout(params_, &rng);
  index_layout();
}

MiniClipModel::MiniClipModel(ModelConfig config, std::vector<std::string> vocab,
                             ParameterStore params)
    : config_(config), tokenizer_(std::move(vocab)), params_(std::move(params)) {
  config_.validate();
  ParameterStore expected;
  build_layout(expected, nullptr);
  if (expected.count() != params_.count()) {
    throw std::invalid_argument("parameter count " + std::to_string(params_.count()) +
                                " does not match model layout " + std::to_string(expected.count()));
  }
  for (std::size_t i = 0; i < expected.count(); ++i) {
    if (expected.name(i) != params_.name(i) || expected.at(i).shape() != params_.at(i).shape()) {
      throw std::invalid_argument("parameter '" + params_.name(i) + "' " +
                                  shape_string(params_.at(i).shape()) + " does not match layout '" +
                                  expected.name(i) + "' " + shape_string(expected.at(i).shape()));
    }
    if (!params_.at(i).all_finite()) throw NumericError("non-finite parameter " + params_.name(i));
  }
  index_layout();
}

double MiniClipModel::temperature() const { return params_.at(temperature_)[0]; }

std::vector<std::size_t> MiniClipModel::tokenize(const std::string& text) const {
  return tokenizer_.encode(text, config_.max_text_tokens);
}

Tensor MiniClipModel::encode_image(const Tensor& tokens) const {
  Tape tape;
  ModelGraph g(tape, *this, false);
  return tape.value(g.encode_image(tokens));
}

Tensor MiniClipModel::encode_images(std::span<const Tensor> tokens) const {
  Tape tape;
  ModelGraph g(tape, *this, false);
  const std::size_t mark = tape.size();
  Tensor out = Tensor::matrix(tokens.size(), config_.embed_dim);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Tensor& e = tape.value(g.encode_image(tokens[i]));
    std::copy(e.data().begin(), e.data().end(), out.row_span(i).begin());
    tape.truncate(mark);
  }
  return out;
}

Tensor MiniClipModel::encode_text(const std::string& text) const {
  Tape tape;
  ModelGraph g(tape, *this, false);
  const auto ids = tokenize(text);
  return tape.value(g.encode_text(ids));
}

ClassifierMatrix MiniClipModel::build_classifier(const std::vector<std::string>& class_names,
                                                 const std::string& templ) const {
  if (class_names.empty()) throw std::invalid_argument("build_classifier: no classes");
  std::vector<std::vector<std::size_t>> prompts;
  prompts.reserve(class_names.size());
  for (const auto& name : class_names) prompts.push_back(tokenize(format_prompt(templ, name)));
  Tape tape;
  ModelGraph g(tape, *this, false);
  return {tape.value(g.encode_texts(prompts))};
}

// ---------------------------------------------------------------------------

ModelGraph::ModelGraph(Tape& tape, const MiniClipModel& model, bool trainable)
    : tape_(tape), model_(model) {
  const auto& store = model.parameters();
  leaves_.reserve(store.count());
  for (std::size_t i = 0; i < store.count(); ++i) leaves_.push_back(tape.leaf(store.at(i), trainable));
}

Var ModelGraph::temperature() const { return param(model_.temperature_index()); }

Var ModelGraph::run_blocks(bool image, Var tokens, std::size_t n_pretrained,
                           const PromptInput* prompt) {
  const auto& enc = image ? model_.image_index() : model_.text_index();
  const double attn_scale = 1.0 / std::sqrt(double(model_.config().hidden_dim));
  const bool prompted = prompt != nullptr && prompt->count > 0;
  Var z = tokens;
  if (prompted) {
    const Var parts[] = {z, prompt->tokens};
    z = tape_.concat_rows(parts);
  }
  for (std::size_t l = 0; l < enc.blocks.size(); ++l) {
    const auto& b = enc.blocks[l];
    Var h = tape_.add_row(tape_.mul_row(tape_.layer_norm_rows(z), param(b.ln1_gamma)), param(b.ln1_beta));
    Var q = tape_.matmul(h, param(b.wq));
    Var k = tape_.matmul(h, param(b.wk));
    Var v = tape_.matmul(h, param(b.wv));
    Var att = tape_.softmax_rows(tape_.scale(tape_.matmul_nt(q, k), attn_scale));
    z = tape_.add(z, tape_.matmul(tape_.matmul(att, v), param(b.wo)));
    Var h2 = tape_.add_row(tape_.mul_row(tape_.layer_norm_rows(z), param(b.ln2_gamma)), param(b.ln2_beta));
    Var m = tape_.gelu(tape_.add_row(tape_.matmul(h2, param(b.w1)), param(b.b1)));
    z = tape_.add(z, tape_.add_row(tape_.matmul(m, param(b.w2)), param(b.b2)));
    if (prompted && l + 1 < enc.blocks.size()) {
      const std::size_t total = tape_.value(z).rows();
      Var zv = tape_.slice_rows(z, 0, n_pretrained);
      Var zp = tape_.slice_rows(z, n_pretrained, total);
      const Var parts[] = {zv, token_fusion(tape_, zv, zp)};
      z = tape_.concat_rows(parts);
    }
  }
  return z;
}

Var ModelGraph::head(bool image, Var pooled) {
  const auto& enc = image ? model_.image_index() : model_.text_index();
  Var h = tape_.add_row(tape_.mul_row(tape_.layer_norm_rows(pooled), param(enc.lnf_gamma)),
                        param(enc.lnf_beta));
  return tape_.row_normalize(tape_.matmul(h, param(enc.proj)));
}

Var ModelGraph::encode_image(const Tensor& tokens, const PromptInput* prompt) {
  const auto& cfg = model_.config();
  if (tokens.rows() != cfg.image_tokens || tokens.cols() != cfg.hidden_dim) {
    throw ShapeError("encode_image: expected " + std::to_string(cfg.image_tokens) + "x" +
                     std::to_string(cfg.hidden_dim) + " tokens, got " + shape_string(tokens.shape()));
  }
  if (prompt && prompt->count > cfg.image_tokens) {
    throw ShapeError("encode_image: more prompts than image tokens");
  }
  const auto& enc = model_.image_index();
  Var x = tape_.constant(tokens);
  Var e = tape_.add(tape_.add_row(tape_.matmul(x, param(enc.input_weight)), param(enc.input_bias)),
                    param(enc.pos));
  Var z = run_blocks(true, e, cfg.image_tokens, prompt);
  if (prompt && prompt->count > 0) z = tape_.slice_rows(z, 0, cfg.image_tokens);
  return head(true, tape_.mean_rows(z));
}

Var ModelGraph::encode_text(std::span<const std::size_t> token_ids, const PromptInput* prompt) {
  const auto& cfg = model_.config();
  const std::size_t n = token_ids.size();
  if (n == 0 || n > cfg.max_text_tokens) throw ShapeError("encode_text: bad token count");
  if (prompt && prompt->count > n) throw ShapeError("encode_text: more prompts than text tokens");
  const auto& enc = model_.text_index();
  Var emb = tape_.gather_rows(param(enc.input_weight), {token_ids.begin(), token_ids.end()});
  Var pos = tape_.slice_rows(param(enc.pos), 0, n);
  Var z = run_blocks(false, tape_.add(emb, pos), n, prompt);
  return head(false, tape_.slice_rows(z, n - 1, n));
}

Var ModelGraph::encode_texts(const std::vector<std::vector<std::size_t>>& prompts,
                             const PromptInput* prompt) {
  std::vector<Var> rows;
  rows.reserve(prompts.size());
  for (const auto& p : prompts) rows.push_back(encode_text(p, prompt));
  return tape_.concat_rows(rows);
}

}  // namespace ifsl
