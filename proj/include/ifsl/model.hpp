#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ifsl/parameter_store.hpp"
#include "ifsl/rng.hpp"
#include "ifsl/tape.hpp"
#include "ifsl/tensor.hpp"

namespace ifsl {

struct ModelConfig {
  std::size_t hidden_dim = 32;      // D
  std::size_t embed_dim = 16;       // d
  std::size_t n_layers = 2;         // per encoder
  std::size_t mlp_dim = 64;
  std::size_t image_tokens = 8;     // n_e
  std::size_t max_text_tokens = 8;
  double temperature_init = 1.0 / 0.07;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Whitespace word-level tokenizer over a fixed vocabulary.
class Tokenizer {
 public:
  Tokenizer() = default;
  explicit Tokenizer(std::vector<std::string> vocab);

  std::vector<std::size_t> encode(const std::string& text, std::size_t max_tokens) const;
  const std::vector<std::string>& vocab() const { return vocab_; }
  std::size_t size() const { return vocab_.size(); }
  bool contains(const std::string& word) const { return ids_.count(word) > 0; }

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::size_t> ids_;
};

// Substitutes `class_name` for the "{class}" slot.
std::string format_prompt(const std::string& templ, const std::string& class_name);

// m x d, one unit-norm text embedding per class prompt.
struct ClassifierMatrix {
  Tensor weights;
  std::size_t classes() const { return weights.rows(); }
};

struct Classification {
  std::vector<double> logits;
  std::size_t predicted = 0;
};

// Lowest index wins ties.
std::size_t argmax(std::span<const double> values);
Classification classify(std::span<const double> embedding, const ClassifierMatrix& classifier);

// Learnable prompt tokens appended after the pre-trained tokens of one encoder.
struct PromptInput {
  Var tokens;
  std::size_t count = 0;
};

class MiniClipModel;

// Parameters of one model bound as leaves of a tape, with the encoders
// expressed as recorded graphs.
class ModelGraph {
 public:
  ModelGraph(Tape& tape, const MiniClipModel& model, bool trainable);

  Var encode_image(const Tensor& tokens, const PromptInput* prompt = nullptr);
  Var encode_text(std::span<const std::size_t> token_ids, const PromptInput* prompt = nullptr);
  // Rows are encode_text of each prompt, stacked.
  Var encode_texts(const std::vector<std::vector<std::size_t>>& prompts,
                   const PromptInput* prompt = nullptr);
  Var temperature() const;

  Tape& tape() { return tape_; }
  const std::vector<Var>& leaves() const { return leaves_; }

 private:
  struct Block;
  Var run_blocks(bool image, Var tokens, std::size_t n_pretrained, const PromptInput* prompt);
  Var head(bool image, Var pooled);
  Var param(std::size_t index) const { return leaves_[index]; }

  Tape& tape_;
  const MiniClipModel& model_;
  std::vector<Var> leaves_;
};

class MiniClipModel {
 public:
  MiniClipModel(ModelConfig config, std::vector<std::string> vocab, std::uint64_t seed);
  // Rebuilds a model around stored parameters; names and shapes must match.
  MiniClipModel(ModelConfig config, std::vector<std::string> vocab, ParameterStore params);

  const ModelConfig& config() const { return config_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }

  double temperature() const;

  Tensor encode_image(const Tensor& tokens) const;  // 1 x d
  Tensor encode_images(std::span<const Tensor> tokens) const;  // B x d
  Tensor encode_text(const std::string& text) const;  // 1 x d
  std::vector<std::size_t> tokenize(const std::string& text) const;
  ClassifierMatrix build_classifier(const std::vector<std::string>& class_names,
                                    const std::string& templ) const;

  // Parameter indices, fixed by construction order.
  struct BlockIndex {
    std::size_t ln1_gamma, ln1_beta, wq, wk, wv, wo, ln2_gamma, ln2_beta, w1, b1, w2, b2;
  };
  struct EncoderIndex {
    std::size_t input_weight = 0, input_bias = 0;  // image patch projection / text token table
    std::size_t pos = 0;
    std::vector<BlockIndex> blocks;
    std::size_t lnf_gamma = 0, lnf_beta = 0, proj = 0;
  };
  const EncoderIndex& image_index() const { return image_; }
  const EncoderIndex& text_index() const { return text_; }
  std::size_t temperature_index() const { return temperature_; }

 private:
  void build_layout(ParameterStore& store, Rng* rng) const;
  void index_layout();

  ModelConfig config_;
  Tokenizer tokenizer_;
  ParameterStore params_;
  EncoderIndex image_;
  EncoderIndex text_;
  std::size_t temperature_ = 0;
};

}  // namespace ifsl
