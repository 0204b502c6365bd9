#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ifsl/dataset.hpp"
#include "ifsl/evaluation.hpp"
#include "ifsl/model.hpp"
#include "ifsl/parameter_store.hpp"
#include "ifsl/tape.hpp"

namespace ifsl {

enum class Method { kZeroShot, kLinear, kRes, kSep, kSepRes };
const char* method_name(Method m);
Method parse_method(const std::string& s);
inline constexpr Method kAllMethods[] = {Method::kZeroShot, Method::kLinear, Method::kRes, Method::kSep,
                                         Method::kSepRes};

struct AdapterConfig {
  std::size_t n_prompts = 2;  // per encoder; 0 disables prompting
  double res_alpha = 0.1;
  double omega_t = 1.0;
  double omega_v = 1.0;
  double lr = 1e-2;
  std::size_t epochs = 100;
  double prompt_init_std = 0.02;
  std::string templ = kEvalTemplate;

  void validate() const;
  nlohmann::json to_json() const;
  static AdapterConfig from_json(const nlohmann::json& j);
};

// Trainable state of one adapter. Tensors that a method does not use are empty.
struct AdapterState {
  Method method = Method::kZeroShot;
  std::size_t n_prompts = 0;
  double res_alpha = 0.0;
  double omega_t = 0.0;
  double omega_v = 0.0;
  Tensor visual_prompt;  // n_p x D
  Tensor text_prompt;    // n_p x D
  Tensor residual;       // m x d, starts at zero
  Tensor linear;         // m x d, linear-probe weights

  bool prompted() const { return !visual_prompt.empty(); }
  ParameterStore to_store() const;
  nlohmann::json metadata() const;
  static AdapterState from_store(const ParameterStore& store, const nlohmann::json& metadata);
};

AdapterState init_adapter(const MiniClipModel& model, std::size_t n_classes, Method method,
                          const AdapterConfig& config, std::uint64_t seed);

// Image embeddings (rows) with optional visual prompts; no prompt = base encoder.
Tensor encode_images_prompted(const MiniClipModel& model, std::span<const Tensor> images,
                              const Tensor* visual_prompt);
// Text classifier rows with optional textual prompts.
Tensor encode_classifier_prompted(const MiniClipModel& model, const std::vector<std::string>& class_names,
                                  const std::string& templ, const Tensor* text_prompt);

struct EnhancedEmbeddings {
  Tensor g_sep;      // B x d
  Tensor w_sep;      // m x d
  Tensor w_sepres;   // m x d
};

EnhancedEmbeddings sep_forward(const MiniClipModel& model, const AdapterState& adapter,
                               std::span<const Tensor> images, const std::vector<std::string>& class_names,
                               const std::string& templ = kEvalTemplate);

// W_sep + alpha * Y, no renormalization.
Tensor sepres_classifier(const Tensor& w_sep, const Tensor& residual, double alpha);
Var sepres_classifier(Tape& tape, Var w_sep, Var residual, double alpha);

// CE(tau G_sep W^T) + omega_t MSE(W_clip, W) + omega_v MSE(G_sep, G_clip) + CE(tau G_clip W^T),
// where W is the residual-enhanced classifier and CE is averaged over rows.
double sepres_loss(const Tensor& g_sep, const Tensor& g_clip, const Tensor& w_sepres, const Tensor& w_clip,
                   const std::vector<std::size_t>& labels, double tau, double omega_t, double omega_v);
Var sepres_loss(Tape& tape, Var g_sep, Var g_clip, Var w_sepres, Var w_clip, const std::vector<std::size_t>& labels,
                Var tau, double omega_t, double omega_v);

// B x m cosine logits (unscaled) of the adapted classifier.
Tensor adapter_logits(const MiniClipModel& model, const AdapterState& adapter, std::span<const Tensor> images,
                      const std::vector<std::string>& class_names, const std::string& templ = kEvalTemplate);

struct FitResult {
  AdapterState state;
  double accuracy = 0.0;  // query top-1, fraction
  Tensor query_logits;
  std::vector<double> loss;  // per epoch
};

// Trains `method` on the episode's support set with the base model frozen and
// scores the query set. The episode labels are positions in episode.classes.
FitResult fit_adapter(const MiniClipModel& model, const MultimodalDataset& ds, const FewShotEpisode& episode,
                      Method method, const AdapterConfig& config, std::uint64_t seed);

}  // namespace ifsl
