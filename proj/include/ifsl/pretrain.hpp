#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ifsl/dataset.hpp"
#include "ifsl/model.hpp"
#include "ifsl/tape.hpp"

namespace ifsl {

// A class of one dataset within a multi-dataset roster.
struct ClassRef {
  std::size_t dataset = 0;
  std::uint32_t class_id = 0;
  friend auto operator<=>(const ClassRef&, const ClassRef&) = default;
};

std::vector<std::string> default_templates();

// Template words followed by every dataset's class-name words, first occurrence order.
std::vector<std::string> build_vocab(const std::vector<const MultimodalDataset*>& datasets,
                                     const std::vector<std::string>& templates);

struct PretrainConfig {
  ModelConfig model;
  double lr = 1e-3;
  std::size_t steps = 2000;
  double max_temperature = 100.0;  // clamp on the learnable logit scale
  std::vector<std::string> templates = default_templates();
  std::set<ClassRef> exclude;
  std::uint64_t seed = 0;
  // Called once per step with the batch's classes and the dataset sample indices used.
  std::function<void(std::size_t step, const std::vector<ClassRef>&, const std::vector<std::size_t>&)>
      observer;

  void validate() const;
};

struct TrainLog {
  std::vector<double> loss;
  double probe_accuracy = 0.0;  // mean zero-shot test accuracy over included classes

  void write_csv(const std::filesystem::path& path) const;
};

struct PretrainResult {
  MiniClipModel model;
  TrainLog log;
};

// Symmetric InfoNCE over a BxB similarity matrix scaled by tau; the diagonal is the target.
double contrastive_loss(const Tensor& image_embeds, const Tensor& text_embeds, double tau);
Var contrastive_loss(Tape& tape, Var image_embeds, Var text_embeds, Var tau);

// Unique-class batches: every step holds exactly one sample of every included
// class, so the batch size equals the number of included classes.
PretrainResult pretrain(const std::vector<const MultimodalDataset*>& datasets,
                        const PretrainConfig& config);

}  // namespace ifsl
