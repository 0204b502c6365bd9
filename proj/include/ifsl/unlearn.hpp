#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ifsl/dataset.hpp"
#include "ifsl/evaluation.hpp"
#include "ifsl/model.hpp"

namespace ifsl {

enum class FisherSource { kForget, kRetain };

// Diagonal Fisher importance, aligned with ParameterStore::flatten().
struct FisherDiagonal {
  std::vector<double> values;
  FisherSource source = FisherSource::kForget;
  std::size_t samples = 0;
};

// Samples of one dataset that feed Fisher estimation. Each dataset is scored
// against its own zero-shot classifier over all of its classes.
struct FisherBatch {
  const MultimodalDataset* dataset = nullptr;
  std::vector<std::size_t> samples;  // empty = full train split
};

struct FisherOptions {
  std::string templ = kEvalTemplate;
  // Scale the zero-shot logits by the learned temperature. Off by default:
  // at a sharp temperature the per-sample gradients are dominated by the
  // few least-confident samples, which makes forget/retain ratios noisy.
  bool scale_by_temperature = false;
};

// Mean over samples of squared per-sample gradients of the zero-shot
// cross-entropy. The classifier is re-derived from the class prompts on the
// tape, so text-side parameters receive importance as well.
FisherDiagonal estimate_fisher(const MiniClipModel& model, const std::vector<FisherBatch>& batches,
                               FisherSource source, const FisherOptions& options = {});

struct DampeningConfig {
  double alpha = 10.0;   // selectivity
  double lambda = 1.0;   // strength
  void validate() const;
  friend bool operator==(const DampeningConfig&, const DampeningConfig&) = default;
};

// Applies the rule to one scalar; returns the (possibly) dampened value.
double dampen_value(double theta, double f_forget, double f_retain, const DampeningConfig& cfg);

struct DampenResult {
  MiniClipModel model;
  std::size_t dampened = 0;
};
DampenResult dampen(const MiniClipModel& model, const FisherDiagonal& forget,
                    const FisherDiagonal& retain, const DampeningConfig& cfg);

enum class LevelLabel { kDefault, kL25, kL50, kL90 };

struct KnowledgeLossLevel {
  LevelLabel label = LevelLabel::kDefault;
  double target = 0.0;     // TKL in accuracy points
  double tolerance = 5.0;

  double lower() const { return target - tolerance; }
  double upper() const { return target + tolerance; }
  bool accepts(double tkl) const { return tkl >= lower() && tkl <= upper(); }
  std::string name() const;
  static KnowledgeLossLevel parse(const std::string& s);
  static std::vector<KnowledgeLossLevel> all();
};

struct CalibrationOptions {
  std::vector<double> alphas = {1.0, 5.0, 10.0, 50.0};
  double lambda_min = 1e-3;
  double lambda_max = 1.0;
  std::size_t bisection_steps = 12;
  // When no grid alpha qualifies, bisect log(alpha) between the two grid
  // neighbours that bracket the target, this many times.
  std::size_t alpha_refinements = 6;
};

struct CalibrationTrial {
  DampeningConfig config;
  double forget_accuracy = 0.0;  // fraction
  double tkl = 0.0;              // points, uniform weights
};

struct CalibrationResult {
  bool success = false;
  DampeningConfig config;
  double forget_accuracy = 0.0;
  double tkl = 0.0;
  std::size_t dampened = 0;
  bool refined = false;  // found only after alpha refinement
  std::vector<CalibrationTrial> trials;
};

// Fisher estimates and baseline accuracies shared by every trial of one
// forget dataset; build once and calibrate several levels against it.
struct UnlearningProblem {
  const MiniClipModel* model = nullptr;
  const MultimodalDataset* forget = nullptr;
  std::vector<const MultimodalDataset*> retain;
  std::vector<const MultimodalDataset*> validation;
  FisherDiagonal forget_fisher;
  FisherDiagonal retain_fisher;
  std::vector<double> validation_before;  // percent

  // Forget accuracy (fraction) and uniform TKL (points) of a dampened model.
  std::pair<double, double> measure(const MiniClipModel& dampened) const;
};

UnlearningProblem prepare_unlearning(const MiniClipModel& model, const MultimodalDataset& forget,
                                     const std::vector<const MultimodalDataset*>& retain,
                                     const std::vector<const MultimodalDataset*>& validation,
                                     const FisherOptions& fisher = {});

// Searches (alpha, lambda) for a config whose TKL falls inside the level's
// window, preferring the lowest forget accuracy and then the lowest TKL.
CalibrationResult calibrate(const UnlearningProblem& problem, const KnowledgeLossLevel& level,
                            const CalibrationOptions& options = {});

}  // namespace ifsl
