#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ifsl/dataset.hpp"
#include "ifsl/divergence.hpp"
#include "ifsl/fewshot.hpp"
#include "ifsl/model.hpp"
#include "ifsl/pretrain.hpp"
#include "ifsl/unlearn.hpp"

namespace ifsl {

enum class Role { kForget, kRetain, kValidation };
const char* role_name(Role r);
Role parse_role(const std::string& s);

// A roster entry: either generated from `generator` or loaded from `path`.
struct DatasetSpec {
  std::string name;
  Role role = Role::kForget;
  std::optional<GeneratorConfig> generator;
  std::filesystem::path path;
};

struct PretrainSettings {
  std::size_t steps = 2000;
  double lr = 1e-3;
  double max_temperature = 100.0;
  std::vector<std::string> templates = default_templates();
};

// Table-3 style comparison: one pooled dataset, a class subset that is either
// unlearned after full training or excluded from training altogether.
struct OracleConfig {
  GeneratorConfig pool;
  std::vector<std::uint32_t> subset;
  DampeningConfig dampening{10.0, 1.0};
  std::size_t probe_shots = 16;
  std::size_t seeds = 3;
};

struct BenchmarkConfig {
  std::filesystem::path output_dir = "bench_out";
  std::uint64_t seed = 1;
  ModelConfig model;
  PretrainSettings pretrain;
  std::vector<DatasetSpec> datasets;
  std::map<std::string, std::vector<std::string>> retain_map;  // forget -> retain sets
  std::vector<std::size_t> shots = {1, 2, 4, 8, 16};
  std::size_t seeds = 3;
  std::vector<Method> methods = {std::begin(kAllMethods), std::end(kAllMethods)};
  std::vector<KnowledgeLossLevel> levels = KnowledgeLossLevel::all();
  std::vector<WeightScheme> schemes = {std::begin(kAllSchemes), std::end(kAllSchemes)};
  AdapterConfig adapter;
  CalibrationOptions calibration;
  FisherOptions fisher;
  std::filesystem::path base_checkpoint;  // reused when it exists, written otherwise
  bool write_artifacts = true;            // checkpoints and per-stage CSVs
  OracleConfig oracle;

  void validate() const;
  std::vector<std::string> forget_sets() const;
  std::vector<std::string> validation_sets() const;
  nlohmann::json to_json() const;
  static BenchmarkConfig from_json(const nlohmann::json& j);
  static BenchmarkConfig load(const std::filesystem::path& path);
  std::uint64_t hash() const;
};

nlohmann::json generator_to_json(const GeneratorConfig& g);
GeneratorConfig generator_from_json(const nlohmann::json& j);

struct ReportRow {
  std::string forget_dataset;
  std::string level;
  std::string method;
  std::size_t shots = 0;
  std::size_t seed = 0;
  std::string setting;              // inductive | transductive | oracle_excluded
  std::optional<double> accuracy;   // percent; empty = FAILED
};

struct CalibrationRecord {
  std::string forget_dataset;
  std::string level;
  CalibrationResult result;
};

struct BenchmarkReport {
  std::vector<ReportRow> rows;
  std::vector<CalibrationRecord> calibration;
  std::vector<std::pair<std::string, KnowledgeReport>> knowledge;  // key forget/level

  std::string csv() const;
  std::string calibration_csv() const;
};

inline const std::string kReportHeader = "forget_dataset,level,method,shots,seed,setting,accuracy";
std::string report_csv(const std::vector<ReportRow>& rows);
std::vector<ReportRow> parse_report_csv(const std::string& text);

struct AggregateRow {
  std::string level;
  std::string method;
  std::string setting;
  std::string shots;  // a shot count, or "overall" (mean over shots > 0)
  double mean = 0.0;
  std::size_t count = 0;
};
// Per-shot means across forget datasets and seeds, plus the overall mean
// excluding zero-shot rows. FAILED rows are skipped. Keys are visited in
// sorted order so the result is independent of row order.
std::vector<AggregateRow> aggregate(const std::vector<ReportRow>& rows);
std::string aggregates_csv(const std::vector<AggregateRow>& rows);
// Paired transductive/inductive accuracies per grid cell.
std::string scatter_csv(const std::vector<ReportRow>& rows);

// Datasets of the roster, generated or loaded, in roster order.
std::vector<MultimodalDataset> materialize(const BenchmarkConfig& config);

// Pretrains (or loads) the base model over every roster dataset.
MiniClipModel base_model(const BenchmarkConfig& config, const std::vector<MultimodalDataset>& datasets,
                         TrainLog* log = nullptr);

BenchmarkReport run_benchmark(const BenchmarkConfig& config);
BenchmarkReport run_benchmark(const BenchmarkConfig& config, const std::vector<MultimodalDataset>& datasets,
                              const MiniClipModel& base);

// Restriction of a dataset to some classes, relabelled 0..k-1 in the given order.
MultimodalDataset subset_dataset(const MultimodalDataset& ds, const std::vector<std::uint32_t>& classes,
                                 const std::string& name);

struct OracleResult {
  std::vector<ReportRow> rows;
  double unlearned_subset_zero_shot = 0.0;  // percent, mean over seeds
  double excluded_subset_zero_shot = 0.0;
  double unlearned_other_zero_shot = 0.0;
  double excluded_other_zero_shot = 0.0;
  double unlearned_subset_probe = 0.0;      // mean over seeds
  double excluded_subset_probe = 0.0;
  double full_subset_zero_shot = 0.0;       // before unlearning
};
OracleResult run_oracle(const BenchmarkConfig& config);

// Episode seed for a grid cell; shared by both settings so they see the same support.
std::uint64_t episode_seed(std::uint64_t global, const std::string& dataset, std::size_t shots, std::size_t seed);

// Zero-shot / adapter accuracy in percent for one cell; shots == 0 means zero-shot.
double cell_accuracy(const MiniClipModel& model, const MultimodalDataset& ds, Method method, std::size_t shots,
                     std::uint64_t episode, const AdapterConfig& adapter, std::uint64_t seed);

}  // namespace ifsl
