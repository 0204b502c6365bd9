// Command-line driver for the benchmark pipeline.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ifsl/bench.hpp"
#include "ifsl/checkpoint.hpp"
#include "ifsl/evaluation.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace ifsl;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool need_config = true) {
  auto* opt = app->add_option("--config", c.config, "benchmark config (JSON)")->check(CLI::ExistingFile);
  if (need_config) opt->required();
  app->add_option("--seed", c.seed, "global seed override");
  app->add_option("--out", c.out, "output directory override");
}

BenchmarkConfig load_config(const Common& c) {
  BenchmarkConfig cfg = BenchmarkConfig::load(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

const MultimodalDataset& pick(const std::vector<MultimodalDataset>& ds, const std::string& name) {
  for (const auto& d : ds)
    if (d.name == name) return d;
  throw std::runtime_error("no dataset named " + name);
}

struct Pipeline {
  BenchmarkConfig cfg;
  std::vector<MultimodalDataset> datasets;
  MiniClipModel base;

  explicit Pipeline(const Common& c)
      : cfg(load_config(c)), datasets(materialize(cfg)), base(base_model(cfg, datasets)) {}

  UnlearningProblem problem(const std::string& forget) const {
    std::vector<const MultimodalDataset*> retain, validation;
    auto it = cfg.retain_map.find(forget);
    if (it == cfg.retain_map.end()) throw std::runtime_error(forget + " is not a forget set");
    for (const auto& r : it->second) retain.push_back(&pick(datasets, r));
    for (const auto& v : cfg.validation_sets()) validation.push_back(&pick(datasets, v));
    return prepare_unlearning(base, pick(datasets, forget), retain, validation, cfg.fisher);
  }

  std::vector<const MultimodalDataset*> validation() const {
    std::vector<const MultimodalDataset*> out;
    for (const auto& v : cfg.validation_sets()) out.push_back(&pick(datasets, v));
    return out;
  }
};

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

json calibration_json(const CalibrationResult& r) {
  return {{"success", r.success},   {"alpha", r.config.alpha},       {"lambda", r.config.lambda},
          {"tkl", r.tkl},           {"forget_accuracy", r.forget_accuracy},
          {"dampened", r.dampened}, {"refined", r.refined},          {"trials", r.trials.size()}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inductive few-shot benchmark via class unlearning"};
  app.require_subcommand(1);

  Common c;
  std::string forget, level_name = "default", dataset, method_s = "sepres", after, input;
  std::optional<double> alpha, lambda;
  std::size_t shots = 16, episode = 0;

  auto* gen = app.add_subcommand("gen-data", "generate the dataset roster");
  add_common(gen, c);
  auto* pre = app.add_subcommand("pretrain", "pretrain (or load) the base model");
  add_common(pre, c);
  auto* cal = app.add_subcommand("calibrate", "search dampening settings for a knowledge-loss level");
  add_common(cal, c);
  cal->add_option("--forget", forget)->required();
  cal->add_option("--level", level_name);
  auto* unl = app.add_subcommand("unlearn", "unlearn a forget set and save the checkpoint");
  add_common(unl, c);
  unl->add_option("--forget", forget)->required();
  unl->add_option("--level", level_name);
  unl->add_option("--alpha", alpha, "fixed selection factor (skips calibration)");
  unl->add_option("--lambda", lambda, "fixed dampening constant (skips calibration)");
  auto* kr = app.add_subcommand("knowledge-report", "knowledge lost on the validation sets");
  add_common(kr, c);
  kr->add_option("--forget", forget)->required();
  kr->add_option("--after", after, "unlearned checkpoint")->required()->check(CLI::ExistingFile);
  auto* fs_cmd = app.add_subcommand("fewshot", "fit one adapter on one episode");
  add_common(fs_cmd, c);
  fs_cmd->add_option("--dataset", dataset)->required();
  fs_cmd->add_option("--method", method_s);
  fs_cmd->add_option("--shots", shots);
  fs_cmd->add_option("--episode", episode, "episode index");
  fs_cmd->add_option("--checkpoint", after, "model to adapt (default: base model)")->check(CLI::ExistingFile);
  auto* bench = app.add_subcommand("benchmark", "run the full grid");
  add_common(bench, c);
  auto* orc = app.add_subcommand("oracle", "unlearn-after-full versus exclude-from-scratch");
  add_common(orc, c);
  auto* rep = app.add_subcommand("report", "aggregate a raw report CSV");
  add_common(rep, c, false);
  rep->add_option("--input", input, "raw report CSV")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      BenchmarkConfig cfg = load_config(c);
      for (const auto& d : materialize(cfg)) {
        save_dataset(d, cfg.output_dir / "data" / d.name);
        std::cout << d.name << ": " << d.classes.size() << " classes, " << d.samples.size() << " samples\n";
      }
    } else if (*pre) {
      BenchmarkConfig cfg = load_config(c);
      if (cfg.base_checkpoint.empty()) cfg.base_checkpoint = cfg.output_dir / "base.mckp";
      fs::create_directories(cfg.base_checkpoint.parent_path());
      auto ds = materialize(cfg);
      TrainLog log;
      MiniClipModel m = base_model(cfg, ds, &log);
      if (!log.loss.empty()) log.write_csv(cfg.output_dir / "pretrain_log.csv");
      for (const auto& d : ds) std::cout << d.name << " zero-shot " << 100.0 * zero_shot_accuracy(m, d) << "\n";
      std::cout << "checkpoint " << cfg.base_checkpoint.string() << "\n";
    } else if (*cal) {
      Pipeline p(c);
      CalibrationResult r = calibrate(p.problem(forget), KnowledgeLossLevel::parse(level_name), p.cfg.calibration);
      json j = calibration_json(r);
      j["forget"] = forget;
      j["level"] = level_name;
      std::cout << j.dump(2) << "\n";
      if (!r.success) return 2;
    } else if (*unl) {
      Pipeline p(c);
      UnlearningProblem prob = p.problem(forget);
      DampeningConfig dc;
      json meta = {{"stage", "unlearn"}, {"forget_dataset", forget}, {"seed", p.cfg.seed},
                   {"config_hash", p.cfg.hash()}};
      if (alpha || lambda) {
        if (!alpha || !lambda) throw std::invalid_argument("--alpha and --lambda go together");
        dc = {*alpha, *lambda};
        meta["level"] = "fixed";
      } else {
        CalibrationResult r = calibrate(prob, KnowledgeLossLevel::parse(level_name), p.cfg.calibration);
        if (!r.success) {
          std::cerr << "calibration FAILED for " << forget << " at " << level_name << "\n";
          return 2;
        }
        dc = r.config;
        meta["level"] = level_name;
        meta["achieved_tkl"] = r.tkl;
      }
      meta["alpha"] = dc.alpha;
      meta["lambda"] = dc.lambda;
      DampenResult d = dampen(p.base, prob.forget_fisher, prob.retain_fisher, dc);
      d.model.parameters().round_to_f32();
      const fs::path path = p.cfg.output_dir / ("unlearned_" + forget + "_" + meta["level"].get<std::string>() + ".mckp");
      fs::create_directories(p.cfg.output_dir);
      save_checkpoint(d.model, meta, path);
      std::cout << "dampened " << d.dampened << " parameters -> " << path.string() << "\n";
    } else if (*kr) {
      Pipeline p(c);
      LoadedCheckpoint un = load_checkpoint(after);
      KnowledgeReport r = knowledge_report(p.base, un.model, pick(p.datasets, forget), p.validation(), p.cfg.schemes);
      fs::create_directories(p.cfg.output_dir);
      r.write_csv(p.cfg.output_dir / ("knowledge_" + forget + ".csv"));
      std::cout << r.csv();
    } else if (*fs_cmd) {
      Pipeline p(c);
      const MultimodalDataset& ds = pick(p.datasets, dataset);
      const MiniClipModel model = after.empty() ? p.base : load_checkpoint(after).model;
      const Method m = parse_method(method_s);
      const std::uint64_t ep = episode_seed(p.cfg.seed, dataset, shots, episode);
      std::cout << method_name(m) << " " << shots << "-shot accuracy "
                << cell_accuracy(model, ds, m, shots, ep, p.cfg.adapter, mix_seed(ep, std::uint64_t(m))) << "\n";
    } else if (*bench) {
      BenchmarkConfig cfg = load_config(c);
      BenchmarkReport r = run_benchmark(cfg);
      std::cout << r.calibration_csv();
      std::cout << "wrote " << r.rows.size() << " rows to " << (cfg.output_dir / "report.csv").string() << "\n";
    } else if (*orc) {
      BenchmarkConfig cfg = load_config(c);
      OracleResult r = run_oracle(cfg);
      std::cout << report_csv(r.rows);
    } else if (*rep) {
      std::ifstream in(input, std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      const auto rows = parse_report_csv(ss.str());
      const fs::path out = c.out.empty() ? fs::path(input).parent_path() : fs::path(c.out);
      write_file(out / "aggregates.csv", aggregates_csv(aggregate(rows)));
      write_file(out / "scatter.csv", scatter_csv(rows));
      std::cout << aggregates_csv(aggregate(rows));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
