#include "ifsl/bench.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ifsl/audit.hpp"
#include "ifsl/checkpoint.hpp"
#include "ifsl/evaluation.hpp"
#include "ifsl/rng.hpp"

namespace ifsl {

using nlohmann::json;

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string fixed3(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << v;
  return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

const char* role_name(Role r) {
  switch (r) {
    case Role::kForget: return "forget";
    case Role::kRetain: return "retain";
    case Role::kValidation: return "validation";
  }
  return "?";
}

Role parse_role(const std::string& s) {
  for (Role r : {Role::kForget, Role::kRetain, Role::kValidation})
    if (s == role_name(r)) return r;
  throw std::invalid_argument("unknown dataset role: " + s);
}

// ---------------------------------------------------------------------------
// Config

json generator_to_json(const GeneratorConfig& g) {
  json j = {{"name", g.name},
            {"branch", g.branch},
            {"branching", g.branching},
            {"n_classes", g.n_classes},
            {"train_per_class", g.train_per_class},
            {"test_per_class", g.test_per_class},
            {"n_tokens", g.n_tokens},
            {"dim", g.dim},
            {"active_dims", g.active_dims},
            {"sigma_within", g.sigma_within},
            {"sigma_between", g.sigma_between},
            {"domain_spread", g.domain_spread},
            {"seed", g.seed}};
  if (!g.active.empty()) j["active"] = g.active;
  return j;
}

GeneratorConfig generator_from_json(const json& j) {
  GeneratorConfig g;
  g.name = j.value("name", g.name);
  g.branch = j.value("branch", g.branch);
  g.branching = j.value("branching", g.branching);
  g.n_classes = j.value("n_classes", g.n_classes);
  g.train_per_class = j.value("train_per_class", g.train_per_class);
  g.test_per_class = j.value("test_per_class", g.test_per_class);
  g.n_tokens = j.value("n_tokens", g.n_tokens);
  g.dim = j.value("dim", g.dim);
  g.active_dims = j.value("active_dims", g.active_dims);
  g.sigma_within = j.value("sigma_within", g.sigma_within);
  g.sigma_between = j.value("sigma_between", g.sigma_between);
  g.domain_spread = j.value("domain_spread", g.domain_spread);
  g.seed = j.value("seed", g.seed);
  if (j.contains("active")) g.active = j.at("active").get<std::vector<std::size_t>>();
  return g;
}

namespace {

json model_json(const ModelConfig& c) {
  return {{"hidden_dim", c.hidden_dim},     {"embed_dim", c.embed_dim},
          {"n_layers", c.n_layers},         {"mlp_dim", c.mlp_dim},
          {"image_tokens", c.image_tokens}, {"max_text_tokens", c.max_text_tokens},
          {"temperature_init", c.temperature_init}};
}

ModelConfig model_from(const json& j) {
  ModelConfig c;
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.mlp_dim = j.value("mlp_dim", c.mlp_dim);
  c.image_tokens = j.value("image_tokens", c.image_tokens);
  c.max_text_tokens = j.value("max_text_tokens", c.max_text_tokens);
  c.temperature_init = j.value("temperature_init", c.temperature_init);
  return c;
}

}  // namespace

void BenchmarkConfig::validate() const {
  model.validate();
  adapter.validate();
  if (datasets.empty()) throw std::invalid_argument("benchmark: empty dataset roster");
  std::map<std::string, Role> roles;
  for (const auto& d : datasets) {
    if (d.name.empty()) throw std::invalid_argument("benchmark: dataset without a name");
    if (!roles.emplace(d.name, d.role).second) throw std::invalid_argument("benchmark: duplicate dataset " + d.name);
    if (!d.generator && d.path.empty()) {
      throw std::invalid_argument("benchmark: dataset " + d.name + " needs a generator or a path");
    }
  }
  for (const auto& f : forget_sets()) {
    auto it = retain_map.find(f);
    if (it == retain_map.end() || it->second.empty()) {
      throw std::invalid_argument("benchmark: forget set " + f + " has no retain mapping");
    }
  }
  for (const auto& [f, rs] : retain_map) {
    auto fit = roles.find(f);
    if (fit == roles.end()) throw std::invalid_argument("benchmark: retain mapping names unknown dataset " + f);
    if (fit->second != Role::kForget) throw std::invalid_argument("benchmark: retain mapping key " + f + " is not a forget set");
    for (const auto& r : rs) {
      auto it = roles.find(r);
      if (it == roles.end()) throw std::invalid_argument("benchmark: retain mapping names unknown dataset " + r);
      if (it->second == Role::kValidation) {
        throw std::invalid_argument("benchmark: validation set " + r + " cannot be used for retaining");
      }
      if (r == f) throw std::invalid_argument("benchmark: " + f + " cannot retain itself");
    }
  }
  if (validation_sets().empty()) throw std::invalid_argument("benchmark: no validation sets");
  if (forget_sets().empty()) throw std::invalid_argument("benchmark: no forget sets");
  if (seeds == 0) throw std::invalid_argument("benchmark: seeds must be >= 1");
  if (methods.empty() || levels.empty()) throw std::invalid_argument("benchmark: empty method or level list");
  for (std::size_t i = 1; i < levels.size(); ++i) {
    if (!(levels[i].target > levels[i - 1].target)) {
      throw std::invalid_argument("benchmark: level targets must be strictly increasing");
    }
  }
}

std::vector<std::string> BenchmarkConfig::forget_sets() const {
  std::vector<std::string> out;
  for (const auto& d : datasets)
    if (d.role == Role::kForget) out.push_back(d.name);
  return out;
}

std::vector<std::string> BenchmarkConfig::validation_sets() const {
  std::vector<std::string> out;
  for (const auto& d : datasets)
    if (d.role == Role::kValidation) out.push_back(d.name);
  return out;
}

json BenchmarkConfig::to_json() const {
  json ds = json::array();
  for (const auto& d : datasets) {
    json e = {{"name", d.name}, {"role", role_name(d.role)}};
    if (d.generator) e["generator"] = generator_to_json(*d.generator);
    if (!d.path.empty()) e["path"] = d.path.string();
    ds.push_back(e);
  }
  json methods_j = json::array(), levels_j = json::array(), schemes_j = json::array();
  for (Method m : methods) methods_j.push_back(method_name(m));
  for (const auto& l : levels) levels_j.push_back(l.name());
  for (WeightScheme s : schemes) schemes_j.push_back(scheme_name(s));
  json subset = oracle.subset;
  return {{"output_dir", output_dir.string()},
          {"seed", seed},
          {"model", model_json(model)},
          {"pretrain",
           {{"steps", pretrain.steps},
            {"lr", pretrain.lr},
            {"max_temperature", pretrain.max_temperature},
            {"templates", pretrain.templates}}},
          {"datasets", ds},
          {"retain_map", retain_map},
          {"shots", shots},
          {"seeds", seeds},
          {"methods", methods_j},
          {"levels", levels_j},
          {"schemes", schemes_j},
          {"adapter", adapter.to_json()},
          {"calibration",
           {{"alphas", calibration.alphas},
            {"lambda_min", calibration.lambda_min},
            {"lambda_max", calibration.lambda_max},
            {"bisection_steps", calibration.bisection_steps},
            {"alpha_refinements", calibration.alpha_refinements}}},
          {"fisher", {{"template", fisher.templ}, {"scale_by_temperature", fisher.scale_by_temperature}}},
          {"base_checkpoint", base_checkpoint.string()},
          {"write_artifacts", write_artifacts},
          {"oracle",
           {{"pool", generator_to_json(oracle.pool)},
            {"subset", subset},
            {"alpha", oracle.dampening.alpha},
            {"lambda", oracle.dampening.lambda},
            {"probe_shots", oracle.probe_shots},
            {"seeds", oracle.seeds}}}};
}

BenchmarkConfig BenchmarkConfig::from_json(const json& j) {
  BenchmarkConfig c;
  c.output_dir = j.value("output_dir", c.output_dir.string());
  c.seed = j.value("seed", c.seed);
  if (j.contains("model")) c.model = model_from(j.at("model"));
  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    c.pretrain.steps = p.value("steps", c.pretrain.steps);
    c.pretrain.lr = p.value("lr", c.pretrain.lr);
    c.pretrain.max_temperature = p.value("max_temperature", c.pretrain.max_temperature);
    c.pretrain.templates = p.value("templates", c.pretrain.templates);
  }
  for (const auto& e : j.value("datasets", json::array())) {
    DatasetSpec d;
    d.name = e.at("name").get<std::string>();
    d.role = parse_role(e.at("role").get<std::string>());
    if (e.contains("generator")) {
      d.generator = generator_from_json(e.at("generator"));
      d.generator->name = d.name;
    }
    if (e.contains("path")) d.path = e.at("path").get<std::string>();
    c.datasets.push_back(std::move(d));
  }
  c.retain_map = j.value("retain_map", c.retain_map);
  c.shots = j.value("shots", c.shots);
  c.seeds = j.value("seeds", c.seeds);
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
  }
  if (j.contains("levels")) {
    c.levels.clear();
    for (const auto& l : j.at("levels")) c.levels.push_back(KnowledgeLossLevel::parse(l.get<std::string>()));
  }
  if (j.contains("schemes")) {
    c.schemes.clear();
    for (const auto& s : j.at("schemes")) c.schemes.push_back(parse_scheme(s.get<std::string>()));
  }
  if (j.contains("adapter")) c.adapter = AdapterConfig::from_json(j.at("adapter"));
  if (j.contains("calibration")) {
    const auto& k = j.at("calibration");
    c.calibration.alphas = k.value("alphas", c.calibration.alphas);
    c.calibration.lambda_min = k.value("lambda_min", c.calibration.lambda_min);
    c.calibration.lambda_max = k.value("lambda_max", c.calibration.lambda_max);
    c.calibration.bisection_steps = k.value("bisection_steps", c.calibration.bisection_steps);
    c.calibration.alpha_refinements = k.value("alpha_refinements", c.calibration.alpha_refinements);
  }
  if (j.contains("fisher")) {
    const auto& f = j.at("fisher");
    c.fisher.templ = f.value("template", c.fisher.templ);
    c.fisher.scale_by_temperature = f.value("scale_by_temperature", c.fisher.scale_by_temperature);
  }
  c.base_checkpoint = j.value("base_checkpoint", std::string());
  c.write_artifacts = j.value("write_artifacts", c.write_artifacts);
  if (j.contains("oracle")) {
    const auto& o = j.at("oracle");
    if (o.contains("pool")) c.oracle.pool = generator_from_json(o.at("pool"));
    c.oracle.subset = o.value("subset", c.oracle.subset);
    c.oracle.dampening.alpha = o.value("alpha", c.oracle.dampening.alpha);
    c.oracle.dampening.lambda = o.value("lambda", c.oracle.dampening.lambda);
    c.oracle.probe_shots = o.value("probe_shots", c.oracle.probe_shots);
    c.oracle.seeds = o.value("seeds", c.oracle.seeds);
  }
  return c;
}

BenchmarkConfig BenchmarkConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  BenchmarkConfig c = from_json(json::parse(in));
  // Relative dataset paths resolve against the config file.
  for (auto& d : c.datasets)
    if (!d.path.empty() && d.path.is_relative()) d.path = path.parent_path() / d.path;
  return c;
}

std::uint64_t BenchmarkConfig::hash() const { return fnv1a64(to_json().dump()); }

// ---------------------------------------------------------------------------
// Report

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = kReportHeader + "\n";
  for (const auto& r : rows) {
    out += r.forget_dataset + ',' + r.level + ',' + r.method + ',' + std::to_string(r.shots) + ',' +
           std::to_string(r.seed) + ',' + r.setting + ',' + (r.accuracy ? fixed3(*r.accuracy) : "FAILED") + '\n';
  }
  return out;
}

std::string BenchmarkReport::csv() const { return report_csv(rows); }

std::string BenchmarkReport::calibration_csv() const {
  std::string out = "forget_dataset,level,status,alpha,lambda,forget_accuracy,tkl,dampened,refined\n";
  for (const auto& c : calibration) {
    std::ostringstream os;
    os << std::setprecision(10);
    os << c.forget_dataset << ',' << c.level << ',' << (c.result.success ? "OK" : "FAILED") << ','
       << c.result.config.alpha << ',' << c.result.config.lambda << ',' << fixed3(100.0 * c.result.forget_accuracy)
       << ',' << fixed3(c.result.tkl) << ',' << c.result.dampened << ',' << (c.result.refined ? 1 : 0) << '\n';
    out += os.str();
  }
  return out;
}

std::vector<ReportRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != split_csv_line(kReportHeader)) {
    throw std::invalid_argument("report: missing or unexpected header");
  }
  std::vector<ReportRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 7) throw std::invalid_argument("report: line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
    ReportRow r;
    r.forget_dataset = f[0];
    r.level = f[1];
    r.method = f[2];
    r.shots = std::stoul(f[3]);
    r.seed = std::stoul(f[4]);
    r.setting = f[5];
    if (f[6] != "FAILED") r.accuracy = std::stod(f[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<AggregateRow> aggregate(const std::vector<ReportRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("aggregate: no rows");
  using Key = std::tuple<std::string, std::string, std::string, std::size_t>;  // level, method, setting, shots
  std::map<Key, std::vector<std::tuple<std::string, std::size_t, double>>> cells;
  for (const auto& r : rows) {
    if (!r.accuracy) continue;
    cells[{r.level, r.method, r.setting, r.shots}].emplace_back(r.forget_dataset, r.seed, *r.accuracy);
  }
  std::vector<AggregateRow> out;
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> overall;
  for (auto& [key, vals] : cells) {
    std::sort(vals.begin(), vals.end());
    double sum = 0.0;
    for (const auto& v : vals) sum += std::get<2>(v);
    const auto& [level, method, setting, shots] = key;
    AggregateRow a{level, method, setting, std::to_string(shots), sum / double(vals.size()), vals.size()};
    if (shots > 0) overall[{level, method, setting}].push_back(a.mean);
    out.push_back(std::move(a));
  }
  for (const auto& [key, means] : overall) {
    double sum = 0.0;
    for (double m : means) sum += m;
    const auto& [level, method, setting] = key;
    out.push_back({level, method, setting, "overall", sum / double(means.size()), means.size()});
  }
  return out;
}

std::string aggregates_csv(const std::vector<AggregateRow>& rows) {
  std::string out = "level,method,setting,shots,mean_accuracy,count\n";
  for (const auto& a : rows) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(9) << a.mean;
    out += a.level + ',' + a.method + ',' + a.setting + ',' + a.shots + ',' + os.str() + ',' + std::to_string(a.count) + '\n';
  }
  return out;
}

std::string scatter_csv(const std::vector<ReportRow>& rows) {
  using Key = std::tuple<std::string, std::string, std::string, std::size_t, std::size_t>;
  std::map<Key, std::pair<std::string, std::string>> cells;
  for (const auto& r : rows) {
    const std::string v = r.accuracy ? fixed3(*r.accuracy) : "FAILED";
    auto& cell = cells[{r.forget_dataset, r.level, r.method, r.shots, r.seed}];
    if (r.setting == "transductive") cell.first = v;
    else if (r.setting == "inductive") cell.second = v;
  }
  std::string out = "forget_dataset,level,method,shots,seed,transductive,inductive\n";
  for (const auto& [k, v] : cells) {
    const auto& [f, level, method, shots, seed] = k;
    out += f + ',' + level + ',' + method + ',' + std::to_string(shots) + ',' + std::to_string(seed) + ',' +
           v.first + ',' + v.second + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

std::vector<MultimodalDataset> materialize(const BenchmarkConfig& config) {
  std::vector<MultimodalDataset> out;
  for (const auto& d : config.datasets) {
    if (d.generator) {
      GeneratorConfig g = *d.generator;
      g.name = d.name;
      out.push_back(generate(g));
    } else {
      if (!std::filesystem::exists(d.path)) throw std::runtime_error("missing dataset " + d.name + " at " + d.path.string());
      out.push_back(load_dataset(d.path));
      if (out.back().name != d.name) {
        throw std::runtime_error("dataset at " + d.path.string() + " is named " + out.back().name + ", expected " + d.name);
      }
    }
  }
  return out;
}

MiniClipModel base_model(const BenchmarkConfig& config, const std::vector<MultimodalDataset>& datasets,
                         TrainLog* log) {
  if (!config.base_checkpoint.empty() && std::filesystem::exists(config.base_checkpoint)) {
    return load_checkpoint(config.base_checkpoint).model;
  }
  std::vector<const MultimodalDataset*> ptrs;
  for (const auto& d : datasets) ptrs.push_back(&d);
  PretrainConfig pc;
  pc.model = config.model;
  pc.lr = config.pretrain.lr;
  pc.steps = config.pretrain.steps;
  pc.max_temperature = config.pretrain.max_temperature;
  pc.templates = config.pretrain.templates;
  pc.seed = mix_seed(config.seed, fnv1a64("pretrain"));
  PretrainResult r = pretrain(ptrs, pc);
  if (log) *log = r.log;
  json meta = {{"stage", "pretrain"}, {"seed", config.seed}, {"config_hash", config.hash()},
               {"probe_accuracy", r.log.probe_accuracy}};
  if (!config.base_checkpoint.empty()) {
    save_checkpoint(r.model, meta, config.base_checkpoint);
  } else if (config.write_artifacts) {
    std::filesystem::create_directories(config.output_dir);
    save_checkpoint(r.model, meta, config.output_dir / "base.mckp");
    r.log.write_csv(config.output_dir / "pretrain_log.csv");
  }
  return std::move(r.model);
}

std::uint64_t episode_seed(std::uint64_t global, const std::string& dataset, std::size_t shots, std::size_t seed) {
  return mix_seed(mix_seed(mix_seed(global, fnv1a64(dataset)), shots), seed);
}

double cell_accuracy(const MiniClipModel& model, const MultimodalDataset& ds, Method method, std::size_t shots,
                     std::uint64_t episode, const AdapterConfig& adapter, std::uint64_t seed) {
  if (shots == 0) return 100.0 * zero_shot_accuracy(model, ds, all_classes(ds), Split::kTest, adapter.templ);
  const FewShotEpisode ep = sample_episode(ds, ds.classes.size(), shots, episode);
  return 100.0 * fit_adapter(model, ds, ep, method, adapter, seed).accuracy;
}

BenchmarkReport run_benchmark(const BenchmarkConfig& config) {
  config.validate();
  const auto datasets = materialize(config);
  const MiniClipModel base = base_model(config, datasets);
  return run_benchmark(config, datasets, base);
}

BenchmarkReport run_benchmark(const BenchmarkConfig& config, const std::vector<MultimodalDataset>& datasets,
                              const MiniClipModel& base) {
  config.validate();
  std::map<std::string, const MultimodalDataset*> by_name;
  for (const auto& d : datasets) by_name[d.name] = &d;
  auto find = [&](const std::string& n) {
    auto it = by_name.find(n);
    if (it == by_name.end()) throw std::runtime_error("missing dataset " + n);
    return it->second;
  };
  std::vector<const MultimodalDataset*> validation;
  for (const auto& v : config.validation_sets()) validation.push_back(find(v));
  if (config.write_artifacts) std::filesystem::create_directories(config.output_dir);

  BenchmarkReport report;
  for (const auto& fname : config.forget_sets()) {
    const MultimodalDataset& forget = *find(fname);
    std::vector<const MultimodalDataset*> retain;
    for (const auto& r : config.retain_map.at(fname)) retain.push_back(find(r));
    const UnlearningProblem problem = prepare_unlearning(base, forget, retain, validation, config.fisher);

    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, double> transductive;
    for (const auto& level : config.levels) {
      CalibrationResult cal = calibrate(problem, level, config.calibration);
      std::optional<MiniClipModel> unlearned;
      if (cal.success) {
        unlearned = dampen(base, problem.forget_fisher, problem.retain_fisher, cal.config).model;
        unlearned->parameters().round_to_f32();
        KnowledgeReport kr = knowledge_report(base, *unlearned, forget, validation, config.schemes);
        if (config.write_artifacts) {
          const std::string stem = fname + "_" + level.name();
          kr.write_csv(config.output_dir / ("knowledge_" + stem + ".csv"));
          json meta = {{"stage", "unlearn"},          {"forget_dataset", fname},
                       {"level", level.name()},       {"alpha", cal.config.alpha},
                       {"lambda", cal.config.lambda}, {"achieved_tkl", cal.tkl},
                       {"forget_accuracy", cal.forget_accuracy},
                       {"seed", config.seed},         {"config_hash", config.hash()}};
          save_checkpoint(*unlearned, meta, config.output_dir / ("unlearned_" + stem + ".mckp"));
        }
        report.knowledge.emplace_back(fname + "/" + level.name(), std::move(kr));
      }
      report.calibration.push_back({fname, level.name(), std::move(cal)});

      for (Method method : config.methods) {
        for (std::size_t shots : config.shots) {
          for (std::size_t s = 0; s < config.seeds; ++s) {
            const std::uint64_t ep = episode_seed(config.seed, fname, shots, s);
            const std::uint64_t fit_seed = mix_seed(ep, std::uint64_t(method));
            ReportRow row{fname, level.name(), method_name(method), shots, s, "inductive", std::nullopt};
            if (unlearned) row.accuracy = cell_accuracy(*unlearned, forget, method, shots, ep, config.adapter, fit_seed);
            report.rows.push_back(row);
            const auto key = std::tuple{std::size_t(method), shots, s};
            auto it = transductive.find(key);
            if (it == transductive.end()) {
              it = transductive.emplace(key, cell_accuracy(base, forget, method, shots, ep, config.adapter, fit_seed)).first;
            }
            row.setting = "transductive";
            row.accuracy = it->second;
            report.rows.push_back(std::move(row));
          }
        }
      }
    }
  }

  // Held-out sets must never feed a gradient computation after pretraining.
  const auto& audit = AuditLog::instance();
  for (const auto* v : validation) {
    if (!audit.samples("unlearn", v->name).empty() || !audit.samples("fewshot", v->name).empty()) {
      throw std::logic_error("validation set " + v->name + " was used for unlearning or adaptation");
    }
  }

  if (config.write_artifacts) {
    write_text(config.output_dir / "report.csv", report.csv());
    write_text(config.output_dir / "calibration.csv", report.calibration_csv());
    write_text(config.output_dir / "aggregates.csv", aggregates_csv(aggregate(report.rows)));
    write_text(config.output_dir / "scatter.csv", scatter_csv(report.rows));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Oracle

MultimodalDataset subset_dataset(const MultimodalDataset& ds, const std::vector<std::uint32_t>& classes,
                                 const std::string& name) {
  if (classes.empty()) throw std::invalid_argument("subset_dataset: no classes");
  MultimodalDataset out;
  out.name = name;
  out.n_tokens = ds.n_tokens;
  out.dim = ds.dim;
  std::map<std::uint32_t, std::uint32_t> relabel;
  for (std::uint32_t c : classes) {
    const ClassInfo& info = ds.classes.at(c);
    if (!relabel.emplace(c, std::uint32_t(out.classes.size())).second) {
      throw std::invalid_argument("subset_dataset: duplicate class");
    }
    out.classes.push_back({std::uint32_t(out.classes.size()), info.name, info.taxonomy_path});
  }
  for (const auto& s : ds.samples) {
    auto it = relabel.find(s.class_id);
    if (it != relabel.end()) out.samples.push_back({it->second, s.split, s.tokens});
  }
  out.validate();
  return out;
}

OracleResult run_oracle(const BenchmarkConfig& config) {
  const OracleConfig& oc = config.oracle;
  oc.dampening.validate();
  if (oc.subset.empty()) throw std::invalid_argument("oracle: empty subset");
  const MultimodalDataset pool = generate(oc.pool);
  std::set<std::uint32_t> subset(oc.subset.begin(), oc.subset.end());
  std::vector<std::uint32_t> others;
  for (const auto& c : pool.classes)
    if (!subset.count(c.id)) others.push_back(c.id);
  if (others.size() < 2 || subset.size() < 2) throw std::invalid_argument("oracle: need >= 2 classes on each side");
  const MultimodalDataset sub = subset_dataset(pool, oc.subset, pool.name + "_subset");
  const MultimodalDataset rest = subset_dataset(pool, others, pool.name + "_other");

  PretrainConfig pc;
  pc.model = config.model;
  pc.lr = config.pretrain.lr;
  pc.steps = config.pretrain.steps;
  pc.max_temperature = config.pretrain.max_temperature;
  pc.templates = config.pretrain.templates;
  std::set<ClassRef> excluded_classes;
  for (std::uint32_t c : oc.subset) excluded_classes.insert({0, c});

  // Each seed is an independent replicate: both models are pretrained from
  // scratch, so zero-shot on never-seen names is averaged over draws.
  OracleResult r;
  const double n = double(oc.seeds);
  for (std::size_t s = 0; s < oc.seeds; ++s) {
    pc.seed = mix_seed(mix_seed(config.seed, fnv1a64("oracle")), s);
    pc.exclude.clear();
    const MiniClipModel full = pretrain({&pool}, pc).model;
    pc.exclude = excluded_classes;
    const MiniClipModel excluded = pretrain({&pool}, pc).model;

    const FisherDiagonal ff = estimate_fisher(full, {{&sub, {}}}, FisherSource::kForget, config.fisher);
    const FisherDiagonal fr = estimate_fisher(full, {{&rest, {}}}, FisherSource::kRetain, config.fisher);
    MiniClipModel unlearned = dampen(full, ff, fr, oc.dampening).model;
    unlearned.parameters().round_to_f32();

    auto zs_row = [&](const std::string& part, const std::string& setting, double acc) {
      r.rows.push_back({pool.name + "/" + part, "oracle", "zeroshot", 0, s, setting, acc});
      return acc / n;
    };
    r.full_subset_zero_shot += zs_row("subset", "transductive", 100.0 * zero_shot_accuracy(full, sub));
    r.unlearned_subset_zero_shot += zs_row("subset", "inductive", 100.0 * zero_shot_accuracy(unlearned, sub));
    r.excluded_subset_zero_shot += zs_row("subset", "oracle_excluded", 100.0 * zero_shot_accuracy(excluded, sub));
    r.unlearned_other_zero_shot += zs_row("other", "inductive", 100.0 * zero_shot_accuracy(unlearned, rest));
    r.excluded_other_zero_shot += zs_row("other", "oracle_excluded", 100.0 * zero_shot_accuracy(excluded, rest));

    const std::uint64_t ep = episode_seed(config.seed, sub.name, oc.probe_shots, s);
    const std::uint64_t fit_seed = mix_seed(ep, std::uint64_t(Method::kLinear));
    const double a = cell_accuracy(unlearned, sub, Method::kLinear, oc.probe_shots, ep, config.adapter, fit_seed);
    const double b = cell_accuracy(excluded, sub, Method::kLinear, oc.probe_shots, ep, config.adapter, fit_seed);
    r.unlearned_subset_probe += a / n;
    r.excluded_subset_probe += b / n;
    r.rows.push_back({pool.name + "/subset", "oracle", "linear", oc.probe_shots, s, "inductive", a});
    r.rows.push_back({pool.name + "/subset", "oracle", "linear", oc.probe_shots, s, "oracle_excluded", b});
  }
  if (config.write_artifacts) {
    std::filesystem::create_directories(config.output_dir);
    write_text(config.output_dir / "oracle.csv", report_csv(r.rows));
  }
  return r;
}

}  // namespace ifsl
