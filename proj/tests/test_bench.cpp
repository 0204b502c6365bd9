#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "ifsl/audit.hpp"
#include "ifsl/bench.hpp"
#include "ifsl/checkpoint.hpp"

using namespace ifsl;

namespace {

BenchmarkConfig tiny_config() {
  BenchmarkConfig c;
  c.output_dir = std::filesystem::temp_directory_path() / "ifsl_test_bench";
  c.seed = 3;
  c.model = testing::toy_model_config();
  c.pretrain.steps = 150;
  c.datasets = {{"fa", Role::kForget, testing::toy_generator("fa", 0), {}},
                {"ra", Role::kRetain, testing::toy_generator("ra", 1), {}},
                {"va", Role::kValidation, testing::toy_generator("va", 2), {}}};
  c.retain_map = {{"fa", {"ra"}}};
  c.shots = {0, 1, 2};
  c.seeds = 2;
  c.methods = {Method::kZeroShot, Method::kLinear, Method::kRes};
  c.levels = {KnowledgeLossLevel::parse("default")};
  c.adapter.epochs = 15;
  c.write_artifacts = false;
  return c;
}

struct TinyRun {
  BenchmarkConfig config = tiny_config();
  std::vector<MultimodalDataset> datasets = materialize(config);
  MiniClipModel base = base_model(config, datasets);
};

const TinyRun& tiny() {
  static const TinyRun run;
  return run;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config validation") {
  BenchmarkConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  SUBCASE("validation sets cannot retain") {
    c.retain_map["fa"] = {"va"};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
  SUBCASE("retain mapping names roster members only") {
    c.retain_map["fa"] = {"nope"};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
  SUBCASE("every forget set needs a retain mapping") {
    c.retain_map.clear();
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
  SUBCASE("a validation set is required") {
    c.datasets.pop_back();
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
  SUBCASE("duplicate names are rejected") {
    c.datasets.push_back(c.datasets.front());
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }
}

TEST_CASE("config JSON round-trip") {
  const BenchmarkConfig c = tiny_config();
  const BenchmarkConfig back = BenchmarkConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  BenchmarkConfig other = c;
  other.seed = 4;
  CHECK(other.hash() != c.hash());
}

TEST_CASE("report CSV") {
  const std::vector<ReportRow> rows = {{"fa", "default", "linear", 4, 0, "inductive", 55.5},
                                       {"fa", "L90", "res", 16, 2, "transductive", std::nullopt}};
  const std::string text = report_csv(rows);
  CHECK(text.rfind(kReportHeader + "\n", 0) == 0);
  CHECK(text.find("fa,default,linear,4,0,inductive,55.500\n") != std::string::npos);
  CHECK(text.find(",FAILED\n") != std::string::npos);
  const auto back = parse_report_csv(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].accuracy == 55.5);
  CHECK_FALSE(back[1].accuracy);
  CHECK(report_csv(back) == text);
  CHECK_THROWS_AS(parse_report_csv("bad header\n"), std::invalid_argument);
}

TEST_CASE("aggregation") {
  SUBCASE("a single row aggregates to itself") {
    const auto a = aggregate({{"fa", "default", "linear", 4, 0, "inductive", 42.125}});
    REQUIRE(a.size() == 2);
    CHECK(a[0].mean == 42.125);
    CHECK(a[1].shots == "overall");
    CHECK(a[1].mean == 42.125);
  }
  SUBCASE("order independent and zero shots excluded from the overall mean") {
    std::vector<ReportRow> rows;
    Rng rng(5);
    for (std::string f : {"fa", "fb"})
      for (std::size_t shots : {0, 1, 4})
        for (std::size_t s = 0; s < 3; ++s)
          rows.push_back({f, "default", "res", shots, s, "inductive", std::round(rng.uniform(0, 100) * 1000) / 1000});
    rows.push_back({"fc", "default", "res", 1, 0, "inductive", std::nullopt});
    const auto a = aggregate(rows);
    auto shuffled = rows;
    rng.shuffle(shuffled);
    const auto b = aggregate(shuffled);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].mean == b[i].mean);
    // Loop oracle over the raw rows.
    std::map<std::size_t, std::pair<double, std::size_t>> per_shot;
    for (const auto& r : rows)
      if (r.accuracy) {
        per_shot[r.shots].first += *r.accuracy;
        ++per_shot[r.shots].second;
      }
    double overall = 0.0;
    for (const auto& x : a) {
      if (x.shots == "overall") continue;
      const auto& [sum, n] = per_shot.at(std::stoul(x.shots));
      CHECK(std::abs(x.mean - sum / double(n)) <= 1e-9);
      CHECK(x.count == n);
    }
    overall = (per_shot[1].first / per_shot[1].second + per_shot[4].first / per_shot[4].second) / 2.0;
    CHECK(std::abs(a.back().mean - overall) <= 1e-9);
  }
  SUBCASE("empty input is an error") {
    CHECK_THROWS_AS(aggregate({}), std::invalid_argument);
  }
}

TEST_CASE("benchmark grid") {
  const TinyRun& t = tiny();
  AuditLog::instance().clear();
  const BenchmarkReport r = run_benchmark(t.config, t.datasets, t.base);
  const auto& c = t.config;
  CHECK(r.rows.size() == 1 * c.levels.size() * c.methods.size() * c.shots.size() * c.seeds * 2);
  REQUIRE(r.calibration.size() == 1);
  CHECK(r.calibration[0].result.success);
  CHECK(r.knowledge.size() == 1);
  for (const auto& row : r.rows) CHECK(row.accuracy.has_value());
  // Shot-0 rows carry zero-shot accuracy whatever the method.
  std::map<std::string, double> zs;
  for (const auto& row : r.rows)
    if (row.shots == 0 && row.seed == 0) zs[row.setting + row.method] = *row.accuracy;
  CHECK(zs["inductivelinear"] == zs["inductivezeroshot"]);
  CHECK(zs["transductiveres"] == zs["transductivezeroshot"]);
  // Held-out sets stay out of every gradient computation after pretraining.
  CHECK(AuditLog::instance().samples("unlearn", "va").empty());
  CHECK(AuditLog::instance().samples("fewshot", "va").empty());

  SUBCASE("reruns are byte-identical") {
    CHECK(run_benchmark(c, t.datasets, t.base).csv() == r.csv());
  }
}

TEST_CASE("calibration failure marks rows and the sweep continues") {
  const TinyRun& t = tiny();
  BenchmarkConfig c = t.config;
  c.levels = {KnowledgeLossLevel::parse("L90")};
  c.calibration.alphas = {1e12};  // selects nothing, so no knowledge is ever lost
  c.methods = {Method::kLinear};
  const BenchmarkReport r = run_benchmark(c, t.datasets, t.base);
  CHECK_FALSE(r.calibration[0].result.success);
  for (const auto& row : r.rows) CHECK(row.accuracy.has_value() == (row.setting == "transductive"));
  CHECK(r.calibration_csv().find("FAILED") != std::string::npos);
  CHECK_NOTHROW(aggregate(r.rows));
}

TEST_CASE("artifacts") {
  const TinyRun& t = tiny();
  BenchmarkConfig c = t.config;
  c.write_artifacts = true;
  c.methods = {Method::kZeroShot};
  c.shots = {0, 1};
  c.seeds = 1;
  std::filesystem::remove_all(c.output_dir);
  const BenchmarkReport r = run_benchmark(c, t.datasets, t.base);
  for (const char* f : {"report.csv", "aggregates.csv", "scatter.csv", "calibration.csv", "knowledge_fa_default.csv"})
    CHECK(std::filesystem::exists(c.output_dir / f));
  CHECK(slurp(c.output_dir / "report.csv") == r.csv());
  const LoadedCheckpoint ck = load_checkpoint(c.output_dir / "unlearned_fa_default.mckp");
  CHECK(ck.metadata.at("forget_dataset") == "fa");
  CHECK(ck.metadata.at("level") == "default");
  CHECK(ck.metadata.at("config_hash") == c.hash());
  std::filesystem::remove_all(c.output_dir);
}

TEST_CASE("oracle plumbing") {
  BenchmarkConfig c = tiny_config();
  c.oracle.pool = testing::toy_generator("pool", 4, 8);
  c.oracle.subset = {0, 1, 2};
  c.oracle.seeds = 1;
  c.oracle.probe_shots = 2;
  c.pretrain.steps = 60;
  const OracleResult r = run_oracle(c);
  // Zeroed class words make every subset prompt identical: exact chance.
  CHECK(r.unlearned_subset_zero_shot == doctest::Approx(100.0 / 3.0));
  CHECK(r.rows.size() == 7);
  std::size_t excluded = 0;
  for (const auto& row : r.rows) excluded += row.setting == "oracle_excluded";
  CHECK(excluded == 3);

  // Every seed is a full replicate of both pretraining runs.
  c.oracle.seeds = 2;
  const OracleResult two = run_oracle(c);
  CHECK(two.rows.size() == 14);
  CHECK(two.rows.front().seed == 0);
  CHECK(two.rows.back().seed == 1);

  const auto pool = generate(c.oracle.pool);
  const auto sub = subset_dataset(pool, {5, 2}, "sub");
  CHECK(sub.classes.size() == 2);
  CHECK(sub.classes[0].name == pool.classes[5].name);
  CHECK(sub.samples.size() == 2 * (pool.samples.size() / pool.classes.size()));
  CHECK_THROWS_AS(subset_dataset(pool, {1, 1}, "dup"), std::invalid_argument);
}
