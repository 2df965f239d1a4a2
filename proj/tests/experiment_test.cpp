#include <fstream>

#include <gtest/gtest.h>

#include "adafer/experiment.hpp"
#include "support.hpp"

using namespace adafer;
namespace t = adafer::testing;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  apply_config_text(cfg,
                    "n-source = 300\n"
                    "n-target = 300\n"
                    "epochs = 3\n"
                    "hidden-dim = 16\n"
                    "batch-size = 32\n");
  return cfg;
}

std::string slurp(const std::filesystem::path& p) { return io::read_file(p); }

}  // namespace

TEST(ConfigTest, ParseAndCanonicalForm) {
  ExperimentConfig cfg;
  apply_config_text(cfg,
                    "# comment line\n"
                    "beta = 0.5   # trailing comment\n"
                    "--tau_n 0.25\n"
                    "gamma learn\n"
                    "strategy t-soft\n");
  EXPECT_EQ(cfg.train.beta, 0.5);
  EXPECT_EQ(cfg.train.mining.tau_n, 0.25);
  EXPECT_TRUE(cfg.train.learn_gamma);
  EXPECT_EQ(cfg.get("gamma"), "learn");
  EXPECT_EQ(cfg.train.strategy, AssignmentStrategy::TSoft);

  ExperimentConfig again;
  apply_config_text(again, cfg.canonical());
  EXPECT_EQ(again.canonical(), cfg.canonical());
  EXPECT_EQ(again.hash(), cfg.hash());
  EXPECT_NE(ExperimentConfig{}.hash(), cfg.hash());
  EXPECT_EQ(cfg.hash().size(), 16u);
}

TEST(ConfigTest, ErrorsCarryLineNumbers) {
  ExperimentConfig cfg;
  try {
    apply_config_text(cfg, "beta = 1\n\nbogus = 3\n");
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
  }
  EXPECT_THROW(apply_config_text(cfg, "beta = lots\n"), DatasetError);
  EXPECT_THROW(apply_config_text(cfg, "justakey\n"), DatasetError);
  cfg = ExperimentConfig{};
  cfg.source_path = "a.jsonl";
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(ConfigTest, SeedPropagates) {
  ExperimentConfig cfg;
  cfg.set("seed", "9");
  EXPECT_EQ(cfg.synth_config().seed, 9u);
  EXPECT_EQ(cfg.train_config().seed, 9u);
  EXPECT_EQ(cfg.train_config().mining.seed, 9u);
}

TEST(MethodTest, NamesRoundTrip) {
  for (auto m : kAllMethods) EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_THROW(parse_method("adafer2"), std::invalid_argument);
}

TEST(ExperimentTest, ReportIsDeterministicAndComplete) {
  const auto cfg = small_config();
  const auto data = prepare(cfg);
  const auto a = run_methods(data, cfg);
  const auto b = run_methods(data, cfg);
  const auto csv = report_csv(a);
  EXPECT_EQ(csv, report_csv(b));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "method,accuracy,acc_neutral,acc_happiness,acc_surprise,acc_sadness,acc_anger,acc_disgust,acc_fear,"
            "coverage,config_hash,seed");
  const auto j = report_json(a, cfg);
  EXPECT_EQ(j["methods"].size(), 8u);
  EXPECT_EQ(j["config_hash"], cfg.hash());
  EXPECT_TRUE(a.at(Method::Baseline2AuQuery).coverage.has_value());
  EXPECT_FALSE(a.at(Method::AdaFER).coverage.has_value());
}

TEST(ExperimentTest, SourceOnlyEqualsAdaferWithZeroWeights) {
  auto cfg = small_config();
  cfg.set("beta", "0");
  cfg.set("epsilon", "0");
  const auto data = prepare(cfg);
  const std::array<Method, 2> ms{Method::Baseline1SourceOnly, Method::AdaFER};
  const auto r = run_methods(data, cfg, ms);
  EXPECT_TRUE(bitwise_equal(*r.at(Method::Baseline1SourceOnly).params, *r.at(Method::AdaFER).params));
}

TEST(ExperimentTest, AuQueryIsExactWithoutFlips) {
  auto cfg = small_config();
  cfg.set("au-flip-rate", "0");
  const auto data = prepare(cfg);
  const std::array<Method, 1> ms{Method::Baseline2AuQuery};
  const auto r = run_methods(data, cfg, ms);
  EXPECT_EQ(r.at(Method::Baseline2AuQuery).metrics.accuracy, 1.0);
  EXPECT_EQ(*r.at(Method::Baseline2AuQuery).coverage, 1.0);
}

TEST(ExperimentTest, WithheldLabelsChangeNothing) {
  auto cfg = small_config();
  const auto data = prepare(cfg);
  cfg.withhold_labels = true;
  const auto hidden = prepare(cfg);
  for (const auto& s : hidden.target.samples()) EXPECT_FALSE(EvalAccess::label_of(s).has_value());
  const std::array<Method, 1> ms{Method::AdaFER};
  EXPECT_TRUE(bitwise_equal(*run_methods(data, cfg, ms).at(Method::AdaFER).params,
                            *run_methods(hidden, cfg, ms).at(Method::AdaFER).params));
}

TEST(ExperimentTest, PipelineWritesArtifacts) {
  const auto dir = t::temp_dir("pipeline");
  const auto cfg = small_config();
  const auto report = run_pipeline(cfg, dir);
  for (const char* f : {"au_stats.csv", "annotations.jsonl", "triplets.csv", "history.csv", "report.csv", "report.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  EXPECT_EQ(slurp(dir / "report.csv"), report_csv(report));
  const auto hist = slurp(dir / "history.csv");
  EXPECT_EQ(std::count(hist.begin(), hist.end(), '\n'), 4);
}

TEST(SweepTest, RowCountsAndConsistency) {
  const auto cfg = small_config();
  const auto margin = run_sweep(parse_knob("margin"), {"0.1", "0.2", "0.3", "0.5", "0.7", "1.0"}, cfg);
  EXPECT_EQ(margin.size(), 6u);
  const auto tau = run_sweep(parse_knob("tau_n"), {"0", "0.25", "0.5", "0.75"}, cfg);
  EXPECT_EQ(tau.size(), 4u);
  const auto csv = sweep_csv(tau);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "value,accuracy");

  // Defaults are beta 1 and tau 0.5, so these rows repeat the adafer run.
  const auto data = prepare(cfg);
  const std::array<Method, 1> ms{Method::AdaFER};
  const double adafer = run_methods(data, cfg, ms).at(Method::AdaFER).metrics.accuracy;
  EXPECT_EQ(run_sweep(SweepKnob::Beta, {"1"}, cfg)[0].accuracy, adafer);
  EXPECT_EQ(tau[2].accuracy, adafer);
  EXPECT_EQ(margin[3].accuracy, adafer);
  EXPECT_THROW(parse_knob("alpha"), std::invalid_argument);
}

TEST(StageErrorTest, NamesTheFailingStage) {
  auto cfg = small_config();
  cfg.set("epochs", "0");
  try {
    prepare(cfg);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "config");
  }
  cfg = small_config();
  const auto dir = t::temp_dir("stage");
  {
    std::ofstream(dir / "src.jsonl") << "not json\n";
    std::ofstream(dir / "tgt.jsonl") << "";
  }
  cfg.source_path = (dir / "src.jsonl").string();
  cfg.target_path = (dir / "tgt.jsonl").string();
  try {
    prepare(cfg);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "load");
    EXPECT_EQ(std::string(e.what()).rfind("stage load: ", 0), 0u);
  }
}
