#include <gtest/gtest.h>

#include <cstdlib>

#include "server_fixture.hpp"
#include "specbench/pipeline.hpp"
#include "specbench/util.hpp"
#include "test_support.hpp"

using namespace specbench;
using nlohmann::json;
namespace fs = std::filesystem;
using specbench::testing::data_dir;
using specbench::testing::RunningServer;
using specbench::testing::TempDir;

namespace {

fs::path bundle() { return data_dir() / "bundle"; }

RunConfig bundle_config(const fs::path& out) {
  auto cfg = RunConfig::load(bundle() / "config.json");
  cfg.out = out;
  return cfg;
}

// Forwards to another backend and counts scoring traffic.
class CountingBackend final : public ScorerBackend {
 public:
  explicit CountingBackend(std::shared_ptr<ScorerBackend> inner) : inner_(std::move(inner)) {}

  BackendInfo info() const override { return inner_->info(); }
  std::vector<std::string> vocab() const override { return inner_->vocab(); }
  std::string register_vocab(const Vocabulary& v) override { return inner_->register_vocab(v); }
  ScoreResult score(const ScoreRequest& r) const override {
    ++calls;
    return inner_->score(r);
  }
  std::vector<RankedToken> topk(const TopkRequest& r) const override {
    ++calls;
    return inner_->topk(r);
  }
  PhraseEmbedding embed(const std::string& t) const override {
    ++calls;
    return inner_->embed(t);
  }

  mutable std::atomic<int> calls{0};

 private:
  std::shared_ptr<ScorerBackend> inner_;
};

struct Counting {
  std::vector<std::shared_ptr<CountingBackend>> made;

  PipelineHooks hooks() {
    PipelineHooks h;
    h.make_backend = [this](const BackendSpec& spec) -> std::shared_ptr<ScorerBackend> {
      made.push_back(std::make_shared<CountingBackend>(make_backend(spec)));
      return made.back();
    };
    return h;
  }
  int calls() const {
    int n = 0;
    for (const auto& b : made) n += b->calls;
    return n;
  }
};

void expect_rate(const json& pair, const Rate& r, const std::string& what) {
  EXPECT_EQ(r.favorable, pair.at(0).get<std::size_t>()) << what;
  EXPECT_EQ(r.n, pair.at(1).get<std::size_t>()) << what;
  EXPECT_EQ(r.excluded, 0u) << what;
}

}  // namespace

TEST(Pipeline, BundleMatchesExpectedCounts) {
  TempDir tmp;
  Pipeline p(bundle_config(tmp.path()));
  const auto rep = p.run_all();
  EXPECT_EQ(p.executed(), (std::vector<std::string>{"ingest", "build", "evaluate", "report"}));
  const auto expected = json::parse(read_file(bundle() / "expected.json"));

  const auto bench = p.load_benchmark();
  for (const auto& [task, n] : expected.at("counts").items()) {
    EXPECT_EQ(bench.by_task.at(task).size(), n.get<std::size_t>()) << task;
  }
  EXPECT_EQ(bench.total(), 200u);

  std::size_t cells = 0;
  for (const auto& [model, modes] : expected.at("models").items()) {
    for (const auto& [mode, tasks] : modes.items()) {
      for (const auto& [task, cell] : tasks.items()) {
        const auto& got = rep.scores.at(model).at(mode).at(task);
        const auto where = model + "/" + mode + "/" + task;
        expect_rate(cell.at("specificity"), got.specificity, where + " specificity");
        ASSERT_TRUE(got.acc_at_k && got.acc_at_k_fine && got.naturalness) << where;
        expect_rate(cell.at("acc_at_k"), *got.acc_at_k, where + " acc");
        expect_rate(cell.at("acc_at_k_fine"), *got.acc_at_k_fine, where + " acc fine");
        expect_rate(cell.at("naturalness"), *got.naturalness, where + " naturalness");
        ++cells;
      }
    }
  }
  EXPECT_EQ(cells, 2u * 3u * 5u);
  for (const auto& [model, tasks] : expected.at("relatedness").items()) {
    for (const auto& [task, pair] : tasks.items()) {
      const auto& got = rep.scores.at(model).at("vanilla").at(task).relatedness;
      ASSERT_TRUE(got) << model << "/" << task;
      expect_rate(pair, *got, model + "/" + task + " relatedness");
    }
  }
  EXPECT_TRUE(rep.freq);
  EXPECT_TRUE(rep.pearson);
  EXPECT_EQ(p.load_report(), rep);
}

TEST(Pipeline, CompletedRunExecutesNothing) {
  TempDir tmp;
  {
    Pipeline p(bundle_config(tmp.path()));
    p.run_all();
  }
  Counting counting;
  Pipeline again(bundle_config(tmp.path()), counting.hooks());
  again.run_all();
  EXPECT_TRUE(again.executed().empty());
  EXPECT_EQ(counting.calls(), 0);
}

TEST(Pipeline, DeletingReportRerunsOnlyReport) {
  TempDir tmp;
  std::string json_before, text_before;
  {
    Pipeline p(bundle_config(tmp.path()));
    p.run_all();
    json_before = read_file(tmp / "report.json");
    text_before = read_file(tmp / "report.txt");
  }
  for (const auto* name : {"report.json", "report.txt"}) {
    fs::remove(tmp / name);
    Counting counting;
    Pipeline p(bundle_config(tmp.path()), counting.hooks());
    p.run_all();
    EXPECT_EQ(p.executed(), std::vector<std::string>{"report"}) << name;
    EXPECT_EQ(counting.calls(), 0) << name;
    EXPECT_EQ(read_file(tmp / "report.json"), json_before);
    EXPECT_EQ(read_file(tmp / "report.txt"), text_before);
  }
}

TEST(Pipeline, ChangedEvalSettingRerunsEvaluation) {
  TempDir tmp;
  {
    Pipeline p(bundle_config(tmp.path()));
    p.run_all();
  }
  auto cfg = bundle_config(tmp.path());
  cfg.eval.topk = 5;
  Pipeline p(cfg);
  const auto rep = p.run_all();
  EXPECT_EQ(p.executed(), (std::vector<std::string>{"evaluate", "report"}));
  EXPECT_EQ(rep.k, 5u);
}

TEST(Pipeline, TooFewDemosFailsBeforeScoring) {
  TempDir tmp;
  auto cfg = bundle_config(tmp.path());
  cfg.eval.k_demos = 1000;
  Counting counting;
  Pipeline p(cfg, counting.hooks());
  try {
    p.run_all();
    FAIL() << "expected a failure";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "evaluate");
    EXPECT_NE(std::string(e.what()).find("available"), std::string::npos) << e.what();
  }
  EXPECT_EQ(counting.calls(), 0);
  EXPECT_FALSE(fs::exists(tmp / "report.json"));
  EXPECT_FALSE(fs::exists(tmp / "outcomes" / "masked.jsonl"));
}

TEST(Pipeline, FixtureHttpAndReplayAreExchangeable) {
  TempDir fixture_out, http_out, replay_out, rec;
  Pipeline fixture_run(bundle_config(fixture_out.path()));
  fixture_run.run_all();
  const auto reference = read_file(fixture_out / "report.json");

  {
    RunningServer masked(FixtureBackend::load(bundle() / "fixtures" / "masked.fixture"));
    RunningServer causal(FixtureBackend::load(bundle() / "fixtures" / "causal.fixture"));
    auto cfg = bundle_config(http_out.path());
    cfg.record_dir = rec.path();
    for (auto& b : cfg.backends) {
      b.fixture.clear();
      b.url = b.name == "masked" ? masked.url() : causal.url();
    }
    Pipeline http_run(cfg);
    http_run.run_all();
    EXPECT_EQ(read_file(http_out / "report.json"), reference);
    EXPECT_EQ(read_file(http_out / "report.txt"), read_file(fixture_out / "report.txt"));
  }

  auto cfg = bundle_config(replay_out.path());
  for (auto& b : cfg.backends) {
    b.fixture.clear();
    b.replay = rec / (b.name + ".jsonl");
  }
  Pipeline replay_run(cfg);
  replay_run.run_all();
  EXPECT_EQ(read_file(replay_out / "report.json"), reference);
  for (const auto* name : {"masked.jsonl", "causal.jsonl"}) {
    EXPECT_EQ(read_file(replay_out / "outcomes" / name), read_file(fixture_out / "outcomes" / name));
  }
}

TEST(Pipeline, RepeatedRunsAreByteIdentical) {
  TempDir a, b;
  Pipeline(bundle_config(a.path())).run_all();
  auto cfg = bundle_config(b.path());
  cfg.eval.concurrency = 1;
  Pipeline(cfg).run_all();
  EXPECT_EQ(read_file(a / "report.json"), read_file(b / "report.json"));
  EXPECT_EQ(read_file(a / "report.txt"), read_file(b / "report.txt"));
}

TEST(Pipeline, EnvironmentOverridesBackendEndpoint) {
  auto cfg = bundle_config("unused");
  EXPECT_EQ(env_var_for_backend("masked"), "SPECBENCH_BACKEND_MASKED");
  EXPECT_EQ(env_var_for_backend("my-model.v2"), "SPECBENCH_BACKEND_MY_MODEL_V2");
  ::setenv("SPECBENCH_BACKEND_CAUSAL", "http://127.0.0.1:9", 1);
  cfg.apply_env_overrides();
  ::unsetenv("SPECBENCH_BACKEND_CAUSAL");
  EXPECT_EQ(cfg.backends[1].kind(), "url");
  EXPECT_EQ(cfg.backends[1].url, "http://127.0.0.1:9");
  EXPECT_EQ(cfg.backends[0].kind(), "fixture");
}

TEST(Pipeline, ConfigValidation) {
  const auto base = json::parse(read_file(bundle() / "config.json"));
  EXPECT_NO_THROW(RunConfig::from_json(base, bundle()).validate());

  auto unknown = base;
  unknown["k_demo"] = 3;
  EXPECT_THROW(RunConfig::from_json(unknown, bundle()), ConfigError);

  auto no_backends = base;
  no_backends["backends"] = json::array();
  EXPECT_THROW(RunConfig::from_json(no_backends, bundle()).validate(), ConfigError);

  auto two_sources = base;
  two_sources["backends"][0]["url"] = "http://127.0.0.1:1";
  EXPECT_THROW(RunConfig::from_json(two_sources, bundle()).validate(), ConfigError);

  auto dup = base;
  dup["backends"][1]["name"] = "masked";
  EXPECT_THROW(RunConfig::from_json(dup, bundle()).validate(), ConfigError);

  auto missing = base;
  missing["dump"] = "kb/nope.json.gz";
  EXPECT_THROW(RunConfig::from_json(missing, bundle()).validate(), ConfigError);

  auto nat = base;
  nat["modes"] = json::array({"VP", "naturalness"});
  EXPECT_THROW(RunConfig::from_json(nat, bundle()).validate(), ConfigError);

  EXPECT_EQ(parse_mode_flag("FP"), PromptMode::fewshot);
  EXPECT_EQ(parse_mode_flag("cascade"), PromptMode::cascade);
  EXPECT_THROW(parse_mode_flag("XP"), ConfigError);
}

TEST(Pipeline, DeadEndpointFailsEvaluation) {
  TempDir tmp;
  auto cfg = bundle_config(tmp.path());
  cfg.backends.resize(1);
  cfg.backends[0].fixture.clear();
  cfg.backends[0].url = "http://127.0.0.1:9";
  Pipeline p(cfg);
  EXPECT_THROW(p.run_all(), StageError);
  EXPECT_FALSE(fs::exists(tmp / "report.json"));
}

TEST(Pipeline, OutcomeLogRoundTrip) {
  TempDir tmp;
  Pipeline p(bundle_config(tmp.path()));
  p.run_all();
  const auto path = tmp / "outcomes" / "masked.jsonl";
  const auto r = read_outcomes(path);
  EXPECT_EQ(r.outcomes.size(), 200u * 3u * 2u);
  EXPECT_EQ(r.relatedness.size(), 200u);
  write_outcomes(tmp / "copy.jsonl", r);
  EXPECT_EQ(read_file(tmp / "copy.jsonl"), read_file(path));
}
