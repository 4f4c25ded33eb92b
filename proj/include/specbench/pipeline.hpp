#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "specbench/backends.hpp"
#include "specbench/error.hpp"
#include "specbench/graph_paths.hpp"
#include "specbench/kb_ingest.hpp"
#include "specbench/metrics.hpp"
#include "specbench/prompting.hpp"
#include "specbench/report.hpp"
#include "specbench/scoring.hpp"

namespace specbench {

// Exactly one of url, fixture, replay is set.
struct BackendSpec {
  std::string name;
  std::string url;
  std::filesystem::path fixture;
  std::filesystem::path replay;
  // Text written in place of a masked subject for causal models.
  std::optional<std::string> causal_filler;

  std::string kind() const;  // "url", "fixture" or "replay"
};

// Settings that shape the probes and their scoring.
struct EvalSettings {
  std::vector<PromptMode> modes{PromptMode::vanilla};  // base modes
  std::size_t k_demos = 10;
  std::uint64_t seed = 0;
  std::string demo_separator = " ";
  bool naturalness = true;
  bool relatedness = true;
  std::size_t topk = 10;  // 0 disables Acc@k
  Normalization normalize = Normalization::unified_vocab;
  bool cascade_rescoring = false;  // causal models only
  std::size_t rescoring_top_m = 20;
  std::size_t concurrency = 4;

  nlohmann::json to_json() const;
};

struct RunConfig {
  std::filesystem::path dump;
  std::filesystem::path snapshot_dir;  // instead of a dump
  std::vector<RelationSpec> relations = default_relations();
  std::string language = "en";
  std::filesystem::path templates;   // empty: built-in templates
  std::filesystem::path vocab;       // empty: intersection of backend vocabularies
  std::vector<BackendSpec> backends;
  std::filesystem::path record_dir;  // record backend traffic here when set
  EvalSettings eval;
  int max_len = 5;
  Rational min_gap{1};
  std::size_t cap = 5000;
  std::size_t max_per_subject = 50;
  std::size_t sample_per_relation = 0;  // 0: no extra subsampling
  std::filesystem::path frequency_table;
  std::filesystem::path out = "out";

  // Relative paths resolve against the config file's directory.
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig from_json(const nlohmann::json& j,
                             const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;

  // Applies SPECBENCH_BACKEND_<NAME>=<url> overrides from the environment.
  void apply_env_overrides();
  // Throws ConfigError on the first problem found.
  void validate() const;
};

// "VP"/"FP"/"CP" or a mode name.
PromptMode parse_mode_flag(std::string_view text);
std::string env_var_for_backend(std::string_view name);

class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& cause);

  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// One probe to score: a triplet of a relation under a prompting mode.
struct PlannedProbe {
  std::string task_id;
  std::size_t triplet = 0;  // index into the relation's triplets
  PromptMode mode = PromptMode::vanilla;
  SerializedProbe probe;
};

// Few-shot demos for every query, keyed by task then triplet index. Throws
// ConfigError when a pool is too small for k demos.
using DemoPlan = std::map<std::string, std::vector<DemoSet>>;
DemoPlan plan_demos(const Benchmark& bench, const EvalSettings& settings);

// Every probe a backend is asked to score, in a fixed order.
std::vector<PlannedProbe> plan_probes(const Benchmark& bench,
                                      const TemplateCatalog& catalog,
                                      std::span<const RelationSpec> relations,
                                      const EvalSettings& settings,
                                      const DemoPlan& demos,
                                      const BackendInfo& info,
                                      const std::optional<std::string>& causal_filler);

struct EvalResult {
  std::vector<TripletOutcome> outcomes;
  std::vector<RelatednessOutcome> relatedness;
};

// Scores the planned probes concurrently; outcome order follows the plan.
EvalResult evaluate_backend(const Benchmark& bench,
                            std::span<const PlannedProbe> plan,
                            ScorerBackend& backend, const Vocabulary& vocab,
                            const std::string& vocab_id,
                            const EvalSettings& settings);

// Outcome log: one JSON object per line, sorted.
void write_outcomes(const std::filesystem::path& path, const EvalResult& result);
EvalResult read_outcomes(const std::filesystem::path& path);

std::shared_ptr<ScorerBackend> make_backend(const BackendSpec& spec);

struct PipelineHooks {
  std::function<std::shared_ptr<ScorerBackend>(const BackendSpec&)> make_backend;
};

// ingest -> build -> evaluate -> report. Each stage runs only when its
// manifest entry is missing, stale, or its outputs are gone.
class Pipeline {
 public:
  explicit Pipeline(RunConfig config, PipelineHooks hooks = {});

  // Each returns true when the stage ran.
  bool ingest(bool force = false);
  bool build(bool force = false);
  bool evaluate(bool force = false);
  bool report(bool force = false);
  MetricReport run_all(bool force = false);

  const RunConfig& config() const { return config_; }
  const std::vector<std::string>& executed() const { return executed_; }
  const nlohmann::json& manifest() const { return manifest_; }

  std::filesystem::path snapshot_dir() const;
  std::filesystem::path benchmark_dir() const { return config_.out / "benchmark"; }
  std::filesystem::path outcomes_dir() const { return config_.out / "outcomes"; }

  Benchmark load_benchmark() const;
  Vocabulary load_vocab() const;
  MetricReport load_report() const;
  TemplateCatalog catalog() const;

 private:
  template <class F>
  bool stage(const std::string& name, const std::string& hash,
             const std::vector<std::filesystem::path>& outputs, bool force, F&& body);
  std::string ingest_hash() const;
  std::string build_hash();
  std::string evaluate_hash();
  std::string report_hash();
  std::shared_ptr<ScorerBackend> backend(const BackendSpec& spec);
  const Vocabulary& vocabulary();
  void save_manifest() const;

  RunConfig config_;
  PipelineHooks hooks_;
  nlohmann::json manifest_;
  std::vector<std::string> executed_;
  std::map<std::string, std::shared_ptr<ScorerBackend>> backends_;
  std::optional<Vocabulary> vocab_;
};

}  // namespace specbench
