#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "specbench/graph_paths.hpp"
#include "specbench/metrics.hpp"

namespace specbench {

// Scores of one relation under one model and base prompting mode.
// Naturalness is the subject-masked counterpart of the mode; relatedness does
// not depend on the prompt and is filled for the vanilla row only.
struct RelationScore {
  Rate specificity;
  std::optional<Rate> acc_at_k;       // fine and coarse pooled
  std::optional<Rate> acc_at_k_fine;  // fine only
  std::optional<Rate> naturalness;
  std::optional<Rate> relatedness;

  bool operator==(const RelationScore&) const = default;
};

struct ModelEntry {
  std::string model_id;
  ModelFamily family = ModelFamily::masked;

  bool operator==(const ModelEntry&) const = default;
};

struct MetricReport {
  std::vector<std::string> tasks;             // display order
  std::map<std::string, std::string> names;   // task_id -> relation name
  std::size_t k = 10;                         // Acc@k
  std::vector<ModelEntry> models;
  // model_id -> mode -> task_id
  std::map<std::string, std::map<std::string, std::map<std::string, RelationScore>>> scores;
  std::optional<std::map<std::string, Rate>> freq;
  std::optional<PearsonResult> pearson;  // over vanilla p_r
  // model_id -> mode -> task_id -> points, fine-only Acc@k against vanilla
  std::map<std::string, std::map<std::string, std::map<std::string, double>>> correctness;

  bool operator==(const MetricReport&) const = default;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
  std::string to_text() const;
};

struct ReportInputs {
  std::vector<RelationSpec> relations;
  std::vector<ModelEntry> models;
  std::span<const TripletOutcome> outcomes;
  std::span<const RelatednessOutcome> relatedness;
  const Benchmark* benchmark = nullptr;        // for the Freq baseline
  const FrequencyTable* frequency = nullptr;   // optional
  std::size_t k = 10;
};

// Aggregates outcomes keyed by (model, mode, relation). The result does not
// depend on the order of the outcome lists.
MetricReport compute_report(const ReportInputs& inputs);

// Relation display order: the five standard relations first, then the rest
// in configuration order.
std::vector<std::string> display_order(std::span<const RelationSpec> relations);

void write_report(const std::filesystem::path& dir, const MetricReport& report);

}  // namespace specbench
