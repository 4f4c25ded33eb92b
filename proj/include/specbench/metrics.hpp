#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "specbench/graph_paths.hpp"
#include "specbench/prompting.hpp"
#include "specbench/scoring.hpp"

namespace specbench {

// One scored probe: a triplet under one model and prompting mode.
struct TripletOutcome {
  std::string model_id;
  std::string task_id;
  std::string subject_id;
  std::string fine_id;
  std::string coarse_id;
  PromptMode mode = PromptMode::vanilla;
  std::optional<double> c_fine;
  std::optional<double> c_coarse;
  // Absent when top-k was not computed for this probe.
  std::optional<bool> fine_in_topk;
  std::optional<bool> coarse_in_topk;
  std::string error;  // non-empty when the probe could not be scored

  bool errored() const { return !error.empty() || !c_fine || !c_coarse; }
  bool fine_wins() const { return !errored() && *c_fine > *c_coarse; }
  std::string key() const;  // task, subject, fine, coarse
};

nlohmann::json to_json(const TripletOutcome& o);
TripletOutcome outcome_from_json(const nlohmann::json& j);

// Embedding comparison for one triplet. Cosines are absent when any of the
// three vectors is degenerate.
struct RelatednessOutcome {
  std::string model_id;
  std::string task_id;
  std::string subject_id;
  std::string fine_id;
  std::string coarse_id;
  std::optional<double> cos_fine;
  std::optional<double> cos_coarse;

  bool degenerate() const { return !cos_fine || !cos_coarse; }
  std::string key() const;
};

nlohmann::json to_json(const RelatednessOutcome& o);
RelatednessOutcome relatedness_outcome_from_json(const nlohmann::json& j);

RelatednessOutcome relatedness_outcome(const std::string& model_id,
                                       const SpecificityTriplet& triplet,
                                       const PhraseEmbedding& subject,
                                       const PhraseEmbedding& fine,
                                       const PhraseEmbedding& coarse);

// favorable / n; excluded items are not part of n.
struct Rate {
  std::size_t favorable = 0;
  std::size_t n = 0;
  std::size_t excluded = 0;

  // Throws MetricError when n == 0.
  double value() const;
  bool defined() const { return n > 0; }
  bool operator==(const Rate&) const = default;
};

nlohmann::json to_json(const Rate& r);
Rate rate_from_json(const nlohmann::json& j);

// Strict c_fine > c_coarse; ties count as not specific, errored outcomes are
// excluded. Throws MetricError on empty input.
Rate specificity_pr(std::span<const TripletOutcome> outcomes);
// Same contract; every outcome must come from a naturalness mode.
Rate naturalness_pr(std::span<const TripletOutcome> outcomes);

// Fraction of candidate occurrences ranked in the top k. Fine and coarse are
// separate trials unless `fine_only`. Outcomes without top-k data are
// excluded.
Rate acc_at_k(std::span<const TripletOutcome> outcomes, bool fine_only = false);

// Strict cos(subject, fine) > cos(subject, coarse); degenerate triplets are
// excluded and counted.
Rate relatedness_pr(std::span<const RelatednessOutcome> outcomes);

// Frequency baseline: the fine label is strictly rarer.
Rate freq_pr(std::span<const SpecificityTriplet> triplets, const FrequencyTable& table);

// Rows are models, columns are relations.
struct ModelMatrix {
  std::vector<std::string> rows;
  std::vector<std::string> columns;
  std::vector<std::vector<std::optional<double>>> values;

  bool complete() const;
};

struct PearsonPair {
  std::string a;
  std::string b;
  std::optional<double> r;  // absent when either row has zero variance

  bool operator==(const PearsonPair&) const = default;
};

struct PearsonResult {
  double average = 0.0;
  std::vector<PearsonPair> pairs;
  std::size_t excluded = 0;

  bool operator==(const PearsonResult&) const = default;
};

std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

// Pearson r for every unordered row pair, averaged over the defined pairs.
// Needs a complete matrix with at least 2 rows and 2 columns.
PearsonResult pairwise_pearson(const ModelMatrix& matrix);

nlohmann::json to_json(const PearsonResult& p);
PearsonResult pearson_from_json(const nlohmann::json& j);

// acc_variant - acc_base in percentage points.
double correctness_delta(double acc_base, double acc_variant);

// Fine-only top-k accuracy delta between two runs over the same triplets.
// Throws MetricError when the triplet sets differ.
double correctness_delta(std::span<const TripletOutcome> base,
                         std::span<const TripletOutcome> variant);

// Mean of the values, each relation weighted equally.
double unweighted_mean(std::span<const double> values);

}  // namespace specbench
