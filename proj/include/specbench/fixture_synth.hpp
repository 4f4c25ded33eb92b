#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "specbench/pipeline.hpp"

namespace specbench {

// A synthetic model for the bundled fixture.
struct SynthModel {
  std::string name;  // backend name in the run config
  BackendInfo info;
  std::filesystem::path vocab_file;  // model vocabulary, one token per line
  std::filesystem::path output;      // fixture file to write
  // Added to the fine answer's raw score, per base mode.
  double fine_bias_vanilla = 0.0;
  double fine_bias_fewshot = 0.0;
  double fine_bias_cascade = 0.0;
};

struct SynthOptions {
  std::uint64_t seed = 1;
  std::size_t distractors = 12;  // high-scoring non-answer tokens per probe
  double default_log_prob = -20.0;
};

// Builds the benchmark for `config` with the given model vocabularies, then
// writes a fixture per model covering every probe the evaluate stage will
// issue. Returns expected counts per (model, mode, task), computed from raw
// scores by direct comparison and a plain sort.
nlohmann::json synthesize_fixtures(const RunConfig& config,
                                   const std::vector<SynthModel>& models,
                                   const SynthOptions& options);

}  // namespace specbench
