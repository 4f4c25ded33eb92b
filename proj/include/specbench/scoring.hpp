#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "specbench/graph_paths.hpp"
#include "specbench/prompting.hpp"
#include "specbench/vocabulary.hpp"

namespace specbench {

enum class ModelFamily { masked, causal };
std::string_view to_string(ModelFamily family);
ModelFamily parse_model_family(std::string_view name);

enum class Normalization { unified_vocab, model_vocab };
std::string_view to_string(Normalization n);  // "unified" / "model"
Normalization parse_normalization(std::string_view name);

struct BackendInfo {
  std::string model_id;
  ModelFamily family = ModelFamily::masked;
  // Empty when the model has no mask token (causal models); probes then use
  // "[MASK]" as a positional placeholder.
  std::string mask_literal;
  std::size_t embedding_dim = 0;  // 0: no embedding support
  std::size_t max_batch = 64;
};

nlohmann::json to_json(const BackendInfo& info);
BackendInfo backend_info_from_json(const nlohmann::json& j);

// The literal used to mark slots in text sent to this backend.
std::string slot_literal(const BackendInfo& info);

// How probes are serialized for a backend. Causal models have no left
// context for a masked subject, so the subject slot becomes `causal_filler`
// (default: the mask literal if the backend has one, otherwise empty).
MaskStyle mask_style_for(const BackendInfo& info, PromptMode mode,
                         std::optional<std::string> causal_filler = std::nullopt);

struct ScoreRequest {
  std::string text;
  std::size_t mask_index = 0;
  std::vector<std::string> candidates;
  Normalization normalize = Normalization::unified_vocab;
  std::string vocab_id;  // required for unified normalization
};

struct CandidateError {
  std::size_t index = 0;
  std::string reason;
};

// Log-probabilities aligned with the request's candidates. A candidate the
// backend cannot score has no value and an entry in `errors`.
struct ScoreResult {
  std::vector<std::optional<double>> log_probs;
  std::vector<CandidateError> errors;
  Normalization normalization = Normalization::unified_vocab;

  std::optional<double> at(std::size_t i) const { return log_probs.at(i); }
};

struct TopkRequest {
  std::string text;
  std::size_t mask_index = 0;
  std::size_t k = 10;
  std::string vocab_id;  // restrict to this registered vocabulary
};

struct RankedToken {
  std::string token;
  double log_prob = 0.0;
};

struct PhraseEmbedding {
  std::string text;
  std::vector<double> vector;

  bool degenerate() const;  // zero norm; cosine undefined
};

// The scorer contract. Implementations must be safe for concurrent calls.
class ScorerBackend {
 public:
  virtual ~ScorerBackend() = default;

  virtual BackendInfo info() const = 0;
  virtual std::vector<std::string> vocab() const = 0;
  // Makes `vocab` available for server-side renormalization and topk
  // restriction; returns its id.
  virtual std::string register_vocab(const Vocabulary& vocab) = 0;
  virtual ScoreResult score(const ScoreRequest& request) const = 0;
  virtual std::vector<RankedToken> topk(const TopkRequest& request) const = 0;
  virtual PhraseEmbedding embed(const std::string& text) const = 0;
};

// Validates the request (non-empty, candidates in vocab) and scores it.
ScoreResult score_candidates(const ScoreRequest& request,
                             const ScorerBackend& backend,
                             const Vocabulary& vocab);

// k best tokens of `vocab` at the probe's mask, descending; ties resolve in
// vocabulary order.
std::vector<RankedToken> topk(const SerializedProbe& probe, std::size_t k,
                              const Vocabulary& vocab,
                              const std::string& vocab_id,
                              const ScorerBackend& backend);

PhraseEmbedding embed_phrase(const std::string& text,
                             const ScorerBackend& backend);

// Fails at setup when embeddings are needed but unsupported.
void require_embeddings(const ScorerBackend& backend);

double cosine(const PhraseEmbedding& a, const PhraseEmbedding& b);

struct FrequencyTable {
  std::map<std::string, std::uint64_t> counts;
  std::string source;

  std::uint64_t count(const std::string& token) const;

  // token \t count per line.
  static FrequencyTable load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// Counts whitespace/punctuation-delimited tokens of a plain-text corpus.
FrequencyTable build_frequency_table(const std::filesystem::path& corpus);

enum class FreqChoice { fine, coarse, tie };

// The rarer label wins.
FreqChoice freq_preference(const SpecificityTriplet& triplet,
                           const FrequencyTable& table);

}  // namespace specbench
