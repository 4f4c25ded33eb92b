#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "specbench/scoring.hpp"

namespace httplib {
class Server;
}

namespace specbench {

// ---------------------------------------------------------------------------
// Wire format (JSON bodies, UTF-8)
//
//   GET  /v1/info      -> {model_id, family, mask_literal, embedding_dim, max_batch}
//   GET  /v1/vocab     -> {tokens}
//   POST /v1/vocab_set {tokens} -> {vocab_id}
//   POST /v1/score     {text, mask_index, candidates, normalize, unified_vocab_id?}
//                      -> {log_probs, errors: [{index, reason}]}
//   POST /v1/topk      {text, mask_index, k, restrict_to_vocab_id?}
//                      -> {tokens, log_probs}
//   POST /v1/embed     {text} -> {vector}
// ---------------------------------------------------------------------------

nlohmann::json to_json(const ScoreRequest& r);
ScoreRequest score_request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ScoreResult& r);
ScoreResult score_result_from_json(const nlohmann::json& j, Normalization n);
nlohmann::json to_json(const TopkRequest& r);
TopkRequest topk_request_from_json(const nlohmann::json& j);
nlohmann::json topk_result_to_json(const std::vector<RankedToken>& ranked);
std::vector<RankedToken> topk_result_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Fixture backend
//
// A text file with four sections:
//
//   [info]        key=value lines: model_id, family, mask_literal,
//                 embedding_dim, max_batch, default_log_prob, strict
//   [vocab]       one model token per line
//   [scores]      probe_key \t token \t log_prob
//   [embeddings]  text \t space-separated vector
//
// Unlisted tokens of a listed probe get default_log_prob before
// normalization. With strict=true (the default) an unlisted probe is an
// error; otherwise it is a uniform distribution.
// ---------------------------------------------------------------------------

struct FixtureData {
  BackendInfo info;
  double default_log_prob = -20.0;
  bool strict = true;
  std::vector<std::string> vocab;
  std::unordered_map<std::string, std::unordered_map<std::string, double>> scores;
  std::map<std::string, std::vector<double>> embeddings;
};

// Key of a probe in a fixture: FNV-1a of the text and mask index. For causal
// models only the text up to and including the target mask counts, so any
// continuation after the slot cannot change the score.
std::string fixture_probe_key(const BackendInfo& info, std::string_view text,
                              std::size_t mask_index);

FixtureData read_fixture(const std::filesystem::path& path);
void write_fixture(const std::filesystem::path& path, const FixtureData& data);

class FixtureBackend final : public ScorerBackend {
 public:
  explicit FixtureBackend(FixtureData data);
  static std::shared_ptr<FixtureBackend> load(const std::filesystem::path& path);

  BackendInfo info() const override { return data_.info; }
  std::vector<std::string> vocab() const override { return data_.vocab; }
  std::string register_vocab(const Vocabulary& vocab) override;
  ScoreResult score(const ScoreRequest& request) const override;
  std::vector<RankedToken> topk(const TopkRequest& request) const override;
  PhraseEmbedding embed(const std::string& text) const override;

 private:
  const std::unordered_map<std::string, double>* entry(std::string_view text,
                                                       std::size_t mask_index) const;
  Vocabulary registered(const std::string& vocab_id) const;

  FixtureData data_;
  Vocabulary model_vocab_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, Vocabulary> registered_;
};

// ---------------------------------------------------------------------------
// HTTP client for a remote scorer (e.g. a model sidecar).
// ---------------------------------------------------------------------------

struct HttpOptions {
  std::string base_url;  // e.g. "http://127.0.0.1:8600"
  int retries = 2;
  std::chrono::milliseconds timeout{60000};
  std::chrono::milliseconds backoff{250};
};

class HttpBackend final : public ScorerBackend {
 public:
  explicit HttpBackend(HttpOptions options);

  BackendInfo info() const override;
  std::vector<std::string> vocab() const override;
  std::string register_vocab(const Vocabulary& vocab) override;
  ScoreResult score(const ScoreRequest& request) const override;
  std::vector<RankedToken> topk(const TopkRequest& request) const override;
  PhraseEmbedding embed(const std::string& text) const override;

 private:
  nlohmann::json call(const std::string& method, const std::string& path,
                      const nlohmann::json* body) const;

  HttpOptions options_;
  mutable std::atomic<std::uint64_t> next_id_{1};
  mutable std::once_flag info_once_;
  mutable BackendInfo info_;
};

// ---------------------------------------------------------------------------
// Record / replay. Each line of a recording is
//   {"op": ..., "request": ..., "response": ...}
// A replay serves recorded responses keyed by (op, request).
// ---------------------------------------------------------------------------

class RecordingBackend final : public ScorerBackend {
 public:
  RecordingBackend(std::shared_ptr<ScorerBackend> inner,
                   const std::filesystem::path& path);

  BackendInfo info() const override;
  std::vector<std::string> vocab() const override;
  std::string register_vocab(const Vocabulary& vocab) override;
  ScoreResult score(const ScoreRequest& request) const override;
  std::vector<RankedToken> topk(const TopkRequest& request) const override;
  PhraseEmbedding embed(const std::string& text) const override;

 private:
  void append(std::string_view op, const nlohmann::json& request,
              const nlohmann::json& response) const;

  std::shared_ptr<ScorerBackend> inner_;
  mutable std::mutex mutex_;
  mutable std::ofstream out_;
};

class ReplayBackend final : public ScorerBackend {
 public:
  explicit ReplayBackend(const std::filesystem::path& path);

  BackendInfo info() const override;
  std::vector<std::string> vocab() const override;
  std::string register_vocab(const Vocabulary& vocab) override;
  ScoreResult score(const ScoreRequest& request) const override;
  std::vector<RankedToken> topk(const TopkRequest& request) const override;
  PhraseEmbedding embed(const std::string& text) const override;

  std::size_t size() const { return responses_.size(); }

 private:
  const nlohmann::json& lookup(std::string_view op,
                               const nlohmann::json& request) const;

  std::unordered_map<std::string, nlohmann::json> responses_;
};

// ---------------------------------------------------------------------------
// Serves any backend over the wire format. Used for fixture-backed protocol
// tests and as a stand-in sidecar.
// ---------------------------------------------------------------------------

class ScorerServer {
 public:
  explicit ScorerServer(std::shared_ptr<ScorerBackend> backend);
  ~ScorerServer();
  ScorerServer(const ScorerServer&) = delete;
  ScorerServer& operator=(const ScorerServer&) = delete;

  // Binds to an ephemeral port and returns it.
  int bind_any_port(const std::string& host = "127.0.0.1");
  bool bind(const std::string& host, int port);
  // Blocks until stop().
  void serve();
  void stop();

 private:
  std::shared_ptr<ScorerBackend> backend_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace specbench
