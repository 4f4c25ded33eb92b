#include "specbench/backends.hpp"
#include "specbench/error.hpp"

namespace specbench {

using nlohmann::json;

namespace {

std::string replay_key(std::string_view op, const json& request) {
  std::string key(op);
  key.push_back('\n');
  key += request.dump();
  return key;
}

}  // namespace

RecordingBackend::RecordingBackend(std::shared_ptr<ScorerBackend> inner,
                                   const std::filesystem::path& path)
    : inner_(std::move(inner)) {
  if (!inner_) throw ConfigError("recording needs a backend");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::binary | std::ios::app);
  if (!out_) throw ConfigError("cannot open recording " + path.string());
}

void RecordingBackend::append(std::string_view op, const json& request,
                              const json& response) const {
  const json line{{"op", op}, {"request", request}, {"response", response}};
  const auto text = line.dump() + "\n";
  std::lock_guard lock(mutex_);
  out_ << text;
  out_.flush();
}

BackendInfo RecordingBackend::info() const {
  auto r = inner_->info();
  append("info", json::object(), to_json(r));
  return r;
}

std::vector<std::string> RecordingBackend::vocab() const {
  auto r = inner_->vocab();
  append("vocab", json::object(), {{"tokens", r}});
  return r;
}

std::string RecordingBackend::register_vocab(const Vocabulary& vocab) {
  auto r = inner_->register_vocab(vocab);
  append("vocab_set", {{"tokens", vocab.tokens()}}, {{"vocab_id", r}});
  return r;
}

ScoreResult RecordingBackend::score(const ScoreRequest& request) const {
  auto r = inner_->score(request);
  append("score", to_json(request), to_json(r));
  return r;
}

std::vector<RankedToken> RecordingBackend::topk(const TopkRequest& request) const {
  auto r = inner_->topk(request);
  append("topk", to_json(request), topk_result_to_json(r));
  return r;
}

PhraseEmbedding RecordingBackend::embed(const std::string& text) const {
  auto r = inner_->embed(text);
  append("embed", {{"text", text}}, {{"vector", r.vector}});
  return r;
}

ReplayBackend::ReplayBackend(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open recording " + path.string());
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    const auto at = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      responses_[replay_key(j.at("op").get<std::string>(), j.at("request"))] =
          j.at("response");
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad recording line: ") + e.what(), at);
    }
  }
}

const json& ReplayBackend::lookup(std::string_view op, const json& request) const {
  const auto it = responses_.find(replay_key(op, request));
  if (it == responses_.end()) {
    throw BackendError("no recorded response for " + std::string(op) + " " +
                           request.dump().substr(0, 200),
                       std::string(op), false);
  }
  return it->second;
}

BackendInfo ReplayBackend::info() const {
  return backend_info_from_json(lookup("info", json::object()));
}

std::vector<std::string> ReplayBackend::vocab() const {
  return lookup("vocab", json::object()).at("tokens").get<std::vector<std::string>>();
}

std::string ReplayBackend::register_vocab(const Vocabulary& vocab) {
  return lookup("vocab_set", {{"tokens", vocab.tokens()}}).at("vocab_id").get<std::string>();
}

ScoreResult ReplayBackend::score(const ScoreRequest& request) const {
  return score_result_from_json(lookup("score", to_json(request)), request.normalize);
}

std::vector<RankedToken> ReplayBackend::topk(const TopkRequest& request) const {
  return topk_result_from_json(lookup("topk", to_json(request)));
}

PhraseEmbedding ReplayBackend::embed(const std::string& text) const {
  return {text, lookup("embed", {{"text", text}}).at("vector").get<std::vector<double>>()};
}

}  // namespace specbench
