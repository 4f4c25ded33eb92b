#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "specbench/backends.hpp"
#include "specbench/error.hpp"

namespace specbench {

using nlohmann::json;

json to_json(const ScoreRequest& r) {
  json j{{"text", r.text},
         {"mask_index", r.mask_index},
         {"candidates", r.candidates},
         {"normalize", to_string(r.normalize)}};
  if (r.normalize == Normalization::unified_vocab) j["unified_vocab_id"] = r.vocab_id;
  return j;
}

ScoreRequest score_request_from_json(const json& j) {
  ScoreRequest r;
  r.text = j.at("text").get<std::string>();
  r.mask_index = j.at("mask_index").get<std::size_t>();
  r.candidates = j.at("candidates").get<std::vector<std::string>>();
  r.normalize = parse_normalization(j.value("normalize", "unified"));
  r.vocab_id = j.value("unified_vocab_id", "");
  return r;
}

json to_json(const ScoreResult& r) {
  json lp = json::array();
  for (const auto& v : r.log_probs) lp.push_back(v ? json(*v) : json(nullptr));
  json errors = json::array();
  for (const auto& e : r.errors) errors.push_back({{"index", e.index}, {"reason", e.reason}});
  return {{"log_probs", std::move(lp)}, {"errors", std::move(errors)}};
}

ScoreResult score_result_from_json(const json& j, Normalization n) {
  ScoreResult r;
  r.normalization = n;
  for (const auto& v : j.at("log_probs")) {
    if (v.is_null()) {
      r.log_probs.emplace_back();
    } else {
      r.log_probs.emplace_back(v.get<double>());
    }
  }
  if (j.contains("errors")) {
    for (const auto& e : j.at("errors")) {
      r.errors.push_back({e.at("index").get<std::size_t>(), e.value("reason", "")});
    }
  }
  return r;
}

json to_json(const TopkRequest& r) {
  json j{{"text", r.text}, {"mask_index", r.mask_index}, {"k", r.k}};
  if (!r.vocab_id.empty()) j["restrict_to_vocab_id"] = r.vocab_id;
  return j;
}

TopkRequest topk_request_from_json(const json& j) {
  TopkRequest r;
  r.text = j.at("text").get<std::string>();
  r.mask_index = j.at("mask_index").get<std::size_t>();
  r.k = j.at("k").get<std::size_t>();
  r.vocab_id = j.value("restrict_to_vocab_id", "");
  return r;
}

json topk_result_to_json(const std::vector<RankedToken>& ranked) {
  json tokens = json::array();
  json lps = json::array();
  for (const auto& r : ranked) {
    tokens.push_back(r.token);
    lps.push_back(r.log_prob);
  }
  return {{"tokens", std::move(tokens)}, {"log_probs", std::move(lps)}};
}

std::vector<RankedToken> topk_result_from_json(const json& j) {
  const auto& tokens = j.at("tokens");
  const auto& lps = j.at("log_probs");
  if (tokens.size() != lps.size()) throw Error("topk response lists differ in length");
  std::vector<RankedToken> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out.push_back({tokens[i].get<std::string>(), lps[i].get<double>()});
  }
  return out;
}

// ---------------------------------------------------------------------------

HttpBackend::HttpBackend(HttpOptions options) : options_(std::move(options)) {
  if (options_.base_url.empty()) throw ConfigError("backend url is empty");
  while (!options_.base_url.empty() && options_.base_url.back() == '/') {
    options_.base_url.pop_back();
  }
}

json HttpBackend::call(const std::string& method, const std::string& path,
                       const json* body) const {
  const auto request_id = std::to_string(next_id_.fetch_add(1));
  const httplib::Headers headers{{"X-Request-Id", request_id}};
  std::string last_error;
  for (int attempt = 0; attempt <= options_.retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(options_.backoff * attempt);
    httplib::Client client(options_.base_url);
    client.set_connection_timeout(options_.timeout);
    client.set_read_timeout(options_.timeout);
    client.set_write_timeout(options_.timeout);
    httplib::Result res = method == "GET"
                              ? client.Get(path, headers)
                              : client.Post(path, headers, body->dump(), "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      spdlog::warn("{} {}{} failed ({}), attempt {}/{}", method, options_.base_url, path,
                   last_error, attempt + 1, options_.retries + 1);
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status) + ": " + res->body;
      spdlog::warn("{} {}{} returned {}, attempt {}/{}", method, options_.base_url, path,
                   res->status, attempt + 1, options_.retries + 1);
      continue;
    }
    if (res->status >= 400) {
      throw BackendError(method + " " + path + " returned HTTP " +
                             std::to_string(res->status) + ": " + res->body,
                         request_id, false);
    }
    try {
      return json::parse(res->body);
    } catch (const json::exception& e) {
      throw BackendError("malformed JSON from " + path + ": " + e.what(), request_id, false);
    }
  }
  throw BackendError(method + " " + options_.base_url + path + " failed after " +
                         std::to_string(options_.retries + 1) + " attempts: " + last_error,
                     request_id, true);
}

BackendInfo HttpBackend::info() const {
  std::call_once(info_once_, [this] { info_ = backend_info_from_json(call("GET", "/v1/info", nullptr)); });
  return info_;
}

std::vector<std::string> HttpBackend::vocab() const {
  return call("GET", "/v1/vocab", nullptr).at("tokens").get<std::vector<std::string>>();
}

std::string HttpBackend::register_vocab(const Vocabulary& vocab) {
  const json body{{"tokens", vocab.tokens()}};
  return call("POST", "/v1/vocab_set", &body).at("vocab_id").get<std::string>();
}

ScoreResult HttpBackend::score(const ScoreRequest& request) const {
  const auto batch = std::max<std::size_t>(1, info().max_batch);
  ScoreResult merged;
  merged.normalization = request.normalize;
  for (std::size_t start = 0; start < request.candidates.size(); start += batch) {
    ScoreRequest part = request;
    const auto end = std::min(request.candidates.size(), start + batch);
    part.candidates.assign(request.candidates.begin() + start,
                           request.candidates.begin() + end);
    const auto body = to_json(part);
    ScoreResult r;
    try {
      r = score_result_from_json(call("POST", "/v1/score", &body), request.normalize);
    } catch (const json::exception& e) {
      throw BackendError(std::string("malformed /v1/score response: ") + e.what(), "score", false);
    }
    if (r.log_probs.size() != part.candidates.size()) {
      throw BackendError("/v1/score returned the wrong number of values", "score", false);
    }
    for (auto& e : r.errors) merged.errors.push_back({e.index + start, std::move(e.reason)});
    for (auto& v : r.log_probs) merged.log_probs.push_back(v);
  }
  return merged;
}

std::vector<RankedToken> HttpBackend::topk(const TopkRequest& request) const {
  const auto body = to_json(request);
  try {
    return topk_result_from_json(call("POST", "/v1/topk", &body));
  } catch (const json::exception& e) {
    throw BackendError(std::string("malformed /v1/topk response: ") + e.what(), "topk", false);
  }
}

PhraseEmbedding HttpBackend::embed(const std::string& text) const {
  const json body{{"text", text}};
  try {
    return {text, call("POST", "/v1/embed", &body).at("vector").get<std::vector<double>>()};
  } catch (const json::exception& e) {
    throw BackendError(std::string("malformed /v1/embed response: ") + e.what(), "embed", false);
  }
}

// ---------------------------------------------------------------------------

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const json::exception& e) {
    reply(res, 400, {{"error", std::string("bad request: ") + e.what()}});
  } catch (const ConfigError& e) {
    reply(res, 400, {{"error", e.what()}});
  } catch (const CapabilityError& e) {
    reply(res, 501, {{"error", e.what()}});
  } catch (const BackendError& e) {
    reply(res, e.retryable() ? 503 : 422, {{"error", e.what()}});
  } catch (const std::exception& e) {
    reply(res, 500, {{"error", e.what()}});
  }
}

}  // namespace

ScorerServer::ScorerServer(std::shared_ptr<ScorerBackend> backend)
    : backend_(std::move(backend)), server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;
  auto* b = backend_.get();
  s.Get("/v1/info", [b](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, to_json(b->info())); });
  });
  s.Get("/v1/vocab", [b](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, {{"tokens", b->vocab()}}); });
  });
  s.Post("/v1/vocab_set", [b](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto j = json::parse(req.body);
      Vocabulary v(j.at("tokens").get<std::vector<std::string>>());
      reply(res, 200, {{"vocab_id", b->register_vocab(v)}});
    });
  });
  s.Post("/v1/score", [b](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto r = score_request_from_json(json::parse(req.body));
      const auto max_batch = b->info().max_batch;
      if (r.candidates.size() > max_batch) {
        reply(res, 413, {{"error", "too many candidates"}, {"max_batch", max_batch}});
        return;
      }
      reply(res, 200, to_json(b->score(r)));
    });
  });
  s.Post("/v1/topk", [b](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      reply(res, 200, topk_result_to_json(b->topk(topk_request_from_json(json::parse(req.body)))));
    });
  });
  s.Post("/v1/embed", [b](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto text = json::parse(req.body).at("text").get<std::string>();
      reply(res, 200, {{"vector", b->embed(text).vector}});
    });
  });
}

ScorerServer::~ScorerServer() { stop(); }

int ScorerServer::bind_any_port(const std::string& host) {
  return server_->bind_to_any_port(host);
}

bool ScorerServer::bind(const std::string& host, int port) {
  return server_->bind_to_port(host, port);
}

void ScorerServer::serve() { server_->listen_after_bind(); }

void ScorerServer::stop() {
  if (server_) server_->stop();
}

}  // namespace specbench
