#include "specbench/scoring.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "specbench/error.hpp"
#include "specbench/util.hpp"

namespace specbench {

using nlohmann::json;

Vocabulary::Vocabulary(std::vector<std::string> tokens,
                       std::vector<std::string> provenance)
    : tokens_(std::move(tokens)), provenance_(std::move(provenance)) {
  std::sort(tokens_.begin(), tokens_.end());
  tokens_.erase(std::unique(tokens_.begin(), tokens_.end()), tokens_.end());
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

std::optional<std::size_t> Vocabulary::index_of(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string Vocabulary::digest() const {
  std::uint64_t h = fnv1a64("");
  for (const auto& t : tokens_) h = fnv1a64("\n", fnv1a64(t, h));
  return "v" + hex64(h);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::vector<std::string> provenance;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.starts_with("#model ")) {
      provenance.push_back(line.substr(7));
      continue;
    }
    tokens.push_back(std::move(line));
  }
  return Vocabulary(std::move(tokens), std::move(provenance));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ostringstream out;
  for (const auto& m : provenance_) out << "#model " << m << '\n';
  for (const auto& t : tokens_) out << t << '\n';
  write_file_atomic(path, out.str());
}

Vocabulary unified_vocab(std::span<const ModelVocab> vocabs) {
  if (vocabs.empty()) throw ConfigError("unified vocabulary needs at least one model");
  std::vector<std::string> common(vocabs.front().tokens);
  std::sort(common.begin(), common.end());
  common.erase(std::unique(common.begin(), common.end()), common.end());
  std::vector<std::string> provenance{vocabs.front().model_id};
  for (std::size_t i = 1; i < vocabs.size(); ++i) {
    std::vector<std::string> other(vocabs[i].tokens);
    std::sort(other.begin(), other.end());
    std::vector<std::string> next;
    std::set_intersection(common.begin(), common.end(), other.begin(), other.end(),
                          std::back_inserter(next));
    common = std::move(next);
    provenance.push_back(vocabs[i].model_id);
  }
  if (common.empty()) throw ConfigError("unified vocabulary is empty");
  return Vocabulary(std::move(common), std::move(provenance));
}

std::string_view to_string(ModelFamily family) {
  return family == ModelFamily::causal ? "causal" : "masked";
}

ModelFamily parse_model_family(std::string_view name) {
  if (name == "masked") return ModelFamily::masked;
  if (name == "causal") return ModelFamily::causal;
  throw ConfigError("unknown model family '" + std::string(name) + "'");
}

std::string_view to_string(Normalization n) {
  return n == Normalization::model_vocab ? "model" : "unified";
}

Normalization parse_normalization(std::string_view name) {
  if (name == "unified") return Normalization::unified_vocab;
  if (name == "model") return Normalization::model_vocab;
  throw ConfigError("unknown normalization '" + std::string(name) + "'");
}

json to_json(const BackendInfo& info) {
  return {{"model_id", info.model_id},
          {"family", to_string(info.family)},
          {"mask_literal", info.mask_literal},
          {"embedding_dim", info.embedding_dim},
          {"max_batch", info.max_batch}};
}

BackendInfo backend_info_from_json(const json& j) {
  BackendInfo info;
  try {
    info.model_id = j.at("model_id").get<std::string>();
    info.family = parse_model_family(j.at("family").get<std::string>());
    info.mask_literal = j.value("mask_literal", "");
    info.embedding_dim = j.value("embedding_dim", std::size_t{0});
    info.max_batch = j.value("max_batch", std::size_t{64});
  } catch (const json::exception& e) {
    throw BackendError(std::string("malformed /v1/info response: ") + e.what(),
                       "info", false);
  }
  return info;
}

std::string slot_literal(const BackendInfo& info) {
  return info.mask_literal.empty() ? "[MASK]" : info.mask_literal;
}

MaskStyle mask_style_for(const BackendInfo& info, PromptMode mode,
                         std::optional<std::string> causal_filler) {
  MaskStyle style;
  style.mask_literal = slot_literal(info);
  if (info.family == ModelFamily::causal && is_naturalness(mode)) {
    if (causal_filler) {
      style.subject_filler = std::move(causal_filler);
    } else if (info.mask_literal.empty()) {
      style.subject_filler = "";
    }
  }
  return style;
}

bool PhraseEmbedding::degenerate() const {
  return std::all_of(vector.begin(), vector.end(),
                     [](double v) { return v == 0.0; });
}

ScoreResult score_candidates(const ScoreRequest& request,
                             const ScorerBackend& backend,
                             const Vocabulary& vocab) {
  if (request.candidates.empty()) throw ConfigError("score request without candidates");
  if (request.normalize == Normalization::unified_vocab) {
    if (request.vocab_id.empty()) {
      throw ConfigError("unified normalization needs a registered vocab id");
    }
    for (const auto& c : request.candidates) {
      if (!vocab.contains(c)) {
        throw ConfigError("candidate '" + c + "' is not in the unified vocabulary");
      }
    }
  }
  auto result = backend.score(request);
  if (result.log_probs.size() != request.candidates.size()) {
    throw BackendError("score response has " +
                           std::to_string(result.log_probs.size()) +
                           " values for " +
                           std::to_string(request.candidates.size()) + " candidates",
                       "score", false);
  }
  for (std::size_t i = 0; i < result.log_probs.size(); ++i) {
    auto& v = result.log_probs[i];
    if (v && !std::isfinite(*v)) {
      v.reset();
      result.errors.push_back({i, "non-finite log-probability"});
    }
  }
  return result;
}

std::vector<RankedToken> topk(const SerializedProbe& probe, std::size_t k,
                              const Vocabulary& vocab, const std::string& vocab_id,
                              const ScorerBackend& backend) {
  if (k < 1 || k > vocab.size()) {
    throw ConfigError("topk needs 1 <= k <= vocabulary size");
  }
  TopkRequest req{probe.text, probe.mask_index, k, vocab_id};
  auto ranked = backend.topk(req);
  for (const auto& r : ranked) {
    if (!vocab.contains(r.token)) {
      throw BackendError("topk returned '" + r.token +
                             "' outside the restricted vocabulary",
                         "topk", false);
    }
    if (!std::isfinite(r.log_prob)) {
      throw BackendError("topk returned a non-finite score", "topk", false);
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [&](const RankedToken& a, const RankedToken& b) {
                     if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                     return *vocab.index_of(a.token) < *vocab.index_of(b.token);
                   });
  if (ranked.size() > k) ranked.resize(k);
  return ranked;
}

PhraseEmbedding embed_phrase(const std::string& text, const ScorerBackend& backend) {
  if (text.empty()) throw ConfigError("cannot embed empty text");
  auto e = backend.embed(text);
  const auto dim = backend.info().embedding_dim;
  if (dim != 0 && e.vector.size() != dim) {
    throw BackendError("embedding has dimension " + std::to_string(e.vector.size()) +
                           ", expected " + std::to_string(dim),
                       "embed", false);
  }
  e.text = text;
  return e;
}

void require_embeddings(const ScorerBackend& backend) {
  const auto info = backend.info();
  if (info.embedding_dim == 0) {
    throw CapabilityError("backend " + info.model_id +
                          " does not provide phrase embeddings");
  }
}

double cosine(const PhraseEmbedding& a, const PhraseEmbedding& b) {
  if (a.vector.size() != b.vector.size()) {
    throw Error("cosine of embeddings with different dimensions");
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.vector.size(); ++i) {
    dot += a.vector[i] * b.vector[i];
    na += a.vector[i] * a.vector[i];
    nb += b.vector[i] * b.vector[i];
  }
  if (na == 0 || nb == 0) throw MetricError("cosine of a zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::uint64_t FrequencyTable::count(const std::string& token) const {
  const auto it = counts.find(token);
  return it == counts.end() ? 0 : it->second;
}

FrequencyTable FrequencyTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open frequency table " + path.string());
  FrequencyTable t;
  t.source = path.filename().string();
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    const auto line_offset = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw ParseError("frequency line needs token<TAB>count", line_offset);
    }
    try {
      t.counts[line.substr(0, tab)] += std::stoull(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw ParseError("bad frequency count", line_offset);
    }
  }
  return t;
}

void FrequencyTable::save(const std::filesystem::path& path) const {
  std::ostringstream out;
  for (const auto& [token, n] : counts) out << token << '\t' << n << '\n';
  write_file_atomic(path, out.str());
}

FrequencyTable build_frequency_table(const std::filesystem::path& corpus) {
  std::ifstream in(corpus, std::ios::binary);
  if (!in) throw ConfigError("cannot open corpus " + corpus.string());
  FrequencyTable t;
  t.source = corpus.filename().string();
  std::string token;
  const auto flush = [&] {
    if (!token.empty()) ++t.counts[token];
    token.clear();
  };
  char c;
  while (in.get(c)) {
    const auto u = static_cast<unsigned char>(c);
    // Bytes >= 0x80 belong to UTF-8 sequences and stay inside tokens.
    if (std::isspace(u) || (u < 0x80 && std::ispunct(u))) {
      flush();
    } else {
      token.push_back(c);
    }
  }
  flush();
  return t;
}

FreqChoice freq_preference(const SpecificityTriplet& triplet,
                           const FrequencyTable& table) {
  const auto f = table.count(triplet.fine.label);
  const auto c = table.count(triplet.coarse.label);
  if (f < c) return FreqChoice::fine;
  if (f > c) return FreqChoice::coarse;
  return FreqChoice::tie;
}

}  // namespace specbench
