#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "specbench/backends.hpp"
#include "specbench/error.hpp"
#include "specbench/util.hpp"

namespace specbench {

std::string fixture_probe_key(const BackendInfo& info, std::string_view text,
                              std::size_t mask_index) {
  std::string_view keyed = text;
  if (info.family == ModelFamily::causal) {
    const auto literal = slot_literal(info);
    const auto offsets = find_mask_offsets(text, literal);
    if (mask_index >= offsets.size()) {
      throw ConfigError("mask index " + std::to_string(mask_index) +
                        " out of range for probe '" + std::string(text) + "'");
    }
    keyed = text.substr(0, offsets[mask_index] + literal.size());
  }
  std::string buf(keyed);
  buf.push_back('\x1f');
  buf += std::to_string(mask_index);
  return hex64(fnv1a64(buf));
}

namespace {

double parse_double(std::string_view s, std::uint64_t offset) {
  try {
    std::size_t used = 0;
    const std::string str(trim(s));
    const double v = std::stod(str, &used);
    if (used != str.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError("bad number '" + std::string(s) + "' in fixture", offset);
  }
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

FixtureData read_fixture(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open fixture " + path.string());
  FixtureData data;
  enum class Section { none, info, vocab, scores, embeddings } section = Section::none;
  std::string line;
  std::uint64_t offset = 0;
  bool have_model = false;
  while (std::getline(in, line)) {
    const auto at = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (line == "[info]") { section = Section::info; continue; }
    if (line == "[vocab]") { section = Section::vocab; continue; }
    if (line == "[scores]") { section = Section::scores; continue; }
    if (line == "[embeddings]") { section = Section::embeddings; continue; }
    switch (section) {
      case Section::none:
        throw ParseError("fixture content before a section header", at);
      case Section::info: {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("expected key=value", at);
        const auto key = std::string(trim(std::string_view(line).substr(0, eq)));
        const auto value = std::string(trim(std::string_view(line).substr(eq + 1)));
        if (key == "model_id") {
          data.info.model_id = value;
          have_model = true;
        } else if (key == "family") {
          data.info.family = parse_model_family(value);
        } else if (key == "mask_literal") {
          data.info.mask_literal = value;
        } else if (key == "embedding_dim") {
          data.info.embedding_dim = static_cast<std::size_t>(parse_double(value, at));
        } else if (key == "max_batch") {
          data.info.max_batch = static_cast<std::size_t>(parse_double(value, at));
        } else if (key == "default_log_prob") {
          data.default_log_prob = parse_double(value, at);
        } else if (key == "strict") {
          data.strict = value == "true" || value == "1";
        } else {
          throw ParseError("unknown fixture info key '" + key + "'", at);
        }
        break;
      }
      case Section::vocab:
        data.vocab.push_back(line);
        break;
      case Section::scores: {
        const auto f = split(line, '\t');
        if (f.size() != 3) throw ParseError("score line needs 3 fields", at);
        data.scores[std::string(f[0])][std::string(f[1])] = parse_double(f[2], at);
        break;
      }
      case Section::embeddings: {
        const auto tab = line.rfind('\t');
        if (tab == std::string::npos) throw ParseError("embedding line needs text<TAB>vector", at);
        std::vector<double> v;
        for (auto part : split(std::string_view(line).substr(tab + 1), ' ')) {
          if (!part.empty()) v.push_back(parse_double(part, at));
        }
        data.embeddings[line.substr(0, tab)] = std::move(v);
        break;
      }
    }
  }
  if (!have_model) throw ConfigError("fixture " + path.string() + " has no model_id");
  return data;
}

void write_fixture(const std::filesystem::path& path, const FixtureData& data) {
  std::ostringstream out;
  out << "#specbench-fixture v1\n[info]\n"
      << "model_id=" << data.info.model_id << '\n'
      << "family=" << to_string(data.info.family) << '\n'
      << "mask_literal=" << data.info.mask_literal << '\n'
      << "embedding_dim=" << data.info.embedding_dim << '\n'
      << "max_batch=" << data.info.max_batch << '\n'
      << "default_log_prob=" << format_double(data.default_log_prob) << '\n'
      << "strict=" << (data.strict ? "true" : "false") << '\n';
  out << "[vocab]\n";
  for (const auto& t : data.vocab) out << t << '\n';
  out << "[scores]\n";
  std::vector<std::string> keys;
  keys.reserve(data.scores.size());
  for (const auto& [k, _] : data.scores) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  for (const auto& k : keys) {
    const auto& m = data.scores.at(k);
    std::vector<std::pair<std::string, double>> rows(m.begin(), m.end());
    std::sort(rows.begin(), rows.end());
    for (const auto& [tok, lp] : rows) out << k << '\t' << tok << '\t' << format_double(lp) << '\n';
  }
  out << "[embeddings]\n";
  for (const auto& [text, v] : data.embeddings) {
    out << tsv_field(text) << '\t';
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out << ' ';
      out << format_double(v[i]);
    }
    out << '\n';
  }
  write_file_atomic(path, out.str());
}

FixtureBackend::FixtureBackend(FixtureData data)
    : data_(std::move(data)), model_vocab_(data_.vocab) {
  if (data_.info.model_id.empty()) throw ConfigError("fixture without model_id");
  if (model_vocab_.size() == 0) throw ConfigError("fixture " + data_.info.model_id + " has an empty vocabulary");
  for (const auto& [text, v] : data_.embeddings) {
    if (data_.info.embedding_dim != 0 && v.size() != data_.info.embedding_dim) {
      throw ConfigError("fixture embedding for '" + text + "' has the wrong dimension");
    }
  }
}

std::shared_ptr<FixtureBackend> FixtureBackend::load(const std::filesystem::path& path) {
  return std::make_shared<FixtureBackend>(read_fixture(path));
}

std::string FixtureBackend::register_vocab(const Vocabulary& vocab) {
  auto id = vocab.digest();
  std::unique_lock lock(mutex_);
  registered_.emplace(id, vocab);
  return id;
}

Vocabulary FixtureBackend::registered(const std::string& vocab_id) const {
  std::shared_lock lock(mutex_);
  const auto it = registered_.find(vocab_id);
  if (it == registered_.end()) {
    throw BackendError("unknown vocab id '" + vocab_id + "'", "vocab", false);
  }
  return it->second;
}

const std::unordered_map<std::string, double>* FixtureBackend::entry(
    std::string_view text, std::size_t mask_index) const {
  const auto key = fixture_probe_key(data_.info, text, mask_index);
  const auto it = data_.scores.find(key);
  if (it != data_.scores.end()) return &it->second;
  if (data_.strict) {
    throw BackendError("fixture " + data_.info.model_id + " has no entry for probe '" +
                           std::string(text) + "' mask " + std::to_string(mask_index),
                       key, false);
  }
  return nullptr;
}

namespace {

// log of the partition function over `domain` given sparse raw scores.
double log_partition(const std::vector<std::string>& domain,
                     const std::unordered_map<std::string, double>* raw,
                     double fallback) {
  std::vector<double> present;
  std::size_t rest = domain.size();
  if (raw) {
    for (const auto& t : domain) {
      const auto it = raw->find(t);
      if (it != raw->end()) {
        present.push_back(it->second);
        --rest;
      }
    }
  }
  double m = rest ? fallback : -INFINITY;
  for (double v : present) m = std::max(m, v);
  double s = 0;
  for (double v : present) s += std::exp(v - m);
  s += static_cast<double>(rest) * std::exp(fallback - m);
  return m + std::log(s);
}

}  // namespace

ScoreResult FixtureBackend::score(const ScoreRequest& request) const {
  if (request.candidates.size() > data_.info.max_batch) {
    throw BackendError("batch of " + std::to_string(request.candidates.size()) +
                           " exceeds max_batch " + std::to_string(data_.info.max_batch),
                       "score", false);
  }
  const auto* raw = entry(request.text, request.mask_index);
  Vocabulary domain_vocab = request.normalize == Normalization::unified_vocab
                                ? registered(request.vocab_id)
                                : model_vocab_;
  std::vector<std::string> domain;
  for (const auto& t : domain_vocab.tokens()) {
    if (model_vocab_.contains(t)) domain.push_back(t);
  }
  const double log_z = log_partition(domain, raw, data_.default_log_prob);
  ScoreResult result;
  result.normalization = request.normalize;
  result.log_probs.resize(request.candidates.size());
  for (std::size_t i = 0; i < request.candidates.size(); ++i) {
    const auto& c = request.candidates[i];
    if (!model_vocab_.contains(c)) {
      result.errors.push_back({i, "not a single token for " + data_.info.model_id});
      continue;
    }
    if (!domain_vocab.contains(c)) {
      result.errors.push_back({i, "not in the normalization vocabulary"});
      continue;
    }
    double v = data_.default_log_prob;
    if (raw) {
      const auto it = raw->find(c);
      if (it != raw->end()) v = it->second;
    }
    result.log_probs[i] = v - log_z;
  }
  return result;
}

std::vector<RankedToken> FixtureBackend::topk(const TopkRequest& request) const {
  const Vocabulary domain = request.vocab_id.empty() ? model_vocab_ : registered(request.vocab_id);
  const auto* raw = entry(request.text, request.mask_index);
  std::vector<std::string> tokens;
  for (const auto& t : domain.tokens()) {
    if (model_vocab_.contains(t)) tokens.push_back(t);
  }
  const double log_z = log_partition(tokens, raw, data_.default_log_prob);
  std::vector<RankedToken> ranked;
  ranked.reserve(tokens.size());
  for (const auto& t : tokens) {
    double v = data_.default_log_prob;
    if (raw) {
      const auto it = raw->find(t);
      if (it != raw->end()) v = it->second;
    }
    ranked.push_back({t, v - log_z});
  }
  const auto k = std::min(request.k, ranked.size());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedToken& a, const RankedToken& b) {
                     return a.log_prob > b.log_prob;
                   });
  ranked.resize(k);
  return ranked;
}

PhraseEmbedding FixtureBackend::embed(const std::string& text) const {
  if (data_.info.embedding_dim == 0) {
    throw CapabilityError("backend " + data_.info.model_id + " has no embeddings");
  }
  const auto it = data_.embeddings.find(text);
  if (it == data_.embeddings.end()) {
    if (data_.strict) {
      throw BackendError("fixture " + data_.info.model_id + " has no embedding for '" +
                             text + "'",
                         "embed", false);
    }
    return {text, std::vector<double>(data_.info.embedding_dim, 0.0)};
  }
  return {text, it->second};
}

}  // namespace specbench
