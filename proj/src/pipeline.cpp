#include "specbench/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "specbench/util.hpp"

namespace specbench {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

std::string BackendSpec::kind() const {
  if (!url.empty()) return "url";
  if (!fixture.empty()) return "fixture";
  if (!replay.empty()) return "replay";
  return "";
}

json EvalSettings::to_json() const {
  json modes_j = json::array();
  for (auto m : modes) modes_j.push_back(specbench::to_string(m));
  return {{"modes", modes_j},
          {"k_demos", k_demos},
          {"seed", seed},
          {"demo_separator", demo_separator},
          {"naturalness", naturalness},
          {"relatedness", relatedness},
          {"topk", topk},
          {"normalize", specbench::to_string(normalize)},
          {"cascade_rescoring", cascade_rescoring},
          {"rescoring_top_m", rescoring_top_m}};
}

PromptMode parse_mode_flag(std::string_view text) {
  if (text == "VP") return PromptMode::vanilla;
  if (text == "FP") return PromptMode::fewshot;
  if (text == "CP") return PromptMode::cascade;
  const auto m = parse_prompt_mode(text);
  if (is_naturalness(m)) {
    throw ConfigError("naturalness modes are enabled with the naturalness flag, not listed");
  }
  return m;
}

std::string env_var_for_backend(std::string_view name) {
  std::string out = "SPECBENCH_BACKEND_";
  for (char c : name) {
    const auto u = static_cast<unsigned char>(c);
    out.push_back(std::isalnum(u) ? static_cast<char>(std::toupper(u)) : '_');
  }
  return out;
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "dump", "snapshot_dir", "relations", "language", "templates", "vocab",
      "backends", "record_dir", "modes", "k_demos", "seed", "demo_separator",
      "naturalness", "relatedness", "topk", "normalize", "cascade_rescoring",
      "rescoring_top_m", "concurrency", "max_len", "min_gap", "cap",
      "max_per_subject", "sample_per_relation", "frequency_table", "out"};
  return keys;
}

}  // namespace

RunConfig RunConfig::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, path.parent_path());
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known_keys().contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  RunConfig c;
  try {
    c.dump = resolve(base, j.value("dump", ""));
    c.snapshot_dir = resolve(base, j.value("snapshot_dir", ""));
    if (j.contains("relations")) {
      const auto& r = j.at("relations");
      c.relations = r.is_string() ? load_relations(resolve(base, r.get<std::string>()))
                                  : relations_from_json(r);
    }
    c.language = j.value("language", "en");
    c.templates = resolve(base, j.value("templates", ""));
    c.vocab = resolve(base, j.value("vocab", ""));
    for (const auto& b : j.value("backends", json::array())) {
      BackendSpec s;
      s.name = b.at("name").get<std::string>();
      s.url = b.value("url", "");
      s.fixture = resolve(base, b.value("fixture", ""));
      s.replay = resolve(base, b.value("replay", ""));
      if (b.contains("causal_filler")) s.causal_filler = b.at("causal_filler").get<std::string>();
      c.backends.push_back(std::move(s));
    }
    c.record_dir = resolve(base, j.value("record_dir", ""));
    if (j.contains("modes")) {
      c.eval.modes.clear();
      for (const auto& m : j.at("modes")) c.eval.modes.push_back(parse_mode_flag(m.get<std::string>()));
    }
    c.eval.k_demos = j.value("k_demos", c.eval.k_demos);
    c.eval.seed = j.value("seed", c.eval.seed);
    c.eval.demo_separator = j.value("demo_separator", c.eval.demo_separator);
    c.eval.naturalness = j.value("naturalness", c.eval.naturalness);
    c.eval.relatedness = j.value("relatedness", c.eval.relatedness);
    c.eval.topk = j.value("topk", c.eval.topk);
    c.eval.normalize = parse_normalization(j.value("normalize", "unified"));
    c.eval.cascade_rescoring = j.value("cascade_rescoring", c.eval.cascade_rescoring);
    c.eval.rescoring_top_m = j.value("rescoring_top_m", c.eval.rescoring_top_m);
    c.eval.concurrency = j.value("concurrency", c.eval.concurrency);
    c.max_len = j.value("max_len", c.max_len);
    if (j.contains("min_gap")) {
      const auto& g = j.at("min_gap");
      c.min_gap = g.is_string() ? parse_rational(g.get<std::string>())
                                : Rational(g.get<std::int64_t>());
    }
    c.cap = j.value("cap", c.cap);
    c.max_per_subject = j.value("max_per_subject", c.max_per_subject);
    c.sample_per_relation = j.value("sample_per_relation", c.sample_per_relation);
    c.frequency_table = resolve(base, j.value("frequency_table", ""));
    c.out = resolve(base, j.value("out", "out"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

json RunConfig::to_json() const {
  json backends_j = json::array();
  for (const auto& b : backends) {
    json e{{"name", b.name}};
    if (!b.url.empty()) e["url"] = b.url;
    if (!b.fixture.empty()) e["fixture"] = b.fixture.string();
    if (!b.replay.empty()) e["replay"] = b.replay.string();
    if (b.causal_filler) e["causal_filler"] = *b.causal_filler;
    backends_j.push_back(std::move(e));
  }
  json j = eval.to_json();
  j["modes"] = json::array();
  for (auto m : eval.modes) j["modes"].push_back(specbench::to_string(m));
  j["concurrency"] = eval.concurrency;
  j["dump"] = dump.string();
  j["snapshot_dir"] = snapshot_dir.string();
  j["relations"] = relations_to_json(relations);
  j["language"] = language;
  j["templates"] = templates.string();
  j["vocab"] = vocab.string();
  j["backends"] = std::move(backends_j);
  j["record_dir"] = record_dir.string();
  j["max_len"] = max_len;
  j["min_gap"] = to_string(min_gap);
  j["cap"] = cap;
  j["max_per_subject"] = max_per_subject;
  j["sample_per_relation"] = sample_per_relation;
  j["frequency_table"] = frequency_table.string();
  j["out"] = out.string();
  return j;
}

void RunConfig::apply_env_overrides() {
  for (auto& b : backends) {
    const auto var = env_var_for_backend(b.name);
    if (const char* v = std::getenv(var.c_str()); v && *v) {
      spdlog::info("backend {} endpoint overridden by {}", b.name, var);
      b.url = v;
      b.fixture.clear();
      b.replay.clear();
    }
  }
}

void RunConfig::validate() const {
  const auto must_exist = [](const fs::path& p, const char* what) {
    if (!p.empty() && !fs::exists(p)) {
      throw ConfigError(std::string(what) + " not found: " + p.string());
    }
  };
  if (dump.empty() == snapshot_dir.empty()) {
    throw ConfigError("set exactly one of dump and snapshot_dir");
  }
  must_exist(dump, "dump");
  must_exist(snapshot_dir, "snapshot_dir");
  must_exist(templates, "template catalog");
  must_exist(vocab, "vocabulary");
  must_exist(frequency_table, "frequency table");
  if (relations.empty()) throw ConfigError("no relations configured");
  if (backends.empty()) throw ConfigError("at least one backend is required");
  std::set<std::string> names;
  for (const auto& b : backends) {
    if (b.name.empty()) throw ConfigError("backend without a name");
    if (!names.insert(b.name).second) throw ConfigError("duplicate backend name '" + b.name + "'");
    const int kinds = !b.url.empty() + !b.fixture.empty() + !b.replay.empty();
    if (kinds != 1) {
      throw ConfigError("backend '" + b.name + "' needs exactly one of url, fixture, replay");
    }
    must_exist(b.fixture, "fixture");
    must_exist(b.replay, "recording");
  }
  if (eval.modes.empty()) throw ConfigError("at least one prompting mode is required");
  const bool fewshot = std::find(eval.modes.begin(), eval.modes.end(), PromptMode::fewshot) !=
                       eval.modes.end();
  if (fewshot && eval.k_demos < 1) throw ConfigError("few-shot prompting needs k_demos >= 1");
  if (max_len < 1) throw ConfigError("max_len must be at least 1");
  if (min_gap <= Rational(0)) throw ConfigError("min_gap must be positive");
  if (cap == 0) throw ConfigError("cap must be positive");
  if (eval.cascade_rescoring && eval.rescoring_top_m == 0) {
    throw ConfigError("rescoring_top_m must be positive");
  }
  {
    const auto catalog =
        templates.empty() ? TemplateCatalog::defaults() : TemplateCatalog::load(templates);
    catalog.require_coverage(relations);
  }
}

StageError::StageError(std::string stage, const std::string& cause)
    : Error("stage '" + stage + "' failed: " + cause +
            "\nFix the cause and re-run the same command; completed stages are "
            "reused, or run `specbench " + stage + " --config <config>` to retry this stage."),
      stage_(std::move(stage)) {}

// ---------------------------------------------------------------------------
// Probe planning and evaluation

DemoPlan plan_demos(const Benchmark& bench, const EvalSettings& settings) {
  DemoPlan plan;
  for (const auto& [task, triplets] : bench.by_task) {
    auto& sets = plan[task];
    sets.reserve(triplets.size());
    for (const auto& t : triplets) {
      sets.push_back(select_demos(triplets, t, settings.k_demos, settings.seed));
    }
  }
  return plan;
}

std::vector<PlannedProbe> plan_probes(const Benchmark& bench, const TemplateCatalog& catalog,
                                      std::span<const RelationSpec> relations,
                                      const EvalSettings& settings, const DemoPlan& demos,
                                      const BackendInfo& info,
                                      const std::optional<std::string>& causal_filler) {
  std::vector<PlannedProbe> plan;
  for (const auto& rel : relations) {
    const auto it = bench.by_task.find(rel.task_id);
    if (it == bench.by_task.end()) continue;
    const auto& tpl = catalog.at(rel.template_id);
    for (auto base : settings.modes) {
      std::vector<PromptMode> modes{base};
      if (settings.naturalness) modes.push_back(naturalness_of(base));
      for (auto mode : modes) {
        const auto style = mask_style_for(info, mode, causal_filler);
        for (std::size_t i = 0; i < it->second.size(); ++i) {
          const auto& t = it->second[i];
          const DemoSet* d = nullptr;
          if (base_of(mode) == PromptMode::fewshot) d = &demos.at(rel.task_id).at(i);
          const auto rendered = render_probe(tpl, mode, t.subject.label, d, settings.demo_separator);
          plan.push_back({rel.task_id, i, mode, serialize(rendered, style)});
        }
      }
    }
  }
  return plan;
}

namespace {

template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const auto i = next.fetch_add(1);
        if (i >= n) return;
        try {
          f(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = n;
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

double log_sum_exp(const std::vector<RankedToken>& ranked) {
  double m = -INFINITY;
  for (const auto& r : ranked) m = std::max(m, r.log_prob);
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (const auto& r : ranked) s += std::exp(r.log_prob - m);
  return m + std::log(s);
}

// Approximate full-sentence score of a causal cascade probe: the first-slot
// score plus the mass of the top-M fillers of the clause slot.
std::optional<double> rescore_cascade(const SerializedProbe& probe, const std::string& candidate,
                                      double first, ScorerBackend& backend,
                                      const std::string& literal, const std::string& vocab_id,
                                      std::size_t top_m) {
  if (probe.mask_offsets.size() < 2) return first;
  std::string text = probe.text;
  text.replace(probe.mask_offsets[probe.mask_index], literal.size(), candidate);
  TopkRequest req{text, probe.mask_offsets.size() - 2, top_m, vocab_id};
  const auto ranked = backend.topk(req);
  if (ranked.empty()) return std::nullopt;
  return first + log_sum_exp(ranked);
}

}  // namespace

EvalResult evaluate_backend(const Benchmark& bench, std::span<const PlannedProbe> plan,
                            ScorerBackend& backend, const Vocabulary& vocab,
                            const std::string& vocab_id, const EvalSettings& settings) {
  const auto info = backend.info();
  const auto literal = slot_literal(info);
  EvalResult result;
  result.outcomes.resize(plan.size());

  std::mutex cache_mutex;
  std::map<std::pair<std::string, std::size_t>, std::set<std::string>> topk_cache;

  parallel_for(plan.size(), settings.concurrency, [&](std::size_t i) {
    const auto& p = plan[i];
    const auto& t = bench.by_task.at(p.task_id).at(p.triplet);
    TripletOutcome o;
    o.model_id = info.model_id;
    o.task_id = p.task_id;
    o.subject_id = t.subject.id.str();
    o.fine_id = t.fine.id.str();
    o.coarse_id = t.coarse.id.str();
    o.mode = p.mode;
    try {
      ScoreRequest req{p.probe.text, p.probe.mask_index, {t.fine.label, t.coarse.label},
                       settings.normalize,
                       settings.normalize == Normalization::unified_vocab ? vocab_id : ""};
      const auto scored = score_candidates(req, backend, vocab);
      o.c_fine = scored.log_probs[0];
      o.c_coarse = scored.log_probs[1];
      for (const auto& e : scored.errors) {
        if (!o.error.empty()) o.error += "; ";
        o.error += req.candidates.at(e.index) + ": " + e.reason;
      }
      if (settings.cascade_rescoring && info.family == ModelFamily::causal &&
          base_of(p.mode) == PromptMode::cascade && o.error.empty()) {
        o.c_fine = rescore_cascade(p.probe, t.fine.label, *o.c_fine, backend, literal,
                                   vocab_id, settings.rescoring_top_m);
        o.c_coarse = rescore_cascade(p.probe, t.coarse.label, *o.c_coarse, backend, literal,
                                     vocab_id, settings.rescoring_top_m);
      }
      if (settings.topk > 0 && !is_naturalness(p.mode)) {
        const std::pair key{p.probe.text, p.probe.mask_index};
        std::optional<std::set<std::string>> top;
        {
          std::lock_guard lock(cache_mutex);
          const auto it = topk_cache.find(key);
          if (it != topk_cache.end()) top = it->second;
        }
        if (!top) {
          const auto k = std::min(settings.topk, vocab.size());
          std::set<std::string> s;
          for (const auto& r : topk(p.probe, k, vocab, vocab_id, backend)) s.insert(r.token);
          std::lock_guard lock(cache_mutex);
          top = topk_cache.emplace(key, std::move(s)).first->second;
        }
        o.fine_in_topk = top->contains(t.fine.label);
        o.coarse_in_topk = top->contains(t.coarse.label);
      }
    } catch (const BackendError& e) {
      o.error = e.what();
    }
    result.outcomes[i] = std::move(o);
  });

  if (settings.relatedness) {
    require_embeddings(backend);
    std::set<std::string> texts;
    for (const auto& [task, triplets] : bench.by_task) {
      for (const auto& t : triplets) {
        texts.insert(t.subject.label);
        texts.insert(t.fine.label);
        texts.insert(t.coarse.label);
      }
    }
    const std::vector<std::string> list(texts.begin(), texts.end());
    std::vector<PhraseEmbedding> vectors(list.size());
    parallel_for(list.size(), settings.concurrency,
                 [&](std::size_t i) { vectors[i] = embed_phrase(list[i], backend); });
    std::map<std::string, const PhraseEmbedding*> by_text;
    for (std::size_t i = 0; i < list.size(); ++i) by_text[list[i]] = &vectors[i];
    for (const auto& [task, triplets] : bench.by_task) {
      for (const auto& t : triplets) {
        result.relatedness.push_back(relatedness_outcome(
            info.model_id, t, *by_text.at(t.subject.label), *by_text.at(t.fine.label),
            *by_text.at(t.coarse.label)));
      }
    }
  }
  return result;
}

void write_outcomes(const fs::path& path, const EvalResult& result) {
  std::vector<std::pair<std::string, std::string>> lines;
  for (const auto& o : result.outcomes) {
    auto j = to_json(o);
    j["kind"] = "probe";
    lines.emplace_back("probe\t" + std::string(to_string(o.mode)) + "\t" + o.key(), j.dump());
  }
  for (const auto& o : result.relatedness) {
    auto j = to_json(o);
    j["kind"] = "relatedness";
    lines.emplace_back("relatedness\t" + o.key(), j.dump());
  }
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& [_, line] : lines) out += line + "\n";
  write_file_atomic(path, out);
}

EvalResult read_outcomes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open outcome log " + path.string());
  EvalResult r;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    const auto at = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      if (j.at("kind") == "probe") {
        r.outcomes.push_back(outcome_from_json(j));
      } else {
        r.relatedness.push_back(relatedness_outcome_from_json(j));
      }
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad outcome record: ") + e.what(), at);
    }
  }
  return r;
}

std::shared_ptr<ScorerBackend> make_backend(const BackendSpec& spec) {
  if (!spec.url.empty()) return std::make_shared<HttpBackend>(HttpOptions{spec.url});
  if (!spec.fixture.empty()) return FixtureBackend::load(spec.fixture);
  if (!spec.replay.empty()) return std::make_shared<ReplayBackend>(spec.replay);
  throw ConfigError("backend '" + spec.name + "' has no source");
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

std::string hash_json(const json& j) { return hex64(fnv1a64(j.dump())); }

std::string file_digest(const fs::path& p) {
  if (p.empty()) return "";
  return hex64(fnv1a64(read_file(p)));
}

std::set<EntityId> relation_properties(std::span<const RelationSpec> relations) {
  std::set<EntityId> out;
  for (const auto& r : relations) {
    out.insert(r.head_property);
    out.insert(r.tail_property);
  }
  return out;
}

}  // namespace

Pipeline::Pipeline(RunConfig config, PipelineHooks hooks)
    : config_(std::move(config)), hooks_(std::move(hooks)) {
  config_.validate();
  const auto path = config_.out / "manifest.json";
  if (fs::exists(path)) {
    try {
      manifest_ = json::parse(read_file(path));
    } catch (const json::exception&) {
      spdlog::warn("ignoring unreadable manifest {}", path.string());
    }
  }
  if (!manifest_.is_object()) manifest_ = json::object();
  manifest_["tool_version"] = SPECBENCH_VERSION;
  if (!manifest_.contains("stages")) manifest_["stages"] = json::object();
}

void Pipeline::save_manifest() const {
  write_file_atomic(config_.out / "manifest.json", manifest_.dump(2) + "\n");
}

fs::path Pipeline::snapshot_dir() const {
  return config_.snapshot_dir.empty() ? config_.out / "snapshot" : config_.snapshot_dir;
}

TemplateCatalog Pipeline::catalog() const {
  return config_.templates.empty() ? TemplateCatalog::defaults()
                                   : TemplateCatalog::load(config_.templates);
}

std::shared_ptr<ScorerBackend> Pipeline::backend(const BackendSpec& spec) {
  auto& slot = backends_[spec.name];
  if (!slot) slot = hooks_.make_backend ? hooks_.make_backend(spec) : make_backend(spec);
  return slot;
}

const Vocabulary& Pipeline::vocabulary() {
  if (vocab_) return *vocab_;
  if (!config_.vocab.empty()) {
    vocab_ = Vocabulary::load(config_.vocab);
  } else {
    std::vector<ModelVocab> vocabs;
    for (const auto& spec : config_.backends) {
      auto b = backend(spec);
      vocabs.push_back({b->info().model_id, b->vocab()});
    }
    vocab_ = unified_vocab(vocabs);
  }
  return *vocab_;
}

namespace {

// Hashing a stage may contact backends; failures there belong to the stage.
template <class F>
std::string guarded(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

template <class F>
bool Pipeline::stage(const std::string& name, const std::string& hash,
                     const std::vector<fs::path>& outputs, bool force, F&& body) {
  auto& entry = manifest_["stages"][name];
  const bool fresh = entry.is_object() && entry.value("hash", "") == hash &&
                     std::all_of(outputs.begin(), outputs.end(),
                                 [](const fs::path& p) { return fs::exists(p); });
  if (fresh && !force) {
    spdlog::info("stage {}: up to date", name);
    return false;
  }
  spdlog::info("stage {}: running", name);
  json info;
  try {
    info = body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
  info["hash"] = hash;
  manifest_["stages"][name] = std::move(info);
  // Downstream entries are stale now.
  static const std::vector<std::string> order{"ingest", "build", "evaluate", "report"};
  bool after = false;
  for (const auto& s : order) {
    if (after) manifest_["stages"].erase(s);
    if (s == name) after = true;
  }
  save_manifest();
  executed_.push_back(name);
  return true;
}

std::string Pipeline::ingest_hash() const {
  json j{{"language", config_.language}};
  j["properties"] = json::array();
  for (const auto& p : relation_properties(config_.relations)) j["properties"].push_back(p.str());
  if (!config_.snapshot_dir.empty()) {
    j["snapshot"] = file_digest(config_.snapshot_dir / "triples.tsv") +
                    file_digest(config_.snapshot_dir / "labels.tsv");
  } else {
    j["dump"] = config_.dump.filename().string();
    j["dump_size"] = fs::file_size(config_.dump);
  }
  return hash_json(j);
}

std::string Pipeline::build_hash() {
  json j{{"ingest", ingest_hash()},
         {"relations", relations_to_json(config_.relations)},
         {"vocab", vocabulary().digest()},
         {"max_len", config_.max_len},
         {"min_gap", to_string(config_.min_gap)},
         {"cap", config_.cap},
         {"max_per_subject", config_.max_per_subject},
         {"sample_per_relation", config_.sample_per_relation},
         {"seed", config_.eval.seed}};
  return hash_json(j);
}

std::string Pipeline::evaluate_hash() {
  json backends = json::array();
  for (const auto& b : config_.backends) {
    backends.push_back({{"name", b.name},
                        {"kind", b.kind()},
                        {"source", b.url.empty() ? file_digest(b.fixture.empty() ? b.replay : b.fixture)
                                                 : b.url},
                        {"causal_filler", b.causal_filler ? json(*b.causal_filler) : json(nullptr)}});
  }
  json j{{"build", build_hash()},
         {"templates", catalog().to_json()},
         {"eval", config_.eval.to_json()},
         {"backends", backends}};
  return hash_json(j);
}

std::string Pipeline::report_hash() {
  json j{{"evaluate", evaluate_hash()}, {"frequency", file_digest(config_.frequency_table)}};
  return hash_json(j);
}

bool Pipeline::ingest(bool force) {
  if (!config_.snapshot_dir.empty()) {
    return stage("ingest", guarded("ingest", [&] { return ingest_hash(); }), {}, force, [&] {
      read_snapshot(config_.snapshot_dir);  // validates
      return json{{"snapshot", config_.snapshot_dir.string()}, {"external", true}};
    });
  }
  const auto dir = snapshot_dir();
  const auto hash = guarded("ingest", [&] { return ingest_hash(); });
  return stage("ingest", hash, {dir / "triples.tsv", dir / "labels.tsv"}, force, [&] {
    IngestOptions opts;
    opts.dump = config_.dump;
    opts.properties = relation_properties(config_.relations);
    opts.language = config_.language;
    IngestSummary summary;
    const auto snap = specbench::ingest(opts, &summary);
    write_snapshot(dir, snap);
    return json{{"records", summary.triple_pass.records},
                {"errors", summary.triple_pass.errors},
                {"triples", summary.triples},
                {"labeled", summary.labeled},
                {"missing_labels", summary.missing_labels}};
  });
}

Benchmark Pipeline::load_benchmark() const {
  return read_benchmark(benchmark_dir(), config_.relations);
}

Vocabulary Pipeline::load_vocab() const { return Vocabulary::load(config_.out / "vocab.txt"); }

bool Pipeline::build(bool force) {
  std::vector<fs::path> outputs{config_.out / "vocab.txt"};
  for (const auto& r : config_.relations) outputs.push_back(benchmark_dir() / (r.task_id + ".tsv"));
  const auto hash = guarded("build", [&] { return build_hash(); });
  return stage("build", hash, outputs, force, [&] {
    const auto snap = read_snapshot(snapshot_dir());
    const auto& vocab = vocabulary();
    vocab.save(config_.out / "vocab.txt");
    BuildOptions opts;
    opts.max_len = config_.max_len;
    opts.min_gap = config_.min_gap;
    opts.cap = config_.sample_per_relation ? std::min(config_.cap, config_.sample_per_relation)
                                           : config_.cap;
    opts.max_per_subject = config_.max_per_subject;
    opts.seed = config_.eval.seed;
    const auto bench = build_benchmark(snap, config_.relations, vocab, opts);
    write_benchmark(benchmark_dir(), bench);
    json counts = json::object();
    json stats = json::array();
    for (const auto& s : bench.stats) {
      counts[s.task_id] = s.sampled;
      stats.push_back({{"task_id", s.task_id},
                       {"subjects", s.subjects},
                       {"raw_triplets", s.raw_triplets},
                       {"labeled", s.labeled},
                       {"single_token", s.single_token},
                       {"sampled", s.sampled}});
    }
    manifest_["counts"] = counts;
    return json{{"vocab_size", vocab.size()},
                {"vocab_id", vocab.digest()},
                {"sampling", {{"seed", config_.eval.seed},
                              {"cap", opts.cap},
                              {"sample_per_relation", config_.sample_per_relation}}},
                {"relations", stats}};
  });
}

bool Pipeline::evaluate(bool force) {
  std::vector<fs::path> outputs;
  for (const auto& b : config_.backends) outputs.push_back(outcomes_dir() / (b.name + ".jsonl"));
  const auto hash = guarded("evaluate", [&] { return evaluate_hash(); });
  return stage("evaluate", hash, outputs, force, [&] {
    const auto bench = load_benchmark();
    const auto vocab = load_vocab();
    const auto cat = catalog();
    cat.require_coverage(config_.relations);
    bool fewshot = std::find(config_.eval.modes.begin(), config_.eval.modes.end(),
                             PromptMode::fewshot) != config_.eval.modes.end();
    // Plans every probe before any scoring so configuration errors surface first.
    const auto demos = fewshot ? plan_demos(bench, config_.eval) : DemoPlan{};
    struct Prepared {
      const BackendSpec* spec;
      std::shared_ptr<ScorerBackend> backend;
      BackendInfo info;
      std::vector<PlannedProbe> plan;
    };
    std::vector<Prepared> prepared;
    for (const auto& spec : config_.backends) {
      auto b = backend(spec);
      if (!config_.record_dir.empty()) {
        const auto path = config_.record_dir / (spec.name + ".jsonl");
        fs::remove(path);
        b = std::make_shared<RecordingBackend>(b, path);
        b->vocab();
      }
      const auto info = b->info();
      if (config_.eval.relatedness) require_embeddings(*b);
      auto plan = plan_probes(bench, cat, config_.relations, config_.eval, demos, info,
                              spec.causal_filler);
      prepared.push_back({&spec, b, info, std::move(plan)});
    }
    json backends = json::array();
    for (auto& p : prepared) {
      const auto vocab_id = p.backend->register_vocab(vocab);
      spdlog::info("evaluating {} ({} probes)", p.info.model_id, p.plan.size());
      const auto result =
          evaluate_backend(bench, p.plan, *p.backend, vocab, vocab_id, config_.eval);
      const auto errored = std::count_if(result.outcomes.begin(), result.outcomes.end(),
                                         [](const TripletOutcome& o) { return o.errored(); });
      if (!result.outcomes.empty() &&
          static_cast<std::size_t>(errored) == result.outcomes.size()) {
        throw Error("every probe failed for backend " + p.spec->name + ": " +
                    result.outcomes.front().error);
      }
      write_outcomes(outcomes_dir() / (p.spec->name + ".jsonl"), result);
      backends.push_back({{"name", p.spec->name},
                          {"info", to_json(p.info)},
                          {"probes", result.outcomes.size()},
                          {"errored", errored}});
    }
    return json{{"backends", backends}};
  });
}

MetricReport Pipeline::load_report() const {
  return MetricReport::from_json(json::parse(read_file(config_.out / "report.json")));
}

bool Pipeline::report(bool force) {
  const auto hash = guarded("report", [&] { return report_hash(); });
  return stage("report", hash, {config_.out / "report.json", config_.out / "report.txt"}, force,
               [&] {
                 const auto& eval_entry = manifest_["stages"]["evaluate"];
                 if (!eval_entry.is_object()) throw Error("evaluate has not run");
                 std::vector<ModelEntry> models;
                 EvalResult all;
                 for (const auto& b : eval_entry.at("backends")) {
                   const auto info = backend_info_from_json(b.at("info"));
                   models.push_back({info.model_id, info.family});
                   auto r = read_outcomes(outcomes_dir() /
                                          (b.at("name").get<std::string>() + ".jsonl"));
                   all.outcomes.insert(all.outcomes.end(), r.outcomes.begin(), r.outcomes.end());
                   all.relatedness.insert(all.relatedness.end(), r.relatedness.begin(),
                                          r.relatedness.end());
                 }
                 const auto bench = load_benchmark();
                 std::optional<FrequencyTable> freq;
                 if (!config_.frequency_table.empty()) {
                   freq = FrequencyTable::load(config_.frequency_table);
                 }
                 ReportInputs in;
                 in.relations = config_.relations;
                 in.models = models;
                 in.outcomes = all.outcomes;
                 in.relatedness = all.relatedness;
                 in.benchmark = &bench;
                 in.frequency = freq ? &*freq : nullptr;
                 in.k = config_.eval.topk;
                 const auto rep = compute_report(in);
                 write_report(config_.out, rep);
                 return json{{"outputs", {"report.json", "report.txt"}}};
               });
}

MetricReport Pipeline::run_all(bool force) {
  ingest(force);
  build(force);
  evaluate(force);
  report(force);
  return load_report();
}

}  // namespace specbench
