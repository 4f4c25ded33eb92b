#include "specbench/fixture_synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <spdlog/spdlog.h>

#include "specbench/util.hpp"

namespace specbench {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

double unit(std::uint64_t seed, std::string_view a, std::string_view b, std::string_view c) {
  std::string buf(a);
  buf.push_back('\x1f');
  buf += b;
  buf.push_back('\x1f');
  buf += c;
  const auto h = mix64(seed ^ fnv1a64(buf));
  return static_cast<double>(h >> 11) / static_cast<double>(1ULL << 53);
}

double to_double(const Rational& r) {
  return static_cast<double>(r.numerator()) / static_cast<double>(r.denominator());
}

double bias_for(const SynthModel& m, PromptMode mode) {
  if (is_naturalness(mode)) return 0.0;
  switch (mode) {
    case PromptMode::fewshot: return m.fine_bias_fewshot;
    case PromptMode::cascade: return m.fine_bias_cascade;
    default: return m.fine_bias_vanilla;
  }
}

json pair(std::size_t fav, std::size_t n) { return json::array({fav, n}); }

}  // namespace

json synthesize_fixtures(const RunConfig& config, const std::vector<SynthModel>& models,
                         const SynthOptions& options) {
  std::map<std::string, FixtureData> skeletons;
  for (const auto& m : models) {
    FixtureData d;
    d.info = m.info;
    d.default_log_prob = options.default_log_prob;
    d.strict = false;
    d.vocab = Vocabulary::load(m.vocab_file).tokens();
    skeletons[m.name] = std::move(d);
  }

  RunConfig cfg = config;
  cfg.record_dir.clear();
  cfg.frequency_table.clear();
  cfg.vocab.clear();
  cfg.backends.clear();
  cfg.out = config.out / ".synth";
  fs::remove_all(cfg.out);
  for (const auto& m : models) {
    BackendSpec spec;
    spec.name = m.name;
    spec.fixture = m.vocab_file;  // placeholder source; the hook builds the backend
    for (const auto& b : config.backends) {
      if (b.name == m.name) spec.causal_filler = b.causal_filler;
    }
    cfg.backends.push_back(spec);
  }
  PipelineHooks hooks;
  hooks.make_backend = [&](const BackendSpec& spec) -> std::shared_ptr<ScorerBackend> {
    return std::make_shared<FixtureBackend>(skeletons.at(spec.name));
  };
  Pipeline pipeline(cfg, hooks);
  pipeline.ingest();
  pipeline.build();
  const auto bench = pipeline.load_benchmark();
  const auto vocab = pipeline.load_vocab();
  const auto catalog = pipeline.catalog();
  const bool fewshot = std::find(cfg.eval.modes.begin(), cfg.eval.modes.end(),
                                 PromptMode::fewshot) != cfg.eval.modes.end();
  const auto demos = fewshot ? plan_demos(bench, cfg.eval) : DemoPlan{};

  json expected{{"models", json::object()}, {"relatedness", json::object()}};
  for (std::size_t mi = 0; mi < models.size(); ++mi) {
    const auto& m = models[mi];
    auto data = skeletons.at(m.name);
    data.strict = true;
    const Vocabulary model_vocab(data.vocab);
    std::vector<std::string> ranked_domain;  // unified tokens the model knows
    for (const auto& t : vocab.tokens()) {
      if (model_vocab.contains(t)) ranked_domain.push_back(t);
    }
    const auto plan = plan_probes(bench, catalog, cfg.relations, cfg.eval, demos, m.info,
                                  cfg.backends[mi].causal_filler);

    // First write wins, so probes sharing a key share their scores.
    for (const auto& p : plan) {
      const auto& t = bench.by_task.at(p.task_id).at(p.triplet);
      const auto key = fixture_probe_key(m.info, p.probe.text, p.probe.mask_index);
      auto [it, created] = data.scores.try_emplace(key);
      auto& entry = it->second;
      if (created) {
        for (std::size_t d = 0; d < options.distractors && !ranked_domain.empty(); ++d) {
          const auto pick = static_cast<std::size_t>(
              unit(options.seed, m.name, key, "distractor" + std::to_string(d)) *
              static_cast<double>(ranked_domain.size()));
          const auto& tok = ranked_domain[std::min(pick, ranked_domain.size() - 1)];
          entry.try_emplace(tok, -7.0 + 6.0 * unit(options.seed, m.name, key, tok));
        }
      }
      const double bias = bias_for(m, p.mode);
      entry.try_emplace(t.fine.label, -12.0 + 11.0 * unit(options.seed, m.name, key, t.fine.label) -
                                          bias * to_double(t.d_fine));
      entry.try_emplace(t.coarse.label,
                        -12.0 + 11.0 * unit(options.seed, m.name, key, t.coarse.label) -
                            bias * to_double(t.d_coarse));
    }

    // Expectations straight from the raw table.
    const auto raw = [&](const std::string& key, const std::string& tok) {
      const auto& e = data.scores.at(key);
      const auto it = e.find(tok);
      return it == e.end() ? options.default_log_prob : it->second;
    };
    std::map<std::string, std::vector<std::string>> top_cache;
    const auto top = [&](const std::string& key) -> const std::vector<std::string>& {
      auto it = top_cache.find(key);
      if (it != top_cache.end()) return it->second;
      std::vector<std::pair<double, std::size_t>> order;
      for (std::size_t i = 0; i < ranked_domain.size(); ++i) {
        order.emplace_back(-raw(key, ranked_domain[i]), i);
      }
      std::sort(order.begin(), order.end());
      std::vector<std::string> out;
      for (std::size_t i = 0; i < std::min(cfg.eval.topk, order.size()); ++i) {
        out.push_back(ranked_domain[order[i].second]);
      }
      return top_cache.emplace(key, std::move(out)).first->second;
    };
    struct Counts {
      std::size_t spec_fav = 0, spec_n = 0, acc_fav = 0, acc_n = 0, fine_fav = 0, fine_n = 0,
                  nat_fav = 0, nat_n = 0;
    };
    std::map<std::pair<std::string, std::string>, Counts> counts;
    for (const auto& p : plan) {
      const auto& t = bench.by_task.at(p.task_id).at(p.triplet);
      const auto key = fixture_probe_key(m.info, p.probe.text, p.probe.mask_index);
      auto& c = counts[{std::string(to_string(base_of(p.mode))), p.task_id}];
      const bool wins = raw(key, t.fine.label) > raw(key, t.coarse.label);
      if (is_naturalness(p.mode)) {
        c.nat_n += 1;
        c.nat_fav += wins;
        continue;
      }
      c.spec_n += 1;
      c.spec_fav += wins;
      if (cfg.eval.topk > 0) {
        const auto& tk = top(key);
        const bool f = std::find(tk.begin(), tk.end(), t.fine.label) != tk.end();
        const bool g = std::find(tk.begin(), tk.end(), t.coarse.label) != tk.end();
        c.acc_n += 2;
        c.acc_fav += f + g;
        c.fine_n += 1;
        c.fine_fav += f;
      }
    }
    json& mj = expected["models"][m.info.model_id];
    for (const auto& [k, c] : counts) {
      json cell{{"specificity", pair(c.spec_fav, c.spec_n)}};
      if (cfg.eval.topk > 0) {
        cell["acc_at_k"] = pair(c.acc_fav, c.acc_n);
        cell["acc_at_k_fine"] = pair(c.fine_fav, c.fine_n);
      }
      if (cfg.eval.naturalness) cell["naturalness"] = pair(c.nat_fav, c.nat_n);
      mj[k.first][k.second] = cell;
    }

    if (m.info.embedding_dim > 0) {
      const auto vec = [&](const std::string& text) {
        std::vector<double> v(m.info.embedding_dim);
        for (std::size_t i = 0; i < v.size(); ++i) {
          v[i] = -1.0 + 2.0 * unit(options.seed, m.name, text, "dim" + std::to_string(i));
        }
        return v;
      };
      const auto cos = [](const std::vector<double>& a, const std::vector<double>& b) {
        double d = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
          d += a[i] * b[i];
          na += a[i] * a[i];
          nb += b[i] * b[i];
        }
        return d / (std::sqrt(na) * std::sqrt(nb));
      };
      for (const auto& [task, triplets] : bench.by_task) {
        std::size_t fav = 0;
        for (const auto& t : triplets) {
          for (const auto* text : {&t.subject.label, &t.fine.label, &t.coarse.label}) {
            data.embeddings.try_emplace(*text, vec(*text));
          }
          const auto& s = data.embeddings.at(t.subject.label);
          fav += cos(s, data.embeddings.at(t.fine.label)) >
                 cos(s, data.embeddings.at(t.coarse.label));
        }
        expected["relatedness"][m.info.model_id][task] = pair(fav, triplets.size());
      }
    }
    write_fixture(m.output, data);
    spdlog::info("wrote fixture {} ({} probe keys)", m.output.string(), data.scores.size());
  }
  json counts = json::object();
  for (const auto& [task, triplets] : bench.by_task) counts[task] = triplets.size();
  expected["counts"] = counts;
  fs::remove_all(cfg.out);
  return expected;
}

}  // namespace specbench
