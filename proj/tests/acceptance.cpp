// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "gen.hpp"
#include "specbench/backends.hpp"
#include "specbench/graph_paths.hpp"
#include "specbench/metrics.hpp"
#include "specbench/pipeline.hpp"
#include "specbench/prompting.hpp"
#include "specbench/util.hpp"
#include "published_vp.hpp"
#include "test_support.hpp"

using namespace specbench;
namespace fs = std::filesystem;
using specbench::testing::Gen;
using specbench::testing::TempDir;

namespace {

// Collects failure notes for one criterion.
struct Check {
  std::vector<std::string> failures;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Depth-first brute force over an adjacency matrix: every simple path from
// `s` with the first hop on `head` and later hops on `tail`.
void dfs(const std::vector<std::vector<bool>>& head, const std::vector<std::vector<bool>>& tail,
         std::vector<int>& path, std::vector<bool>& used, int max_len,
         std::vector<std::vector<int>>& out) {
  const auto& adj = path.size() == 1 ? head : tail;
  const int at = path.back();
  for (int next = 0; next < static_cast<int>(adj.size()); ++next) {
    if (!adj[at][next] || used[next]) continue;
    path.push_back(next);
    used[next] = true;
    out.emplace_back(path.begin() + 1, path.end());
    if (static_cast<int>(path.size()) - 1 < max_len) dfs(head, tail, path, used, max_len, out);
    used[next] = false;
    path.pop_back();
  }
}

void criterion_path_oracle(Check& c) {
  const auto t0 = Clock::now();
  Gen g(500500);
  int graphs = 0;
  for (; graphs < 600; ++graphs) {
    const int n = g.uniform_int(1, 12);
    const double density = g.uniform(0.0, 0.4);
    const bool combined = g.chance(0.5);
    std::vector<std::vector<bool>> head(n, std::vector<bool>(n)), tail = head;
    std::vector<Triple> triples;
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        if (g.chance(density)) {
          tail[a][b] = true;
          triples.push_back({EntityId("Q" + std::to_string(a)), EntityId("P2"),
                             EntityId("Q" + std::to_string(b))});
        }
        if (combined && g.chance(density)) {
          head[a][b] = true;
          triples.push_back({EntityId("Q" + std::to_string(a)), EntityId("P1"),
                             EntityId("Q" + std::to_string(b))});
        }
      }
    }
    if (!combined) head = tail;
    const RelationSpec spec{"t", "t", EntityId(combined ? "P1" : "P2"), EntityId("P2"), "t"};
    const GraphSet gs(triples, std::vector<EntityId>{EntityId("P1"), EntityId("P2")});
    const int max_len = g.uniform_int(1, 5);
    for (int s = 0; s < n; ++s) {
      std::vector<std::vector<int>> want;
      std::vector<int> path{s};
      std::vector<bool> used(n);
      used[s] = true;
      dfs(head, tail, path, used, max_len, want);
      std::set<std::vector<std::string>> want_set;
      for (const auto& p : want) {
        std::vector<std::string> ids;
        for (int v : p) ids.push_back("Q" + std::to_string(v));
        want_set.insert(ids);
      }
      const auto got = enumerate_paths(gs, spec, EntityId("Q" + std::to_string(s)), max_len);
      std::set<std::vector<std::string>> got_set;
      for (const auto& p : got) {
        std::vector<std::string> ids;
        for (const auto& v : p.nodes) ids.push_back(v.str());
        got_set.insert(ids);
      }
      if (got_set != want_set || got.size() != want.size()) {
        c.expect(false, "graph " + std::to_string(graphs) + " subject " + std::to_string(s) +
                            ": path sets differ");
        continue;
      }
      // Mean length per object, straight from the definition.
      std::map<std::string, std::pair<std::int64_t, std::int64_t>> acc;
      for (const auto& p : want_set) {
        auto& [sum, count] = acc[p.back()];
        sum += static_cast<std::int64_t>(p.size());
        ++count;
      }
      const auto table = average_distances(got);
      c.expect(table.entries.size() == acc.size(), "distance table size");
      for (const auto& [o, sc] : acc) {
        const auto it = table.entries.find(EntityId(o));
        c.expect(it != table.entries.end() && it->second == Rational(sc.first, sc.second),
                 "mean distance to " + o);
      }
    }
  }
  const double secs = seconds_since(t0);
  c.expect(graphs >= 500, "fewer than 500 graphs");
  c.expect(secs < 30.0, "took " + std::to_string(secs) + " s");
}

void criterion_distances(Check& c) {
  Snapshot snap;
  snap.triples = {{EntityId("Q1"), EntityId("P131"), EntityId("Q2")},
                  {EntityId("Q2"), EntityId("P131"), EntityId("Q3")}};
  snap.labels.labels = {{EntityId("Q1"), "Toronto"}, {EntityId("Q2"), "Ontario"},
                        {EntityId("Q3"), "Canada"}};
  const Vocabulary vocab({"Toronto", "Ontario", "Canada"});
  const std::vector<RelationSpec> rels = {
      {"P131", "location", EntityId("P131"), EntityId("P131"), "P131"}};
  const auto bench = build_benchmark(snap, rels, vocab, {});
  const auto& list = bench.by_task.at("P131");
  c.expect(list.size() == 1, "expected one Toronto triplet");
  if (!list.empty()) {
    const auto& t = list[0];
    c.expect(t.fine.label == "Ontario" && t.coarse.label == "Canada", "triplet answers");
    c.expect(t.d_fine == Rational(1), "d_fine is " + to_string(t.d_fine));
    c.expect(t.d_coarse == Rational(2), "d_coarse is " + to_string(t.d_coarse));
  }

  // S -> A -> X and S -> B -> C -> X: lengths 2 and 3.
  const std::vector<Triple> two = {{EntityId("S"), EntityId("P1"), EntityId("A")},
                                   {EntityId("A"), EntityId("P1"), EntityId("X")},
                                   {EntityId("S"), EntityId("P1"), EntityId("B")},
                                   {EntityId("B"), EntityId("P1"), EntityId("C")},
                                   {EntityId("C"), EntityId("P1"), EntityId("X")}};
  const GraphSet gs(two);
  const RelationSpec spec{"t", "t", EntityId("P1"), EntityId("P1"), "t"};
  const auto table = average_distances(enumerate_paths(gs, spec, EntityId("S"), 5));
  const auto it = table.entries.find(EntityId("X"));
  c.expect(it != table.entries.end() && it->second == Rational(5, 2), "two-path average is not 5/2");
}

TripletOutcome outcome(double fine, double coarse, int id) {
  TripletOutcome o;
  o.model_id = "m";
  o.task_id = "t";
  o.subject_id = "S" + std::to_string(id);
  o.fine_id = "F";
  o.coarse_id = "C";
  o.c_fine = fine;
  o.c_coarse = coarse;
  return o;
}

// Scores `total` location triplets through a fixture backend in which the
// fine answer has the higher raw score for the first `wins` probes only.
Rate engineered_pr(int wins, int total) {
  BackendInfo info;
  info.model_id = "engineered";
  info.family = ModelFamily::masked;
  info.mask_literal = "[MASK]";
  FixtureData data;
  data.info = info;
  const std::vector<RelationSpec> rels = {
      {"P131", "location", EntityId("P131"), EntityId("P131"), "P131"}};
  Benchmark bench;
  auto& list = bench.by_task["P131"];
  for (int i = 0; i < total; ++i) {
    SpecificityTriplet t;
    t.task_id = "P131";
    t.subject = {EntityId("Q" + std::to_string(i)), "Town" + std::to_string(i)};
    t.fine = {EntityId("R" + std::to_string(i)), "Region" + std::to_string(i)};
    t.coarse = {EntityId("C" + std::to_string(i)), "Country" + std::to_string(i)};
    t.d_fine = Rational(1);
    t.d_coarse = Rational(2);
    data.vocab.push_back(t.fine.label);
    data.vocab.push_back(t.coarse.label);
    list.push_back(t);
  }
  EvalSettings settings;
  settings.naturalness = false;
  settings.relatedness = false;
  settings.topk = 0;
  const auto plan = plan_probes(bench, TemplateCatalog::defaults(), rels, settings, {}, info,
                                std::nullopt);
  for (const auto& p : plan) {
    const auto& t = list.at(p.triplet);
    const bool fine_first = static_cast<int>(p.triplet) < wins;
    data.scores[fixture_probe_key(info, p.probe.text, p.probe.mask_index)] = {
        {t.fine.label, fine_first ? -1.0 : -3.0}, {t.coarse.label, fine_first ? -3.0 : -1.0}};
  }
  FixtureBackend backend(data);
  const Vocabulary vocab(data.vocab);
  const auto vocab_id = backend.register_vocab(vocab);
  const auto result = evaluate_backend(bench, plan, backend, vocab, vocab_id, settings);
  return specificity_pr(result.outcomes);
}

void criterion_pr(Check& c) {
  const auto seven = engineered_pr(7, 10), none = engineered_pr(0, 10), all = engineered_pr(10, 10);
  c.expect(seven.n == 10 && seven.value() == 0.7, "7 of 10 fixture");
  c.expect(none.n == 10 && none.value() == 0.0, "none fixture");
  c.expect(all.n == 10 && all.value() == 1.0, "all fixture");

  Gen g(4242);
  std::normal_distribution<double> d(-6.0, 2.5);
  std::vector<TripletOutcome> sym;
  for (int i = 0; i < 10000; ++i) sym.push_back(outcome(d(g.rng), d(g.rng), i));
  const double v = specificity_pr(sym).value();
  c.expect(std::abs(v - 0.5) <= 0.02, "symmetric p_r " + std::to_string(v));
}

void criterion_pearson(Check& c) {
  const auto t0 = Clock::now();
  ModelMatrix m;
  m.columns = {"birthplace", "occupation", "location", "subclass-of", "part-of"};
  for (const auto& row : specbench::testing::published_vp()) {
    m.rows.push_back(row.model);
    m.values.emplace_back(row.values.begin(), row.values.end());
  }
  const auto r = pairwise_pearson(m);
  const double secs = seconds_since(t0);
  c.expect(r.pairs.size() == 10, "expected 10 pairs");
  c.expect(std::abs(r.average - 0.803) <= 0.01, "average r " + std::to_string(r.average));
  c.expect(secs < 1.0, "took " + std::to_string(secs) + " s");
}

void criterion_prompts(Check& c) {
  const auto cat = TemplateCatalog::defaults();
  const std::vector<std::tuple<std::string, std::string, std::string, std::string>> rows = {
      {"P19", "John G. Bennett", "John G. Bennett was born in [MASK].",
       "John G. Bennett was born in [MASK], which is located in [MASK]."},
      {"P106", "Jenny Burton", "Jenny Burton is a [MASK] by profession.",
       "Jenny Burton is a [MASK] by profession, which belongs to [MASK]."},
      {"P131", "Carey River", "Carey River is located in [MASK].",
       "Carey River is located in [MASK], which is located in [MASK]."},
      {"P279", "Tracking ship", "Tracking ship is a subclass of [MASK].",
       "Tracking ship is a subclass of [MASK], which is a subclass of [MASK]."},
      {"P361", "Hard palate", "Hard palate is part of [MASK].",
       "Hard palate is part of [MASK], which is part of [MASK]."},
  };
  for (const auto& [task, subject, vanilla, cascade] : rows) {
    const auto v = render_vanilla(cat.at(task), subject);
    const auto cp = render_cascade(cat.at(task), subject);
    c.expect(v.text() == vanilla, task + " vanilla: " + v.text());
    c.expect(cp.text() == cascade, task + " cascade: " + cp.text());
    c.expect(v.target_slot == 0 && cp.target_slot == 0, task + " target slot");
  }
}

void criterion_freq(Check& c) {
  FrequencyTable table;
  std::vector<SpecificityTriplet> ts;
  for (int i = 0; i < 40; ++i) {
    SpecificityTriplet t;
    t.fine.label = "f" + std::to_string(i);
    t.coarse.label = "c" + std::to_string(i);
    // 34 of 40 fine answers are rarer than their coarse answer.
    table.counts[t.fine.label] = i < 34 ? 3 : 900;
    table.counts[t.coarse.label] = 300;
    ts.push_back(t);
  }
  c.expect(freq_pr(ts, table).value() == 0.85, "Freq p_r is not 0.85");
}

void criterion_replay(Check& c) {
  const fs::path bundle = specbench::testing::data_dir() / "bundle";
  TempDir rec, first, second, third;
  auto base = RunConfig::load(bundle / "config.json");

  auto recording = base;
  recording.out = first.path();
  recording.record_dir = rec.path();
  Pipeline(recording).run_all();
  const auto bench = Pipeline(recording).load_benchmark();
  c.expect(bench.total() == 200, "bundle has " + std::to_string(bench.total()) + " triplets");

  std::vector<std::string> json_reports{read_file(first / "report.json")};
  std::vector<std::string> text_reports{read_file(first / "report.txt")};
  for (const auto* dir : {&second, &third}) {
    auto replay = base;
    replay.out = dir->path();
    for (auto& b : replay.backends) {
      b.fixture.clear();
      b.replay = rec / (b.name + ".jsonl");
    }
    Pipeline(replay).run_all();
    json_reports.push_back(read_file(*dir / "report.json"));
    text_reports.push_back(read_file(*dir / "report.txt"));
  }
  for (std::size_t i = 1; i < json_reports.size(); ++i) {
    c.expect(json_reports[i] == json_reports[0], "report.json differs in run " + std::to_string(i));
    c.expect(text_reports[i] == text_reports[0], "report.txt differs in run " + std::to_string(i));
  }
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria = {
      {"path enumeration matches brute force on random graphs", criterion_path_oracle},
      {"Toronto distances and two-path average", criterion_distances},
      {"p_r on engineered and symmetric fixtures", criterion_pr},
      {"pairwise Pearson over the published VP matrix", criterion_pearson},
      {"vanilla and cascade prompt text", criterion_prompts},
      {"Freq baseline on a fixture table", criterion_freq},
      {"bundled run replays to identical reports", criterion_replay},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check c;
    try {
      criteria[i].second(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    const bool ok = c.failures.empty();
    failed += !ok;
    std::printf("%s  %zu  %s\n", ok ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str());
    for (std::size_t f = 0; f < std::min<std::size_t>(c.failures.size(), 5); ++f) {
      std::printf("      %s\n", c.failures[f].c_str());
    }
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
