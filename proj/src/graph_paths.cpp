#include "specbench/graph_paths.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "specbench/error.hpp"
#include "specbench/util.hpp"

namespace specbench {

std::string to_string(const Rational& r) {
  if (r.denominator() == 1) return std::to_string(r.numerator());
  return std::to_string(r.numerator()) + "/" + std::to_string(r.denominator());
}

Rational parse_rational(std::string_view text) {
  const auto t = trim(text);
  try {
    const auto slash = t.find('/');
    if (slash == std::string_view::npos) {
      return Rational(std::stoll(std::string(t)));
    }
    return Rational(std::stoll(std::string(t.substr(0, slash))),
                    std::stoll(std::string(t.substr(slash + 1))));
  } catch (const std::exception&) {
    throw ConfigError("not a rational number: '" + std::string(text) + "'");
  }
}

std::span<const NodeIndex> RelationGraph::successors(NodeIndex node) const {
  if (node + 1 >= offsets_.size()) return {};
  return {targets_.data() + offsets_[node], targets_.data() + offsets_[node + 1]};
}

std::vector<NodeIndex> RelationGraph::sources() const {
  std::vector<NodeIndex> out;
  for (NodeIndex n = 0; n + 1 < offsets_.size(); ++n) {
    if (offsets_[n + 1] > offsets_[n]) out.push_back(n);
  }
  return out;
}

GraphSet::GraphSet(std::span<const Triple> triples,
                   std::span<const EntityId> properties) {
  for (const auto& t : triples) {
    ids_.push_back(t.subject);
    ids_.push_back(t.object);
  }
  std::sort(ids_.begin(), ids_.end());
  ids_.erase(std::unique(ids_.begin(), ids_.end()), ids_.end());

  std::map<EntityId, std::vector<std::pair<NodeIndex, NodeIndex>>> edges;
  for (const auto& p : properties) edges[p];
  for (const auto& t : triples) {
    if (t.subject == t.object) continue;
    edges[t.property].emplace_back(*node(t.subject), *node(t.object));
  }
  for (auto& [property, list] : edges) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
    RelationGraph g;
    g.property_ = property;
    g.offsets_.assign(ids_.size() + 1, 0);
    for (const auto& [from, to] : list) ++g.offsets_[from + 1];
    std::partial_sum(g.offsets_.begin(), g.offsets_.end(), g.offsets_.begin());
    g.targets_.reserve(list.size());
    for (const auto& e : list) g.targets_.push_back(e.second);
    graphs_.emplace(property, std::move(g));
  }
}

std::optional<NodeIndex> GraphSet::node(const EntityId& id) const {
  const auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
  if (it == ids_.end() || *it != id) return std::nullopt;
  return static_cast<NodeIndex>(it - ids_.begin());
}

const RelationGraph* GraphSet::graph(const EntityId& property) const {
  const auto it = graphs_.find(property);
  return it == graphs_.end() ? nullptr : &it->second;
}

std::vector<EntityId> GraphSet::successors(const EntityId& property,
                                           const EntityId& from) const {
  std::vector<EntityId> out;
  const auto* g = graph(property);
  const auto n = node(from);
  if (g == nullptr || !n) return out;
  for (const auto s : g->successors(*n)) out.push_back(ids_[s]);
  return out;
}

void for_each_path(const RelationGraph& head, const RelationGraph& tail,
                   NodeIndex subject, int max_len,
                   const std::function<void(std::span<const NodeIndex>)>& visit) {
  if (max_len < 1) throw ConfigError("max path length must be at least 1");
  std::vector<NodeIndex> path;
  path.reserve(static_cast<std::size_t>(max_len));
  // Paths are at most a handful of nodes; a linear scan beats a visited set.
  const auto on_path = [&](NodeIndex n) {
    return n == subject || std::find(path.begin(), path.end(), n) != path.end();
  };
  const std::function<void(NodeIndex)> extend = [&](NodeIndex from) {
    const auto& g = path.empty() ? head : tail;
    for (const auto next : g.successors(from)) {
      if (on_path(next)) continue;
      path.push_back(next);
      visit(path);
      if (static_cast<int>(path.size()) < max_len) extend(next);
      path.pop_back();
    }
  };
  extend(subject);
}

std::vector<ReasoningPath> enumerate_paths(const GraphSet& graphs,
                                           const RelationSpec& spec,
                                           const EntityId& subject,
                                           int max_len) {
  const auto* head = graphs.graph(spec.head_property);
  const auto* tail = graphs.graph(spec.tail_property);
  if (head == nullptr || tail == nullptr) {
    throw ConfigError("no graph loaded for relation " + spec.task_id);
  }
  std::vector<ReasoningPath> out;
  const auto start = graphs.node(subject);
  if (!start) return out;
  for_each_path(*head, *tail, *start, max_len,
                [&](std::span<const NodeIndex> nodes) {
                  ReasoningPath p{subject, {}};
                  p.nodes.reserve(nodes.size());
                  for (const auto n : nodes) p.nodes.push_back(graphs.id(n));
                  out.push_back(std::move(p));
                });
  return out;
}

DistanceTable average_distances(std::span<const ReasoningPath> paths) {
  DistanceTable table;
  if (paths.empty()) return table;
  table.subject = paths.front().subject;
  // Every distinct prefix is one path from the subject to its last node, so
  // extensions of a path do not count it again.
  struct SpanLess {
    bool operator()(std::span<const EntityId> a, std::span<const EntityId> b) const {
      return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
    }
  };
  std::set<std::span<const EntityId>, SpanLess> prefixes;
  std::map<EntityId, std::pair<std::int64_t, std::int64_t>> acc;  // sum, count
  for (const auto& p : paths) {
    if (p.subject != table.subject) {
      throw ConfigError("average_distances: paths from different subjects");
    }
    for (std::size_t i = 0; i < p.nodes.size(); ++i) {
      const std::span<const EntityId> prefix(p.nodes.data(), i + 1);
      if (!prefixes.insert(prefix).second) continue;
      auto& [sum, count] = acc[p.nodes[i]];
      sum += static_cast<std::int64_t>(i + 1);
      ++count;
    }
  }
  for (const auto& [id, sc] : acc) table.entries.emplace(id, Rational(sc.first, sc.second));
  return table;
}

std::string SpecificityTriplet::key() const {
  return subject.id.str() + '\t' + fine.id.str() + '\t' + coarse.id.str();
}

bool triplet_id_less(const SpecificityTriplet& a, const SpecificityTriplet& b) {
  return std::tie(a.subject.id, a.fine.id, a.coarse.id, a.task_id) <
         std::tie(b.subject.id, b.fine.id, b.coarse.id, b.task_id);
}

std::vector<SpecificityTriplet> build_triplets(const DistanceTable& table,
                                               const std::string& task_id,
                                               Rational min_gap,
                                               std::size_t max_per_subject) {
  if (min_gap <= Rational(0)) {
    throw ConfigError("minimum distance gap must be positive");
  }
  std::vector<SpecificityTriplet> out;
  for (const auto& [fine, d_fine] : table.entries) {
    for (const auto& [coarse, d_coarse] : table.entries) {
      if (d_coarse - d_fine < min_gap) continue;
      SpecificityTriplet t;
      t.task_id = task_id;
      t.subject.id = table.subject;
      t.fine.id = fine;
      t.coarse.id = coarse;
      t.d_fine = d_fine;
      t.d_coarse = d_coarse;
      out.push_back(std::move(t));
    }
  }
  if (max_per_subject > 0 && out.size() > max_per_subject) {
    std::stable_sort(out.begin(), out.end(),
                     [](const SpecificityTriplet& a, const SpecificityTriplet& b) {
                       return a.gap() > b.gap();
                     });
    out.resize(max_per_subject);
    std::sort(out.begin(), out.end(), triplet_id_less);
  }
  return out;
}

std::vector<SpecificityTriplet> label_triplets(
    std::vector<SpecificityTriplet> triplets, const LabelTable& labels) {
  std::vector<SpecificityTriplet> out;
  out.reserve(triplets.size());
  for (auto& t : triplets) {
    const auto* s = labels.find(t.subject.id);
    const auto* f = labels.find(t.fine.id);
    const auto* c = labels.find(t.coarse.id);
    if (s == nullptr || f == nullptr || c == nullptr) continue;
    t.subject.label = *s;
    t.fine.label = *f;
    t.coarse.label = *c;
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

bool single_token(const std::string& label, const Vocabulary& vocab) {
  if (label.empty()) return false;
  if (label.find_first_of(" \t\r\n") != std::string::npos) return false;
  return vocab.contains(label);
}

}  // namespace

std::vector<SpecificityTriplet> filter_single_token(
    std::span<const SpecificityTriplet> triplets, const Vocabulary& vocab) {
  std::vector<SpecificityTriplet> out;
  for (const auto& t : triplets) {
    if (single_token(t.fine.label, vocab) && single_token(t.coarse.label, vocab)) {
      out.push_back(t);
    }
  }
  return out;
}

std::vector<SpecificityTriplet> sample_benchmark(
    std::span<const SpecificityTriplet> triplets, std::size_t cap,
    std::uint64_t seed) {
  std::vector<SpecificityTriplet> all(triplets.begin(), triplets.end());
  // Sorting first makes the sample depend on the set, not the input order.
  std::sort(all.begin(), all.end(), triplet_id_less);
  if (all.size() <= cap) return all;

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < cap; ++i) {
    const auto j = i + bounded_draw(rng, order.size() - i);
    std::swap(order[i], order[j]);
  }
  order.resize(cap);
  std::sort(order.begin(), order.end());
  std::vector<SpecificityTriplet> out;
  out.reserve(cap);
  for (const auto i : order) out.push_back(std::move(all[i]));
  return out;
}

std::size_t Benchmark::total() const {
  std::size_t n = 0;
  for (const auto& [task, list] : by_task) n += list.size();
  return n;
}

namespace {

std::vector<SpecificityTriplet> triplets_for_subjects(
    const GraphSet& graphs, const RelationGraph& head, const RelationGraph& tail,
    std::span<const NodeIndex> subjects, const RelationSpec& spec,
    const BuildOptions& options) {
  std::vector<SpecificityTriplet> out;
  std::unordered_map<NodeIndex, std::pair<std::int64_t, std::int64_t>> acc;
  for (const auto subject : subjects) {
    acc.clear();
    for_each_path(head, tail, subject, options.max_len,
                  [&](std::span<const NodeIndex> nodes) {
                    // Each visit is a distinct path ending at its last node.
                    auto& [sum, count] = acc[nodes.back()];
                    sum += static_cast<std::int64_t>(nodes.size());
                    ++count;
                  });
    DistanceTable table;
    table.subject = graphs.id(subject);
    for (const auto& [n, sc] : acc) {
      table.entries.emplace(graphs.id(n), Rational(sc.first, sc.second));
    }
    auto ts = build_triplets(table, spec.task_id, options.min_gap,
                             options.max_per_subject);
    std::move(ts.begin(), ts.end(), std::back_inserter(out));
  }
  return out;
}

}  // namespace

Benchmark build_benchmark(const Snapshot& snapshot,
                          std::span<const RelationSpec> relations,
                          const Vocabulary& vocab, const BuildOptions& options) {
  std::vector<EntityId> properties;
  for (const auto& r : relations) {
    properties.push_back(r.head_property);
    properties.push_back(r.tail_property);
  }
  const GraphSet graphs(snapshot.triples, properties);
  const unsigned workers = std::max(1u, options.threads);

  Benchmark bench;
  for (const auto& spec : relations) {
    const auto& head = *graphs.graph(spec.head_property);
    const auto& tail = *graphs.graph(spec.tail_property);
    const auto subjects = head.sources();

    std::vector<SpecificityTriplet> raw;
    if (workers == 1 || subjects.size() < 2 * workers) {
      raw = triplets_for_subjects(graphs, head, tail, subjects, spec, options);
    } else {
      // Subject-local work; shards are concatenated in subject order.
      std::vector<std::future<std::vector<SpecificityTriplet>>> parts;
      const std::size_t chunk = (subjects.size() + workers - 1) / workers;
      for (std::size_t b = 0; b < subjects.size(); b += chunk) {
        const std::span<const NodeIndex> shard(
            subjects.data() + b, std::min(chunk, subjects.size() - b));
        parts.push_back(std::async(std::launch::async, [&, shard] {
          return triplets_for_subjects(graphs, head, tail, shard, spec, options);
        }));
      }
      for (auto& p : parts) {
        auto part = p.get();
        std::move(part.begin(), part.end(), std::back_inserter(raw));
      }
    }

    RelationBuildStats stats;
    stats.task_id = spec.task_id;
    stats.subjects = subjects.size();
    stats.raw_triplets = raw.size();
    auto labeled = label_triplets(std::move(raw), snapshot.labels);
    stats.labeled = labeled.size();
    const auto single = filter_single_token(labeled, vocab);
    stats.single_token = single.size();
    auto sampled = sample_benchmark(
        single, options.cap, mix64(options.seed ^ fnv1a64(spec.task_id)));
    stats.sampled = sampled.size();
    spdlog::info("build {}: {} subjects, {} raw, {} labeled, {} single-token, {} kept",
                 spec.task_id, stats.subjects, stats.raw_triplets, stats.labeled,
                 stats.single_token, stats.sampled);
    bench.by_task[spec.task_id] = std::move(sampled);
    bench.stats.push_back(stats);
  }
  return bench;
}

namespace {

constexpr std::string_view kBenchmarkHeader =
    "task_id\tsubject_id\tsubject_label\tfine_id\tfine_label\tcoarse_id\t"
    "coarse_label\td_fine\td_coarse";

}  // namespace

void write_benchmark_file(const std::filesystem::path& path,
                          std::span<const SpecificityTriplet> triplets) {
  std::ostringstream out;
  out << kBenchmarkHeader << '\n';
  for (const auto& t : triplets) {
    out << t.task_id << '\t' << t.subject.id.str() << '\t'
        << tsv_field(t.subject.label) << '\t' << t.fine.id.str() << '\t'
        << tsv_field(t.fine.label) << '\t' << t.coarse.id.str() << '\t'
        << tsv_field(t.coarse.label) << '\t' << to_string(t.d_fine) << '\t'
        << to_string(t.d_coarse) << '\n';
  }
  write_file_atomic(path, out.str());
}

std::vector<SpecificityTriplet> read_benchmark_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open benchmark file " + path.string());
  std::vector<SpecificityTriplet> out;
  std::string line;
  std::uint64_t offset = 0;
  bool header = true;
  while (std::getline(in, line)) {
    const auto line_offset = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line != kBenchmarkHeader) {
        throw ParseError("unexpected benchmark header in " + path.string(), 0);
      }
      continue;
    }
    const auto f = split(line, '\t');
    if (f.size() != 9) {
      throw ParseError("benchmark record needs 9 fields in " + path.string(),
                       line_offset);
    }
    SpecificityTriplet t;
    t.task_id = std::string(f[0]);
    t.subject = {EntityId(std::string(f[1])), std::string(f[2])};
    t.fine = {EntityId(std::string(f[3])), std::string(f[4])};
    t.coarse = {EntityId(std::string(f[5])), std::string(f[6])};
    t.d_fine = parse_rational(f[7]);
    t.d_coarse = parse_rational(f[8]);
    out.push_back(std::move(t));
  }
  return out;
}

void write_benchmark(const std::filesystem::path& dir, const Benchmark& bench) {
  std::filesystem::create_directories(dir);
  for (const auto& [task, list] : bench.by_task) {
    write_benchmark_file(dir / (task + ".tsv"), list);
  }
}

Benchmark read_benchmark(const std::filesystem::path& dir,
                         std::span<const RelationSpec> relations) {
  Benchmark bench;
  for (const auto& r : relations) {
    const auto path = dir / (r.task_id + ".tsv");
    if (!std::filesystem::exists(path)) {
      throw ConfigError("missing benchmark file " + path.string());
    }
    bench.by_task[r.task_id] = read_benchmark_file(path);
    RelationBuildStats s;
    s.task_id = r.task_id;
    s.sampled = bench.by_task[r.task_id].size();
    bench.stats.push_back(s);
  }
  return bench;
}

}  // namespace specbench
