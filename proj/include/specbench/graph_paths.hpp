#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <boost/rational.hpp>

#include "specbench/kb_ingest.hpp"
#include "specbench/vocabulary.hpp"

namespace specbench {

// Average distances are kept exact so the gap threshold never depends on
// floating-point rounding.
using Rational = boost::rational<std::int64_t>;

std::string to_string(const Rational& r);  // "5/2", "2"
Rational parse_rational(std::string_view text);

using NodeIndex = std::uint32_t;

// Adjacency of one property in CSR form. Successor lists are sorted by node
// index and deduplicated.
class RelationGraph {
 public:
  const EntityId& property() const { return property_; }
  std::span<const NodeIndex> successors(NodeIndex node) const;
  std::size_t edge_count() const { return targets_.size(); }
  // Nodes with at least one outgoing edge, ascending.
  std::vector<NodeIndex> sources() const;

 private:
  friend class GraphSet;
  EntityId property_;
  std::vector<std::uint32_t> offsets_;
  std::vector<NodeIndex> targets_;
};

// Per-property graphs over a shared node index. Node indices follow the
// byte order of the entity ids, so ordering by index is ordering by id.
class GraphSet {
 public:
  // `properties` get a graph even when no triple uses them.
  explicit GraphSet(std::span<const Triple> triples,
                    std::span<const EntityId> properties = {});

  std::optional<NodeIndex> node(const EntityId& id) const;
  const EntityId& id(NodeIndex node) const { return ids_[node]; }
  std::size_t node_count() const { return ids_.size(); }
  const RelationGraph* graph(const EntityId& property) const;
  std::vector<EntityId> successors(const EntityId& property,
                                   const EntityId& node) const;

 private:
  std::vector<EntityId> ids_;
  std::map<EntityId, RelationGraph> graphs_;
};

struct ReasoningPath {
  EntityId subject;
  std::vector<EntityId> nodes;  // excludes the subject

  std::size_t length() const { return nodes.size(); }
  auto operator<=>(const ReasoningPath&) const = default;
};

// Depth-first walk over every simple path from `subject` with 1..max_len
// edges. The first edge follows the head property, later edges the tail
// property. Paths are reported in lexicographic order of their node ids.
void for_each_path(const RelationGraph& head, const RelationGraph& tail,
                   NodeIndex subject, int max_len,
                   const std::function<void(std::span<const NodeIndex>)>& visit);

std::vector<ReasoningPath> enumerate_paths(const GraphSet& graphs,
                                           const RelationSpec& spec,
                                           const EntityId& subject,
                                           int max_len = 5);

struct DistanceTable {
  EntityId subject;
  std::map<EntityId, Rational> entries;
};

// Mean length of the distinct simple paths from the subject that end at each
// object. Paths may be given whole or with their prefixes; each distinct
// prefix counts once.
DistanceTable average_distances(std::span<const ReasoningPath> paths);

struct LabeledEntity {
  EntityId id;
  std::string label;

  auto operator<=>(const LabeledEntity&) const = default;
};

struct SpecificityTriplet {
  std::string task_id;
  LabeledEntity subject;
  LabeledEntity fine;
  LabeledEntity coarse;
  Rational d_fine;
  Rational d_coarse;

  Rational gap() const { return d_coarse - d_fine; }
  // (subject, fine, coarse) ids; the benchmark sort and dedup key.
  std::string key() const;
};

bool triplet_id_less(const SpecificityTriplet& a, const SpecificityTriplet& b);

// One triplet per object pair whose distance gap is at least `min_gap`, the
// closer object being the fine one. A subject producing more than
// `max_per_subject` triplets keeps the largest gaps (0 disables the cap).
// Labels are left empty; see label_triplets.
std::vector<SpecificityTriplet> build_triplets(const DistanceTable& table,
                                               const std::string& task_id,
                                               Rational min_gap = Rational(1),
                                               std::size_t max_per_subject = 50);

// Fills labels and drops triplets with any unlabeled entity.
std::vector<SpecificityTriplet> label_triplets(
    std::vector<SpecificityTriplet> triplets, const LabelTable& labels);

// Keeps triplets whose fine and coarse labels are single vocabulary tokens.
std::vector<SpecificityTriplet> filter_single_token(
    std::span<const SpecificityTriplet> triplets, const Vocabulary& vocab);

// Everything when it fits under `cap`, otherwise a seeded uniform sample of
// size `cap`. Output is sorted by (subject, fine, coarse).
std::vector<SpecificityTriplet> sample_benchmark(
    std::span<const SpecificityTriplet> triplets, std::size_t cap,
    std::uint64_t seed);

struct BuildOptions {
  int max_len = 5;
  Rational min_gap{1};
  std::size_t cap = 5000;
  std::size_t max_per_subject = 50;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct RelationBuildStats {
  std::string task_id;
  std::size_t subjects = 0;
  std::size_t raw_triplets = 0;
  std::size_t labeled = 0;
  std::size_t single_token = 0;
  std::size_t sampled = 0;
};

struct Benchmark {
  std::map<std::string, std::vector<SpecificityTriplet>> by_task;
  std::vector<RelationBuildStats> stats;

  std::size_t total() const;
};

Benchmark build_benchmark(const Snapshot& snapshot,
                          std::span<const RelationSpec> relations,
                          const Vocabulary& vocab, const BuildOptions& options);

// TSV with a header row: task_id, subject_id, subject_label, fine_id,
// fine_label, coarse_id, coarse_label, d_fine, d_coarse.
void write_benchmark_file(const std::filesystem::path& path,
                          std::span<const SpecificityTriplet> triplets);
std::vector<SpecificityTriplet> read_benchmark_file(
    const std::filesystem::path& path);

// One `<task_id>.tsv` per relation.
void write_benchmark(const std::filesystem::path& dir, const Benchmark& bench);
Benchmark read_benchmark(const std::filesystem::path& dir,
                         std::span<const RelationSpec> relations);

}  // namespace specbench
