#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace specbench {

// Knowledge-base identifier. Items start with 'Q', properties with 'P'; other
// leading characters are allowed for desk-scale fixtures but are treated as
// items.
class EntityId {
 public:
  EntityId() = default;
  explicit EntityId(std::string value);

  const std::string& str() const { return value_; }
  bool is_property() const { return !value_.empty() && value_[0] == 'P'; }
  bool empty() const { return value_.empty(); }

  auto operator<=>(const EntityId&) const = default;

 private:
  std::string value_;
};

struct Triple {
  EntityId subject;
  EntityId property;
  EntityId object;

  auto operator<=>(const Triple&) const = default;
};

// Labels in one language. Ids that were requested but have no label in that
// language are kept in `misses`.
struct LabelTable {
  std::string language = "en";
  std::map<EntityId, std::string> labels;
  std::set<EntityId> misses;

  const std::string* find(const EntityId& id) const;
};

// One benchmark task. Pure transitive tasks use the same property for both
// hops; combined tasks (birthplace, occupation) start with a different head.
struct RelationSpec {
  std::string task_id;
  std::string name;  // display name, e.g. "birthplace"
  EntityId head_property;
  EntityId tail_property;
  std::string template_id;

  bool combined() const { return head_property != tail_property; }
};

// birthplace, occupation, location, subclass-of, part-of.
std::vector<RelationSpec> default_relations();
std::vector<RelationSpec> load_relations(const std::filesystem::path& path);
nlohmann::json relations_to_json(const std::vector<RelationSpec>& relations);
std::vector<RelationSpec> relations_from_json(const nlohmann::json& j);

enum class ClaimRank { preferred, normal, deprecated };

struct Claim {
  EntityId property;
  // Unset for literal-valued, somevalue and novalue snaks.
  std::optional<EntityId> object;
  ClaimRank rank = ClaimRank::normal;
};

struct EntityRecord {
  EntityId id;
  std::uint64_t byte_offset = 0;
  std::map<std::string, std::string> labels;  // language -> label
  std::vector<Claim> claims;
};

enum class DumpFormat { autodetect, json_lines, triple_tsv };

enum class ErrorPolicy { skip, abort };

struct StreamOptions {
  DumpFormat format = DumpFormat::autodetect;
  ErrorPolicy on_error = ErrorPolicy::skip;
  // With the skip policy, finishing a stream whose error fraction exceeds
  // this value raises ParseError.
  double max_error_rate = 0.01;
  // Worker threads used to parse JSON records; 0 picks hardware concurrency.
  unsigned threads = 1;
  std::size_t batch_lines = 2048;
  // Only labels in these languages are kept on records (empty keeps all).
  std::set<std::string> keep_languages;
};

struct RecordError {
  std::uint64_t byte_offset = 0;
  std::string message;
};

struct StreamStats {
  std::uint64_t records = 0;
  std::uint64_t errors = 0;
  std::uint64_t bytes = 0;            // decompressed bytes consumed
  std::uint64_t content_hash = 0;     // FNV-1a over the decompressed stream
  std::vector<RecordError> first_errors;  // at most 32 kept
  bool compressed = false;
  DumpFormat format = DumpFormat::autodetect;

  double error_rate() const;
};

class LineSource;

// Pull-based reader over an entity dump. Records come out in input order;
// memory use is bounded by the batch size, not the dump size.
class EntityStream {
 public:
  EntityStream(const std::filesystem::path& path, StreamOptions options = {});
  ~EntityStream();
  EntityStream(const EntityStream&) = delete;
  EntityStream& operator=(const EntityStream&) = delete;

  // Next record, or nullopt at end of input. Under ErrorPolicy::abort a
  // malformed record throws ParseError carrying its byte offset.
  std::optional<EntityRecord> next();

  // Applies the error-rate ceiling. Call after next() returned nullopt.
  void finish();

  const StreamStats& stats() const { return stats_; }

 private:
  struct Parsed;
  bool read_line(std::string& line, std::uint64_t& offset);
  void detect_format();
  bool refill();
  bool refill_json();
  bool refill_tsv();
  void record_error(std::uint64_t offset, std::string message);

  std::unique_ptr<LineSource> source_;
  StreamOptions options_;
  StreamStats stats_;
  std::vector<Parsed> buffer_;
  std::size_t cursor_ = 0;
  // TSV records are grouped by consecutive subject; the group being built.
  std::optional<EntityRecord> pending_;
  std::optional<std::pair<std::string, std::uint64_t>> pushback_;
  bool eof_ = false;
};

// Convenience wrapper: calls `sink` for every record and returns the stats.
StreamStats stream_entities(const std::filesystem::path& path,
                            const StreamOptions& options,
                            const std::function<void(EntityRecord&&)>& sink);

// Parses one JSON entity document (one dump line without the trailing comma).
EntityRecord parse_entity_json(std::string_view line,
                               std::uint64_t byte_offset = 0,
                               const std::set<std::string>& keep_languages = {});

// Claims whose property is in the filter and whose value is an entity
// reference. Deprecated claims and self-loops are dropped.
std::vector<Triple> extract_triples(const EntityRecord& record,
                                    const std::set<EntityId>& property_filter);

LabelTable resolve_labels(const std::set<EntityId>& ids,
                          const std::filesystem::path& dump,
                          const std::string& language,
                          const StreamOptions& options = {});

struct Snapshot {
  std::vector<Triple> triples;  // sorted, unique
  LabelTable labels;
  nlohmann::json metadata;
};

// Files: triples.tsv, labels.tsv, label_misses.tsv, snapshot.json.
void write_snapshot(const std::filesystem::path& dir, const Snapshot& snapshot);
Snapshot read_snapshot(const std::filesystem::path& dir);

std::vector<Triple> read_triples_tsv(const std::filesystem::path& path);

struct IngestOptions {
  std::filesystem::path dump;
  std::set<EntityId> properties;
  std::string language = "en";
  StreamOptions stream;
};

struct IngestSummary {
  StreamStats triple_pass;
  std::size_t triples = 0;
  std::size_t labeled = 0;
  std::size_t missing_labels = 0;
};

// Two passes over the dump: triples for the configured properties, then
// labels for every entity those triples mention.
Snapshot ingest(const IngestOptions& options, IngestSummary* summary = nullptr);

}  // namespace specbench

template <>
struct std::hash<specbench::EntityId> {
  std::size_t operator()(const specbench::EntityId& id) const noexcept {
    return std::hash<std::string>{}(id.str());
  }
};
