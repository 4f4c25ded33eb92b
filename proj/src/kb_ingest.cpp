#include "specbench/kb_ingest.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "dump_reader.hpp"
#include "specbench/error.hpp"
#include "specbench/util.hpp"

namespace specbench {

using nlohmann::json;

EntityId::EntityId(std::string value) : value_(std::move(value)) {
  if (value_.empty()) throw ConfigError("empty entity id");
}

const std::string* LabelTable::find(const EntityId& id) const {
  const auto it = labels.find(id);
  return it == labels.end() ? nullptr : &it->second;
}

std::vector<RelationSpec> default_relations() {
  return {
      {"P19", "birthplace", EntityId("P19"), EntityId("P131"), "P19"},
      {"P106", "occupation", EntityId("P106"), EntityId("P279"), "P106"},
      {"P131", "location", EntityId("P131"), EntityId("P131"), "P131"},
      {"P279", "subclass-of", EntityId("P279"), EntityId("P279"), "P279"},
      {"P361", "part-of", EntityId("P361"), EntityId("P361"), "P361"},
  };
}

json relations_to_json(const std::vector<RelationSpec>& relations) {
  json out = json::array();
  for (const auto& r : relations) {
    out.push_back({{"task_id", r.task_id},
                   {"name", r.name},
                   {"head_property", r.head_property.str()},
                   {"tail_property", r.tail_property.str()},
                   {"template_id", r.template_id}});
  }
  return out;
}

std::vector<RelationSpec> relations_from_json(const json& j) {
  if (!j.is_array()) throw ConfigError("relation specs must be a JSON array");
  std::vector<RelationSpec> out;
  std::set<std::string> seen;
  for (const auto& item : j) {
    RelationSpec r;
    try {
      r.task_id = item.at("task_id").get<std::string>();
      r.head_property = EntityId(item.at("head_property").get<std::string>());
      r.tail_property = EntityId(
          item.value("tail_property", r.head_property.str()));
      r.name = item.value("name", r.task_id);
      r.template_id = item.value("template_id", r.task_id);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad relation spec: ") + e.what());
    }
    if (!r.head_property.is_property() || !r.tail_property.is_property()) {
      throw ConfigError("relation " + r.task_id +
                        ": head/tail must be property ids");
    }
    if (!seen.insert(r.task_id).second) {
      throw ConfigError("duplicate relation task id " + r.task_id);
    }
    out.push_back(std::move(r));
  }
  if (out.empty()) throw ConfigError("no relation specs");
  return out;
}

std::vector<RelationSpec> load_relations(const std::filesystem::path& path) {
  try {
    return relations_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse relations file " + path.string() + ": " +
                      e.what());
  }
}

double StreamStats::error_rate() const {
  const auto total = records + errors;
  return total == 0 ? 0.0 : static_cast<double>(errors) / static_cast<double>(total);
}

namespace {

constexpr std::size_t kMaxKeptErrors = 32;

ClaimRank parse_rank(const json& statement) {
  const auto it = statement.find("rank");
  if (it == statement.end() || !it->is_string()) return ClaimRank::normal;
  const auto& s = it->get_ref<const std::string&>();
  if (s == "preferred") return ClaimRank::preferred;
  if (s == "deprecated") return ClaimRank::deprecated;
  return ClaimRank::normal;
}

std::optional<EntityId> entity_value(const json& mainsnak) {
  if (mainsnak.value("snaktype", "value") != "value") return std::nullopt;
  const auto dv = mainsnak.find("datavalue");
  if (dv == mainsnak.end() || !dv->is_object()) return std::nullopt;
  if (dv->value("type", "") != "wikibase-entityid") return std::nullopt;
  const auto& value = dv->at("value");
  if (const auto id = value.find("id"); id != value.end() && id->is_string()) {
    return EntityId(id->get<std::string>());
  }
  const auto type = value.value("entity-type", "item");
  const auto numeric = value.at("numeric-id").get<std::int64_t>();
  const char prefix = type == "property" ? 'P' : 'Q';
  return EntityId(prefix + std::to_string(numeric));
}

bool skipped_key(const std::string& key) {
  return key == "sitelinks" || key == "descriptions" || key == "aliases" ||
         key == "qualifiers" || key == "qualifiers-order" ||
         key == "references";
}

// Returns the JSON payload of a dump line, or empty for array brackets and
// blank lines.
std::string_view json_payload(std::string_view line) {
  auto t = trim(line);
  if (!t.empty() && t.back() == ',') t = trim(t.substr(0, t.size() - 1));
  if (t == "[" || t == "]") return {};
  return t;
}

}  // namespace

EntityRecord parse_entity_json(std::string_view line, std::uint64_t byte_offset,
                               const std::set<std::string>& keep_languages) {
  json doc;
  try {
    doc = json::parse(
        line.begin(), line.end(),
        [](int, json::parse_event_t event, json& parsed) {
          return !(event == json::parse_event_t::key &&
                   skipped_key(parsed.get<std::string>()));
        });
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed entity JSON: ") + e.what(),
                     byte_offset);
  }
  if (!doc.is_object()) throw ParseError("entity is not an object", byte_offset);

  EntityRecord record;
  record.byte_offset = byte_offset;
  try {
    record.id = EntityId(doc.at("id").get<std::string>());
    if (const auto labels = doc.find("labels"); labels != doc.end()) {
      for (const auto& [lang, entry] : labels->items()) {
        if (!keep_languages.empty() && !keep_languages.contains(lang)) continue;
        record.labels.emplace(lang, entry.at("value").get<std::string>());
      }
    }
    if (const auto claims = doc.find("claims"); claims != doc.end()) {
      for (const auto& [pid, statements] : claims->items()) {
        for (const auto& statement : statements) {
          const auto& mainsnak = statement.at("mainsnak");
          Claim claim;
          claim.property = EntityId(mainsnak.value("property", pid));
          claim.object = entity_value(mainsnak);
          claim.rank = parse_rank(statement);
          record.claims.push_back(std::move(claim));
        }
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad entity structure: ") + e.what(),
                     byte_offset);
  } catch (const ConfigError& e) {
    throw ParseError(e.what(), byte_offset);
  }
  return record;
}

struct EntityStream::Parsed {
  std::optional<EntityRecord> record;
  RecordError error;
};

EntityStream::EntityStream(const std::filesystem::path& path,
                           StreamOptions options)
    : source_(LineSource::open(path)), options_(std::move(options)) {
  stats_.compressed = source_->compressed();
  if (options_.threads == 0) {
    options_.threads = std::max(1u, std::thread::hardware_concurrency());
  }
  if (options_.batch_lines == 0) options_.batch_lines = 1;
}

EntityStream::~EntityStream() = default;

void EntityStream::record_error(std::uint64_t offset, std::string message) {
  ++stats_.errors;
  if (options_.on_error == ErrorPolicy::abort) throw ParseError(message, offset);
  if (stats_.first_errors.size() < kMaxKeptErrors) {
    stats_.first_errors.push_back({offset, message});
  }
}

std::optional<EntityRecord> EntityStream::next() {
  while (true) {
    while (cursor_ < buffer_.size()) {
      auto& item = buffer_[cursor_++];
      if (!item.record) {
        record_error(item.error.byte_offset, item.error.message);
        continue;
      }
      ++stats_.records;
      return std::move(*item.record);
    }
    buffer_.clear();
    cursor_ = 0;
    if (eof_ || !refill()) return std::nullopt;
  }
}

bool EntityStream::read_line(std::string& line, std::uint64_t& offset) {
  if (pushback_) {
    line = std::move(pushback_->first);
    offset = pushback_->second;
    pushback_.reset();
    return true;
  }
  if (!source_->next_line(line, offset)) return false;
  stats_.bytes = offset + line.size() + 1;
  stats_.content_hash =
      fnv1a64("\n", fnv1a64(line, stats_.content_hash == 0
                                      ? 0xcbf29ce484222325ULL
                                      : stats_.content_hash));
  return true;
}

void EntityStream::detect_format() {
  stats_.format = options_.format;
  if (stats_.format != DumpFormat::autodetect) return;
  std::string line;
  std::uint64_t offset = 0;
  while (read_line(line, offset)) {
    const auto t = trim(line);
    if (t.empty()) continue;
    stats_.format = (t.front() == '[' || t.front() == '{')
                        ? DumpFormat::json_lines
                        : DumpFormat::triple_tsv;
    pushback_.emplace(std::move(line), offset);
    return;
  }
  stats_.format = DumpFormat::json_lines;
}

bool EntityStream::refill() {
  if (stats_.format == DumpFormat::autodetect) detect_format();
  if (stats_.format == DumpFormat::triple_tsv) return refill_tsv();
  return refill_json();
}

bool EntityStream::refill_json() {
  std::vector<std::pair<std::string, std::uint64_t>> lines;
  lines.reserve(options_.batch_lines);
  std::string line;
  std::uint64_t offset = 0;
  while (lines.size() < options_.batch_lines) {
    if (!read_line(line, offset)) {
      eof_ = true;
      break;
    }
    if (json_payload(line).empty()) continue;
    lines.emplace_back(std::move(line), offset);
  }
  if (lines.empty()) return false;

  buffer_.resize(lines.size());
  const auto parse_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        buffer_[i].record = parse_entity_json(json_payload(lines[i].first),
                                              lines[i].second,
                                              options_.keep_languages);
      } catch (const ParseError& e) {
        buffer_[i].error = {e.byte_offset(), e.what()};
      }
    }
  };
  const std::size_t workers =
      std::min<std::size_t>(options_.threads, lines.size());
  if (workers <= 1) {
    parse_range(0, lines.size());
  } else {
    // Shards write disjoint slots of buffer_; input order is kept by index.
    std::vector<std::future<void>> tasks;
    const std::size_t chunk = (lines.size() + workers - 1) / workers;
    for (std::size_t b = 0; b < lines.size(); b += chunk) {
      tasks.push_back(std::async(std::launch::async, parse_range, b,
                                 std::min(lines.size(), b + chunk)));
    }
    for (auto& t : tasks) t.get();
  }
  return true;
}

// TSV dumps: `subject \t property \t object` per line. A property column of
// the form `label:<lang>` carries a label instead of a claim; an object in
// double quotes is a literal. Consecutive lines sharing a subject form one
// record.
bool EntityStream::refill_tsv() {
  std::string line;
  std::uint64_t offset = 0;
  while (buffer_.size() < options_.batch_lines) {
    if (!read_line(line, offset)) {
      eof_ = true;
      break;
    }
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto fields = split(line, '\t');
    if (fields.size() == 3 && fields[0] == "subject_id") continue;  // header
    if (fields.size() != 3 || trim(fields[0]).empty() ||
        trim(fields[1]).empty() || trim(fields[2]).empty()) {
      Parsed bad;
      bad.error = {offset, "expected 3 non-empty tab-separated fields, got " +
                               std::to_string(fields.size())};
      buffer_.push_back(std::move(bad));
      continue;
    }
    const std::string subject(trim(fields[0]));
    const std::string property(trim(fields[1]));
    const std::string object(trim(fields[2]));
    if (pending_ && pending_->id.str() != subject) {
      buffer_.push_back(Parsed{std::move(pending_), {}});
      pending_.reset();
    }
    if (!pending_) {
      pending_.emplace();
      pending_->id = EntityId(subject);
      pending_->byte_offset = offset;
    }
    if (property.starts_with("label:")) {
      const auto lang = property.substr(6);
      if (options_.keep_languages.empty() ||
          options_.keep_languages.contains(lang)) {
        pending_->labels.emplace(lang, object);
      }
      continue;
    }
    Claim claim;
    claim.property = EntityId(property);
    if (object.front() != '"') claim.object = EntityId(object);
    pending_->claims.push_back(std::move(claim));
  }
  if (eof_ && pending_) {
    buffer_.push_back(Parsed{std::move(pending_), {}});
    pending_.reset();
  }
  return !buffer_.empty();
}

void EntityStream::finish() {
  if (options_.on_error == ErrorPolicy::skip &&
      stats_.error_rate() > options_.max_error_rate) {
    const auto offset =
        stats_.first_errors.empty() ? 0 : stats_.first_errors.front().byte_offset;
    throw ParseError(
        "dump error rate " + std::to_string(stats_.error_rate()) +
            " exceeds limit " + std::to_string(options_.max_error_rate) + " (" +
            std::to_string(stats_.errors) + " malformed records)",
        offset);
  }
}

StreamStats stream_entities(const std::filesystem::path& path,
                            const StreamOptions& options,
                            const std::function<void(EntityRecord&&)>& sink) {
  EntityStream stream(path, options);
  while (auto record = stream.next()) sink(std::move(*record));
  stream.finish();
  return stream.stats();
}

std::vector<Triple> extract_triples(const EntityRecord& record,
                                    const std::set<EntityId>& property_filter) {
  if (property_filter.empty()) throw ConfigError("empty property filter");
  std::vector<Triple> out;
  for (const auto& claim : record.claims) {
    if (!claim.object || claim.rank == ClaimRank::deprecated) continue;
    if (!property_filter.contains(claim.property)) continue;
    if (*claim.object == record.id) continue;
    out.push_back({record.id, claim.property, *claim.object});
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

LabelTable resolve_labels(const std::set<EntityId>& ids,
                          const std::filesystem::path& dump,
                          const std::string& language,
                          const StreamOptions& options) {
  LabelTable table;
  table.language = language;
  StreamOptions opts = options;
  opts.keep_languages = {language};
  if (!ids.empty()) {
    EntityStream stream(dump, opts);
    while (auto record = stream.next()) {
      if (!ids.contains(record->id)) continue;
      const auto it = record->labels.find(language);
      if (it == record->labels.end()) continue;
      table.labels.insert_or_assign(record->id, it->second);
      if (table.labels.size() == ids.size()) break;
    }
    stream.finish();
  }
  for (const auto& id : ids) {
    if (!table.labels.contains(id)) table.misses.insert(id);
  }
  return table;
}

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace

std::vector<Triple> read_triples_tsv(const std::filesystem::path& path) {
  std::vector<Triple> out;
  std::uint64_t offset = 0;
  for (const auto& line : read_lines(path)) {
    const auto f = split(line, '\t');
    if (f.size() != 3) throw ParseError("bad triple line in " + path.string(), offset);
    if (f[0] == "subject_id") continue;
    out.push_back({EntityId(std::string(f[0])), EntityId(std::string(f[1])),
                   EntityId(std::string(f[2]))});
    offset += line.size() + 1;
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void write_snapshot(const std::filesystem::path& dir, const Snapshot& snapshot) {
  std::filesystem::create_directories(dir);
  std::ostringstream triples;
  for (const auto& t : snapshot.triples) {
    triples << t.subject.str() << '\t' << t.property.str() << '\t'
            << t.object.str() << '\n';
  }
  write_file_atomic(dir / "triples.tsv", triples.str());

  std::ostringstream labels;
  for (const auto& [id, label] : snapshot.labels.labels) {
    labels << id.str() << '\t' << tsv_field(label) << '\n';
  }
  write_file_atomic(dir / "labels.tsv", labels.str());

  std::ostringstream misses;
  for (const auto& id : snapshot.labels.misses) misses << id.str() << '\n';
  write_file_atomic(dir / "label_misses.tsv", misses.str());

  write_file_atomic(dir / "snapshot.json", snapshot.metadata.dump(2) + "\n");
}

Snapshot read_snapshot(const std::filesystem::path& dir) {
  Snapshot snap;
  snap.triples = read_triples_tsv(dir / "triples.tsv");
  for (const auto& line : read_lines(dir / "labels.tsv")) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error("bad label line in " + (dir / "labels.tsv").string());
    }
    snap.labels.labels.emplace(EntityId(line.substr(0, tab)), line.substr(tab + 1));
  }
  if (std::filesystem::exists(dir / "label_misses.tsv")) {
    for (const auto& line : read_lines(dir / "label_misses.tsv")) {
      snap.labels.misses.insert(EntityId(line));
    }
  }
  if (std::filesystem::exists(dir / "snapshot.json")) {
    snap.metadata = json::parse(read_file(dir / "snapshot.json"));
    snap.labels.language = snap.metadata.value("language", "en");
  }
  return snap;
}

namespace {

std::string format_name(DumpFormat f) {
  switch (f) {
    case DumpFormat::json_lines: return "json_lines";
    case DumpFormat::triple_tsv: return "triple_tsv";
    default: return "unknown";
  }
}

json stats_json(const StreamStats& s) {
  json errors = json::array();
  for (const auto& e : s.first_errors) {
    errors.push_back({{"byte_offset", e.byte_offset}, {"message", e.message}});
  }
  return {{"records", s.records},
          {"parse_errors", s.errors},
          {"bytes", s.bytes},
          {"content_fnv1a64", hex64(s.content_hash)},
          {"compressed", s.compressed},
          {"format", format_name(s.format)},
          {"first_errors", errors}};
}

}  // namespace

Snapshot ingest(const IngestOptions& options, IngestSummary* summary) {
  if (options.properties.empty()) throw ConfigError("no properties to extract");
  StreamOptions pass1 = options.stream;
  pass1.keep_languages = {options.language};

  std::set<Triple> triples;
  const auto triple_stats =
      stream_entities(options.dump, pass1, [&](EntityRecord&& record) {
        for (auto& t : extract_triples(record, options.properties)) {
          triples.insert(std::move(t));
        }
      });
  spdlog::info("ingest: {} records, {} triples, {} parse errors",
               triple_stats.records, triples.size(), triple_stats.errors);

  std::set<EntityId> ids;
  for (const auto& t : triples) {
    ids.insert(t.subject);
    ids.insert(t.object);
  }

  Snapshot snap;
  snap.triples.assign(triples.begin(), triples.end());
  snap.labels = resolve_labels(ids, options.dump, options.language, options.stream);

  json props = json::array();
  for (const auto& p : options.properties) props.push_back(p.str());
  snap.metadata = {
      {"source", options.dump.filename().string()},
      // The dump date and claim-rank policy of the original data are not
      // recoverable; the content hash identifies this snapshot's input.
      {"dump_date", "unknown"},
      {"rank_policy", "all non-deprecated claims, qualifiers ignored"},
      {"language", options.language},
      {"properties", props},
      {"triples", snap.triples.size()},
      {"labeled_entities", snap.labels.labels.size()},
      {"missing_labels", snap.labels.misses.size()},
      {"stream", stats_json(triple_stats)},
      {"tool_version", SPECBENCH_VERSION}};

  if (summary != nullptr) {
    summary->triple_pass = triple_stats;
    summary->triples = snap.triples.size();
    summary->labeled = snap.labels.labels.size();
    summary->missing_labels = snap.labels.misses.size();
  }
  return snap;
}

}  // namespace specbench
