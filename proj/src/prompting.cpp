#include "specbench/prompting.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <random>

#include "specbench/error.hpp"
#include "specbench/util.hpp"

namespace specbench {

using nlohmann::json;

std::string_view to_string(PromptMode mode) {
  switch (mode) {
    case PromptMode::vanilla: return "vanilla";
    case PromptMode::fewshot: return "fewshot";
    case PromptMode::cascade: return "cascade";
    case PromptMode::naturalness: return "naturalness";
    case PromptMode::naturalness_fewshot: return "naturalness_fewshot";
    case PromptMode::naturalness_cascade: return "naturalness_cascade";
  }
  return "?";
}

PromptMode parse_prompt_mode(std::string_view name) {
  for (auto m : {PromptMode::vanilla, PromptMode::fewshot, PromptMode::cascade,
                 PromptMode::naturalness, PromptMode::naturalness_fewshot,
                 PromptMode::naturalness_cascade}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown prompt mode '" + std::string(name) + "'");
}

bool is_naturalness(PromptMode mode) {
  return mode == PromptMode::naturalness ||
         mode == PromptMode::naturalness_fewshot ||
         mode == PromptMode::naturalness_cascade;
}

PromptMode naturalness_of(PromptMode base) {
  switch (base_of(base)) {
    case PromptMode::fewshot: return PromptMode::naturalness_fewshot;
    case PromptMode::cascade: return PromptMode::naturalness_cascade;
    default: return PromptMode::naturalness;
  }
}

PromptMode base_of(PromptMode mode) {
  switch (mode) {
    case PromptMode::naturalness: return PromptMode::vanilla;
    case PromptMode::naturalness_fewshot: return PromptMode::fewshot;
    case PromptMode::naturalness_cascade: return PromptMode::cascade;
    default: return mode;
  }
}

std::string_view to_string(SlotRole role) {
  switch (role) {
    case SlotRole::object: return "object";
    case SlotRole::object_coarse: return "object_coarse";
    case SlotRole::subject: return "subject";
  }
  return "?";
}

namespace {

constexpr std::string_view kSubject = "[X]";
constexpr std::string_view kObject = "[Y]";
constexpr std::string_view kCascadeObject = "[Y2]";

std::size_t count_of(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

// Incrementally assembles literal pieces and slots.
class ProbeBuilder {
 public:
  ProbeBuilder() : pieces_(1) {}

  void text(std::string_view s) { pieces_.back().append(s); }
  void slot(SlotRole role) {
    slots_.push_back(role);
    pieces_.emplace_back();
  }
  std::size_t slot_count() const { return slots_.size(); }

  RenderedProbe finish(PromptMode mode, std::size_t target) {
    RenderedProbe p;
    p.pieces = std::move(pieces_);
    p.slots = std::move(slots_);
    p.mode = mode;
    p.target_slot = target;
    return p;
  }

 private:
  std::vector<std::string> pieces_;
  std::vector<SlotRole> slots_;
};

// How [X] and [Y] are rendered while walking a template.
struct Fill {
  std::optional<std::string_view> subject;  // nullopt -> subject mask slot
  std::optional<std::string_view> object;   // nullopt -> object mask slot
};

// Emits `tpl_text` into the builder, substituting placeholders. Returns the
// slot index of the object slot, if one was emitted.
std::optional<std::size_t> emit(ProbeBuilder& b, std::string_view tpl_text,
                                const Fill& fill, SlotRole object_role) {
  std::optional<std::size_t> object_slot;
  std::size_t pos = 0;
  while (pos < tpl_text.size()) {
    const auto next = tpl_text.find('[', pos);
    if (next == std::string_view::npos) {
      b.text(tpl_text.substr(pos));
      break;
    }
    b.text(tpl_text.substr(pos, next - pos));
    const auto rest = tpl_text.substr(next);
    if (rest.starts_with(kSubject)) {
      if (fill.subject) {
        b.text(*fill.subject);
      } else {
        b.slot(SlotRole::subject);
      }
      pos = next + kSubject.size();
    } else if (rest.starts_with(kCascadeObject) || rest.starts_with(kObject)) {
      const bool cascade = rest.starts_with(kCascadeObject);
      if (!cascade && fill.object) {
        b.text(*fill.object);
      } else {
        if (!cascade) object_slot = b.slot_count();
        b.slot(cascade ? SlotRole::object_coarse : object_role);
      }
      pos = next + (cascade ? kCascadeObject.size() : kObject.size());
    } else {
      b.text("[");
      pos = next + 1;
    }
  }
  return object_slot;
}

// Splits the body into everything before its terminal punctuation and the
// punctuation itself.
std::pair<std::string_view, std::string_view> split_terminal(std::string_view body) {
  auto end = body.size();
  while (end > 0 && (body[end - 1] == '.' || body[end - 1] == '!' ||
                     body[end - 1] == '?')) {
    --end;
  }
  return {body.substr(0, end), body.substr(end)};
}

void emit_demos(ProbeBuilder& b, const PromptTemplate& tpl, const DemoSet& demos,
                std::string_view separator) {
  for (const auto& d : demos.demos) {
    emit(b, tpl.body, Fill{d.subject_label, d.fine_label}, SlotRole::object);
    b.text(separator);
  }
}

void check_demos(const DemoSet& demos, std::optional<std::string_view> subject) {
  if (demos.k() == 0) throw ConfigError("few-shot prompting needs at least one demo");
  if (!subject) return;
  for (const auto& d : demos.demos) {
    if (d.subject_label == *subject) {
      throw ConfigError("demo subject equals the query subject '" +
                        std::string(*subject) + "'");
    }
  }
}

RenderedProbe render(const PromptTemplate& tpl, PromptMode mode,
                     std::optional<std::string_view> subject,
                     const DemoSet* demos, std::string_view separator) {
  tpl.validate();
  const auto base = base_of(mode);
  ProbeBuilder b;
  if (base == PromptMode::fewshot) {
    if (demos == nullptr) throw ConfigError("few-shot prompting needs demos");
    check_demos(*demos, subject);
    emit_demos(b, tpl, *demos, separator);
  }
  std::optional<std::size_t> target;
  if (base == PromptMode::cascade) {
    if (!tpl.has_cascade()) {
      throw ConfigError("template " + tpl.task_id + " has no cascade clause");
    }
    const auto [head, punct] = split_terminal(tpl.body);
    target = emit(b, head, Fill{subject, std::nullopt}, SlotRole::object);
    emit(b, tpl.cascade_suffix, Fill{subject, std::nullopt}, SlotRole::object);
    b.text(punct);
  } else {
    target = emit(b, tpl.body, Fill{subject, std::nullopt}, SlotRole::object);
  }
  return b.finish(mode, *target);
}

}  // namespace

void PromptTemplate::validate() const {
  if (count_of(body, kSubject) != 1) {
    throw ConfigError("template " + task_id + ": body needs exactly one [X]");
  }
  if (count_of(body, kObject) != 1) {
    throw ConfigError("template " + task_id + ": body needs exactly one [Y]");
  }
  if (count_of(body, kCascadeObject) != 0) {
    throw ConfigError("template " + task_id + ": [Y2] belongs in the cascade clause");
  }
  if (has_cascade()) {
    if (count_of(cascade_suffix, kCascadeObject) != 1) {
      throw ConfigError("template " + task_id +
                        ": cascade clause needs exactly one [Y2]");
    }
    if (!cascade_suffix.starts_with(", which")) {
      throw ConfigError("template " + task_id +
                        ": cascade clause must start with \", which\"");
    }
    if (count_of(cascade_suffix, kSubject) != 0 ||
        count_of(cascade_suffix, kObject) != 0) {
      throw ConfigError("template " + task_id +
                        ": cascade clause may only use [Y2]");
    }
  }
}

TemplateCatalog TemplateCatalog::defaults() {
  TemplateCatalog c;
  c.add({"P19", "[X] was born in [Y].", ", which is located in [Y2]"});
  c.add({"P106", "[X] is a [Y] by profession.", ", which belongs to [Y2]"});
  c.add({"P131", "[X] is located in [Y].", ", which is located in [Y2]"});
  c.add({"P279", "[X] is a subclass of [Y].", ", which is a subclass of [Y2]"});
  c.add({"P361", "[X] is part of [Y].", ", which is part of [Y2]"});
  return c;
}

TemplateCatalog TemplateCatalog::from_json(const json& j) {
  if (!j.is_array()) throw ConfigError("template catalog must be a JSON array");
  TemplateCatalog c;
  for (const auto& item : j) {
    PromptTemplate t;
    try {
      t.task_id = item.at("task_id").get<std::string>();
      t.body = item.at("body").get<std::string>();
      t.cascade_suffix = item.value("cascade_suffix", "");
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad template record: ") + e.what());
    }
    if (c.contains(t.task_id)) {
      throw ConfigError("duplicate template for " + t.task_id);
    }
    c.add(std::move(t));
  }
  return c;
}

TemplateCatalog TemplateCatalog::load(const std::filesystem::path& path) {
  try {
    return from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse template catalog " + path.string() + ": " +
                      e.what());
  }
}

json TemplateCatalog::to_json() const {
  json out = json::array();
  for (const auto& [id, t] : templates_) {
    out.push_back({{"task_id", t.task_id},
                   {"body", t.body},
                   {"cascade_suffix", t.cascade_suffix}});
  }
  return out;
}

void TemplateCatalog::add(PromptTemplate tpl) {
  tpl.validate();
  auto id = tpl.task_id;
  templates_.insert_or_assign(std::move(id), std::move(tpl));
}

const PromptTemplate& TemplateCatalog::at(const std::string& template_id) const {
  const auto it = templates_.find(template_id);
  if (it == templates_.end()) {
    throw ConfigError("no prompt template for " + template_id);
  }
  return it->second;
}

bool TemplateCatalog::contains(const std::string& template_id) const {
  return templates_.contains(template_id);
}

void TemplateCatalog::require_coverage(
    std::span<const RelationSpec> relations) const {
  for (const auto& r : relations) {
    if (!contains(r.template_id)) {
      throw ConfigError("relation " + r.task_id + " references missing template " +
                        r.template_id);
    }
  }
}

std::string RenderedProbe::text(std::string_view mask) const {
  std::string out = pieces.front();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    out.append(mask);
    out.append(pieces[i + 1]);
  }
  return out;
}

RenderedProbe render_vanilla(const PromptTemplate& tpl,
                             std::string_view subject_label) {
  return render(tpl, PromptMode::vanilla, subject_label, nullptr, " ");
}

RenderedProbe render_fewshot(const PromptTemplate& tpl,
                             std::string_view subject_label,
                             const DemoSet& demos, std::string_view separator) {
  return render(tpl, PromptMode::fewshot, subject_label, &demos, separator);
}

RenderedProbe render_cascade(const PromptTemplate& tpl,
                             std::string_view subject_label) {
  return render(tpl, PromptMode::cascade, subject_label, nullptr, " ");
}

RenderedProbe render_naturalness(const PromptTemplate& tpl, PromptMode base,
                                 const DemoSet* demos,
                                 std::string_view separator) {
  return render(tpl, naturalness_of(base), std::nullopt, demos, separator);
}

RenderedProbe render_probe(const PromptTemplate& tpl, PromptMode mode,
                           std::string_view subject_label, const DemoSet* demos,
                           std::string_view separator) {
  if (is_naturalness(mode)) {
    return render_naturalness(tpl, base_of(mode), demos, separator);
  }
  return render(tpl, mode, subject_label, demos, separator);
}

DemoSet select_demos(std::span<const SpecificityTriplet> pool,
                     const SpecificityTriplet& query, std::size_t k,
                     std::uint64_t run_seed) {
  if (k == 0) throw ConfigError("few-shot prompting needs k >= 1");
  // Most specific answer per subject, ties by id.
  std::map<EntityId, const SpecificityTriplet*> best;
  for (const auto& t : pool) {
    if (t.subject.id == query.subject.id) continue;
    if (t.subject.label == query.subject.label) continue;
    if (t.fine.label == query.fine.label || t.fine.label == query.coarse.label) {
      continue;
    }
    auto& slot = best[t.subject.id];
    if (slot == nullptr ||
        std::tie(t.d_fine, t.fine.id) < std::tie(slot->d_fine, slot->fine.id)) {
      slot = &t;
    }
  }
  if (best.size() < k) {
    throw ConfigError("demo pool too small for " + query.task_id + ": need " +
                      std::to_string(k) + " demos, " + std::to_string(best.size()) +
                      " available");
  }
  std::vector<const SpecificityTriplet*> eligible;
  eligible.reserve(best.size());
  for (const auto& [id, t] : best) eligible.push_back(t);

  std::mt19937_64 rng(mix64(run_seed ^ fnv1a64(query.subject.id.str())));
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + bounded_draw(rng, eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
  }
  DemoSet set;
  set.task_id = query.task_id;
  for (std::size_t i = 0; i < k; ++i) {
    set.demos.push_back({eligible[i]->subject.id.str(), eligible[i]->subject.label,
                         eligible[i]->fine.label});
  }
  return set;
}

namespace {

bool sentence_start(const std::string& before) {
  const auto t = trim(before);
  return t.empty() || t.back() == '.' || t.back() == '!' || t.back() == '?';
}

}  // namespace

SerializedProbe serialize(const RenderedProbe& probe, const MaskStyle& style) {
  SerializedProbe out;
  out.text = probe.pieces.front();
  std::size_t masks = 0;
  bool capitalize_next = false;
  for (std::size_t i = 0; i < probe.slots.size(); ++i) {
    const bool filled =
        probe.slots[i] == SlotRole::subject && style.subject_filler.has_value();
    std::string piece = probe.pieces[i + 1];
    if (filled) {
      if (style.subject_filler->empty()) {
        capitalize_next = sentence_start(out.text);
        if (!piece.empty() && piece.front() == ' ' &&
            (out.text.empty() || out.text.back() == ' ')) {
          piece.erase(0, 1);
        }
      } else {
        out.text.append(*style.subject_filler);
      }
    } else {
      if (i == probe.target_slot) out.mask_index = masks;
      out.mask_offsets.push_back(out.text.size());
      out.text.append(style.mask_literal);
      ++masks;
    }
    if (capitalize_next && !piece.empty()) {
      piece[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(piece[0])));
      capitalize_next = false;
    }
    out.text.append(piece);
  }
  return out;
}

std::vector<std::size_t> find_mask_offsets(std::string_view text,
                                           std::string_view mask_literal) {
  std::vector<std::size_t> out;
  if (mask_literal.empty()) return out;
  for (auto pos = text.find(mask_literal); pos != std::string_view::npos;
       pos = text.find(mask_literal, pos + mask_literal.size())) {
    out.push_back(pos);
  }
  return out;
}

json probe_dump_record(const std::string& task_id, const std::string& subject_id,
                       const RenderedProbe& probe, const MaskStyle& style) {
  const auto s = serialize(probe, style);
  json slots = json::array();
  std::size_t m = 0;
  for (std::size_t i = 0; i < probe.slots.size(); ++i) {
    json slot = {{"role", to_string(probe.slots[i])}};
    const bool filled =
        probe.slots[i] == SlotRole::subject && style.subject_filler.has_value();
    if (filled) {
      slot["filled"] = *style.subject_filler;
    } else {
      slot["offset"] = s.mask_offsets[m++];
    }
    slots.push_back(std::move(slot));
  }
  return {{"task_id", task_id}, {"subject_id", subject_id},
          {"mode", to_string(probe.mode)}, {"text", s.text},
          {"mask_index", s.mask_index}, {"target_slot", probe.target_slot},
          {"slots", slots}};
}

}  // namespace specbench
