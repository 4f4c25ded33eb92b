#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "specbench/graph_paths.hpp"
#include "specbench/kb_ingest.hpp"

namespace specbench {

enum class PromptMode {
  vanilla,
  fewshot,
  cascade,
  naturalness,
  naturalness_fewshot,
  naturalness_cascade,
};

std::string_view to_string(PromptMode mode);
PromptMode parse_prompt_mode(std::string_view name);
bool is_naturalness(PromptMode mode);
// vanilla -> naturalness, fewshot -> naturalness_fewshot, ...
PromptMode naturalness_of(PromptMode base);
// The inverse; identity on base modes.
PromptMode base_of(PromptMode mode);

enum class SlotRole { object, object_coarse, subject };

std::string_view to_string(SlotRole role);

// A cloze template. `body` holds one [X] (subject) and one [Y] (object);
// `cascade_suffix` holds one [Y2] and starts with ", which".
struct PromptTemplate {
  std::string task_id;
  std::string body;
  std::string cascade_suffix;

  bool has_cascade() const { return !cascade_suffix.empty(); }
  // Throws ConfigError describing the first violated rule.
  void validate() const;
};

class TemplateCatalog {
 public:
  // The five relation templates with their cascade clauses.
  static TemplateCatalog defaults();
  // JSON array of {task_id, body, cascade_suffix}.
  static TemplateCatalog load(const std::filesystem::path& path);
  static TemplateCatalog from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  void add(PromptTemplate tpl);
  const PromptTemplate& at(const std::string& template_id) const;
  bool contains(const std::string& template_id) const;
  std::size_t size() const { return templates_.size(); }

  // Every relation must resolve to a template; throws ConfigError otherwise.
  void require_coverage(std::span<const RelationSpec> relations) const;

 private:
  std::map<std::string, PromptTemplate> templates_;
};

// A probe is literal text interleaved with mask slots. Slots stay positional
// until serialization because the mask literal depends on the backend.
struct RenderedProbe {
  std::vector<std::string> pieces;  // slots.size() + 1 literal pieces
  std::vector<SlotRole> slots;
  PromptMode mode = PromptMode::vanilla;
  std::size_t target_slot = 0;

  // Text with every slot shown as `mask`.
  std::string text(std::string_view mask = "[MASK]") const;
};

struct Demo {
  std::string subject_id;
  std::string subject_label;
  std::string fine_label;
};

struct DemoSet {
  std::string task_id;
  std::vector<Demo> demos;

  std::size_t k() const { return demos.size(); }
};

RenderedProbe render_vanilla(const PromptTemplate& tpl,
                             std::string_view subject_label);

// Demonstrations are the template filled with each demo's fine answer and
// joined by `separator`, followed by the vanilla query.
RenderedProbe render_fewshot(const PromptTemplate& tpl,
                             std::string_view subject_label,
                             const DemoSet& demos,
                             std::string_view separator = " ");

// Body with the object masked, then the cascade clause with a second mask.
// The first mask is the scored one.
RenderedProbe render_cascade(const PromptTemplate& tpl,
                             std::string_view subject_label);

// Base rendering with the query subject turned into a mask slot; the object
// slot stays the target. Few-shot demos are left unmasked.
RenderedProbe render_naturalness(const PromptTemplate& tpl, PromptMode base,
                                 const DemoSet* demos = nullptr,
                                 std::string_view separator = " ");

// Dispatches on `mode`; `demos` is required for the few-shot modes.
RenderedProbe render_probe(const PromptTemplate& tpl, PromptMode mode,
                           std::string_view subject_label,
                           const DemoSet* demos = nullptr,
                           std::string_view separator = " ");

// Seeded uniform choice of k demonstrations from the relation's pool. The
// query subject, and any demo whose fine answer is one of the query's
// candidates, are excluded. One demo per subject.
DemoSet select_demos(std::span<const SpecificityTriplet> pool,
                     const SpecificityTriplet& query, std::size_t k,
                     std::uint64_t run_seed);

// How slots become text for one backend. With `subject_filler` set, subject
// slots are written as that text instead of a mask; an empty filler also
// re-capitalizes the sentence start it exposes.
struct MaskStyle {
  std::string mask_literal = "[MASK]";
  std::optional<std::string> subject_filler;
};

struct SerializedProbe {
  std::string text;
  std::size_t mask_index = 0;  // target slot among the masks in `text`
  std::vector<std::size_t> mask_offsets;
};

SerializedProbe serialize(const RenderedProbe& probe, const MaskStyle& style);

// Byte offsets of every occurrence of `mask_literal` in `text`.
std::vector<std::size_t> find_mask_offsets(std::string_view text,
                                           std::string_view mask_literal);

// One debug line: task, mode, text, slot roles and offsets.
nlohmann::json probe_dump_record(const std::string& task_id,
                                 const std::string& subject_id,
                                 const RenderedProbe& probe,
                                 const MaskStyle& style);

}  // namespace specbench
