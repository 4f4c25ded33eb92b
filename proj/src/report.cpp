#include "specbench/report.hpp"

#include <algorithm>
#include <functional>
#include <set>
#include <tuple>

#include <fmt/format.h>

#include "specbench/error.hpp"
#include "specbench/util.hpp"

namespace specbench {

using nlohmann::json;

namespace {

const std::vector<std::string>& standard_order() {
  static const std::vector<std::string> order{"birthplace", "occupation", "location",
                                              "subclass-of", "part-of"};
  return order;
}

const std::vector<PromptMode>& base_modes() {
  static const std::vector<PromptMode> modes{PromptMode::vanilla, PromptMode::fewshot,
                                             PromptMode::cascade};
  return modes;
}

std::string short_mode(std::string_view mode) {
  if (mode == "vanilla") return "VP";
  if (mode == "fewshot") return "FP";
  if (mode == "cascade") return "CP";
  return std::string(mode);
}

json optional_rate(const std::optional<Rate>& r) {
  return r ? to_json(*r) : json(nullptr);
}

std::optional<Rate> optional_rate_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return rate_from_json(j.at(key));
}

}  // namespace

std::vector<std::string> display_order(std::span<const RelationSpec> relations) {
  std::vector<std::string> out;
  for (const auto& name : standard_order()) {
    for (const auto& r : relations) {
      if (r.name == name) out.push_back(r.task_id);
    }
  }
  for (const auto& r : relations) {
    if (std::find(out.begin(), out.end(), r.task_id) == out.end()) out.push_back(r.task_id);
  }
  return out;
}

MetricReport compute_report(const ReportInputs& in) {
  MetricReport rep;
  rep.tasks = display_order(in.relations);
  for (const auto& r : in.relations) rep.names[r.task_id] = r.name;
  rep.k = in.k;
  rep.models = in.models;
  std::set<std::string> known;
  for (const auto& m : in.models) known.insert(m.model_id);

  using Key = std::tuple<std::string, std::string, std::string>;
  std::map<Key, std::vector<TripletOutcome>> probes, natural;
  for (const auto& o : in.outcomes) {
    if (!known.contains(o.model_id)) {
      throw MetricError("outcome for unknown model '" + o.model_id + "'");
    }
    const Key key{o.model_id, std::string(to_string(base_of(o.mode))), o.task_id};
    (is_naturalness(o.mode) ? natural : probes)[key].push_back(o);
  }
  for (const auto& [key, list] : probes) {
    const auto& [model, mode, task] = key;
    RelationScore s;
    s.specificity = specificity_pr(list);
    const bool has_topk = std::any_of(list.begin(), list.end(),
                                      [](const TripletOutcome& o) { return o.fine_in_topk.has_value(); });
    if (has_topk) {
      s.acc_at_k = acc_at_k(list, false);
      s.acc_at_k_fine = acc_at_k(list, true);
    }
    rep.scores[model][mode][task] = s;
  }
  for (const auto& [key, list] : natural) {
    const auto& [model, mode, task] = key;
    auto& s = rep.scores[model][mode][task];
    s.naturalness = naturalness_pr(list);
  }

  std::map<std::pair<std::string, std::string>, std::vector<RelatednessOutcome>> related;
  for (const auto& o : in.relatedness) related[{o.model_id, o.task_id}].push_back(o);
  for (const auto& [key, list] : related) {
    Rate r;
    try {
      r = relatedness_pr(list);
    } catch (const MetricError&) {
      r = Rate{0, 0, list.size()};
    }
    rep.scores[key.first]["vanilla"][key.second].relatedness = r;
  }

  if (in.benchmark && in.frequency) {
    std::map<std::string, Rate> freq;
    for (const auto& [task, triplets] : in.benchmark->by_task) {
      if (!triplets.empty()) freq[task] = freq_pr(triplets, *in.frequency);
    }
    rep.freq = std::move(freq);
  }

  // Correctness change of each variant mode against vanilla, fine answers only.
  for (const auto& [key, list] : probes) {
    const auto& [model, mode, task] = key;
    if (mode == "vanilla") continue;
    const auto base = probes.find(Key{model, "vanilla", task});
    if (base == probes.end()) continue;
    const auto& s = rep.scores[model][mode][task];
    const auto& b = rep.scores[model]["vanilla"][task];
    if (!s.acc_at_k_fine || !b.acc_at_k_fine || !s.acc_at_k_fine->defined() ||
        !b.acc_at_k_fine->defined()) {
      continue;
    }
    rep.correctness[model][mode][task] = correctness_delta(base->second, list);
  }

  ModelMatrix matrix;
  matrix.columns = rep.tasks;
  for (const auto& m : rep.models) {
    const auto it = rep.scores.find(m.model_id);
    if (it == rep.scores.end()) continue;
    const auto vp = it->second.find("vanilla");
    if (vp == it->second.end()) continue;
    std::vector<std::optional<double>> row;
    for (const auto& task : rep.tasks) {
      const auto cell = vp->second.find(task);
      if (cell != vp->second.end() && cell->second.specificity.defined()) {
        row.push_back(cell->second.specificity.value());
      } else {
        row.push_back(std::nullopt);
      }
    }
    matrix.rows.push_back(m.model_id);
    matrix.values.push_back(std::move(row));
  }
  if (matrix.rows.size() >= 2 && matrix.columns.size() >= 2 && matrix.complete()) {
    try {
      rep.pearson = pairwise_pearson(matrix);
    } catch (const MetricError&) {
      rep.pearson.reset();
    }
  }
  return rep;
}

json MetricReport::to_json() const {
  json j;
  j["k"] = k;
  j["tasks"] = tasks;
  j["names"] = names;
  json models_j = json::array();
  for (const auto& m : models) {
    models_j.push_back({{"model_id", m.model_id}, {"family", specbench::to_string(m.family)}});
  }
  j["models"] = std::move(models_j);
  json scores_j = json::object();
  for (const auto& [model, modes] : scores) {
    for (const auto& [mode, tasks_map] : modes) {
      for (const auto& [task, s] : tasks_map) {
        scores_j[model][mode][task] = {
            {"specificity", specbench::to_json(s.specificity)},
            {"acc_at_k", optional_rate(s.acc_at_k)},
            {"acc_at_k_fine", optional_rate(s.acc_at_k_fine)},
            {"naturalness", optional_rate(s.naturalness)},
            {"relatedness", optional_rate(s.relatedness)}};
      }
    }
  }
  j["scores"] = std::move(scores_j);
  if (freq) {
    json f = json::object();
    for (const auto& [task, r] : *freq) f[task] = specbench::to_json(r);
    j["freq"] = std::move(f);
  } else {
    j["freq"] = nullptr;
  }
  j["pearson"] = pearson ? specbench::to_json(*pearson) : json(nullptr);
  j["correctness"] = correctness;
  return j;
}

MetricReport MetricReport::from_json(const json& j) {
  MetricReport r;
  try {
    r.k = j.at("k").get<std::size_t>();
    r.tasks = j.at("tasks").get<std::vector<std::string>>();
    r.names = j.at("names").get<std::map<std::string, std::string>>();
    for (const auto& m : j.at("models")) {
      r.models.push_back({m.at("model_id").get<std::string>(),
                          parse_model_family(m.at("family").get<std::string>())});
    }
    for (const auto& [model, modes] : j.at("scores").items()) {
      for (const auto& [mode, tasks_map] : modes.items()) {
        for (const auto& [task, s] : tasks_map.items()) {
          RelationScore rs;
          rs.specificity = rate_from_json(s.at("specificity"));
          rs.acc_at_k = optional_rate_from(s, "acc_at_k");
          rs.acc_at_k_fine = optional_rate_from(s, "acc_at_k_fine");
          rs.naturalness = optional_rate_from(s, "naturalness");
          rs.relatedness = optional_rate_from(s, "relatedness");
          r.scores[model][mode][task] = rs;
        }
      }
    }
    if (!j.at("freq").is_null()) {
      std::map<std::string, Rate> f;
      for (const auto& [task, v] : j.at("freq").items()) f[task] = rate_from_json(v);
      r.freq = std::move(f);
    }
    if (!j.at("pearson").is_null()) r.pearson = pearson_from_json(j.at("pearson"));
    r.correctness = j.at("correctness")
                        .get<std::map<std::string,
                                      std::map<std::string, std::map<std::string, double>>>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed report: ") + e.what(), 0);
  }
  return r;
}

namespace {

struct Table {
  std::string title;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void render(std::string& out) const {
    out += "== " + title + " ==\n";
    std::vector<std::size_t> width(header.size(), 0);
    for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    }
    const auto line = [&](const std::vector<std::string>& cells) {
      std::string l;
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (c == 0) {
          l += fmt::format("{:<{}}", cells[c], width[c]);
        } else {
          l += fmt::format("  {:>{}}", cells[c], width[c]);
        }
      }
      while (!l.empty() && l.back() == ' ') l.pop_back();
      out += l + "\n";
    };
    line(header);
    for (const auto& row : rows) line(row);
    out += "\n";
  }
};

std::string pct(double v) { return fmt::format("{:.2f}", v * 100.0); }

std::string cell(const std::optional<Rate>& r) {
  return r && r->defined() ? pct(r->value()) : "--";
}

void omitted(std::string& out, const std::string& title, const std::string& reason) {
  out += "== " + title + " ==\n[omitted: " + reason + "]\n\n";
}

}  // namespace

std::string MetricReport::to_text() const {
  std::string out = "Specificity benchmark report\n";
  out += "models:";
  for (std::size_t i = 0; i < models.size(); ++i) {
    out += fmt::format("{} {} ({})", i ? "," : "", models[i].model_id,
                       specbench::to_string(models[i].family));
  }
  out += "\n\n";

  std::vector<std::string> header{"model"};
  for (const auto& t : tasks) {
    const auto it = names.find(t);
    header.push_back(it != names.end() ? it->second : t);
  }
  header.push_back("Average");

  // One row per (model, mode) for which `pick` yields a value somewhere.
  using Pick = std::function<std::optional<Rate>(const RelationScore&)>;
  const auto rate_rows = [&](const Pick& pick, bool mark_causal) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& m : models) {
      const auto mit = scores.find(m.model_id);
      if (mit == scores.end()) continue;
      for (const auto mode : base_modes()) {
        const auto sit = mit->second.find(std::string(specbench::to_string(mode)));
        if (sit == mit->second.end()) continue;
        std::vector<std::string> row{m.model_id + " " + short_mode(specbench::to_string(mode))};
        if (mark_causal && m.family == ModelFamily::causal) row[0] += " [approximate]";
        std::vector<double> values;
        bool any = false;
        for (const auto& t : tasks) {
          const auto c = sit->second.find(t);
          std::optional<Rate> r;
          if (c != sit->second.end()) r = pick(c->second);
          row.push_back(cell(r));
          if (r && r->defined()) {
            values.push_back(r->value());
            any = true;
          }
        }
        if (!any) continue;
        row.push_back(pct(unweighted_mean(values)));
        rows.push_back(std::move(row));
      }
    }
    return rows;
  };

  {
    Table t{"Specificity p_r (%)", header,
            rate_rows([](const RelationScore& s) { return std::optional<Rate>(s.specificity); }, false)};
    if (t.rows.empty()) {
      omitted(out, t.title, "no scored outcomes");
    } else {
      t.render(out);
    }
  }

  if (freq) {
    Table t{"Freq baseline p_r (%)", header, {}};
    std::vector<std::string> row{"Freq"};
    std::vector<double> values;
    for (const auto& task : tasks) {
      const auto it = freq->find(task);
      if (it != freq->end() && it->second.defined()) {
        row.push_back(pct(it->second.value()));
        values.push_back(it->second.value());
      } else {
        row.push_back("--");
      }
    }
    row.push_back(values.empty() ? "--" : pct(unweighted_mean(values)));
    t.rows.push_back(std::move(row));
    t.render(out);
  } else {
    omitted(out, "Freq baseline p_r (%)", "no frequency table configured");
  }

  {
    auto acc_header = header;
    acc_header.push_back("Pooled");
    Table t{fmt::format("Acc@{} (%), fine and coarse answers", k), acc_header,
            rate_rows([](const RelationScore& s) { return s.acc_at_k; }, false)};
    // Pooled column: all candidate occurrences across relations.
    std::size_t row_index = 0;
    for (const auto& m : models) {
      const auto mit = scores.find(m.model_id);
      if (mit == scores.end()) continue;
      for (const auto mode : base_modes()) {
        const auto sit = mit->second.find(std::string(specbench::to_string(mode)));
        if (sit == mit->second.end()) continue;
        Rate pooled;
        for (const auto& [task, s] : sit->second) {
          if (s.acc_at_k) {
            pooled.favorable += s.acc_at_k->favorable;
            pooled.n += s.acc_at_k->n;
          }
        }
        if (pooled.n == 0) continue;
        t.rows[row_index++].push_back(pct(pooled.value()));
      }
    }
    if (t.rows.empty()) {
      omitted(out, t.title, "top-k ranking disabled");
    } else {
      t.render(out);
    }
  }

  {
    Table t{"Naturalness and relatedness p_r (%)", header, {}};
    for (const auto& m : models) {
      const auto mit = scores.find(m.model_id);
      if (mit == scores.end()) continue;
      const auto vp = mit->second.find("vanilla");
      if (vp == mit->second.end()) continue;
      for (const auto* kind : {"naturalness", "relatedness"}) {
        const bool nat = std::string_view(kind) == "naturalness";
        std::vector<std::string> row{m.model_id + " " + kind};
        if (nat && m.family == ModelFamily::causal) row[0] += " [approximate]";
        std::vector<double> values;
        for (const auto& task : tasks) {
          const auto c = vp->second.find(task);
          std::optional<Rate> r;
          if (c != vp->second.end()) r = nat ? c->second.naturalness : c->second.relatedness;
          row.push_back(cell(r));
          if (r && r->defined()) values.push_back(r->value());
        }
        if (values.empty()) continue;
        row.push_back(pct(unweighted_mean(values)));
        t.rows.push_back(std::move(row));
      }
    }
    if (t.rows.empty()) {
      omitted(out, t.title, "naturalness and relatedness disabled");
    } else {
      t.render(out);
    }
  }

  {
    Table t{"Naturalness p_r (%) by prompting mode", header,
            rate_rows([](const RelationScore& s) { return s.naturalness; }, true)};
    if (t.rows.empty()) {
      omitted(out, t.title, "naturalness disabled");
    } else {
      t.render(out);
    }
  }

  {
    Table t{fmt::format("Change in fine-answer Acc@{} against VP (points)", k), header, {}};
    for (const auto& m : models) {
      const auto mit = correctness.find(m.model_id);
      if (mit == correctness.end()) continue;
      for (const auto mode : base_modes()) {
        const auto sit = mit->second.find(std::string(specbench::to_string(mode)));
        if (sit == mit->second.end()) continue;
        std::vector<std::string> row{m.model_id + " " + short_mode(specbench::to_string(mode))};
        std::vector<double> values;
        for (const auto& task : tasks) {
          const auto c = sit->second.find(task);
          if (c == sit->second.end()) {
            row.push_back("--");
          } else {
            row.push_back(fmt::format("{:+.2f}", c->second));
            values.push_back(c->second);
          }
        }
        row.push_back(values.empty() ? "--" : fmt::format("{:+.2f}", unweighted_mean(values)));
        t.rows.push_back(std::move(row));
      }
    }
    if (t.rows.empty()) {
      omitted(out, t.title, "needs VP and FP or CP with top-k ranking");
    } else {
      t.render(out);
    }
  }

  {
    Table t{"Scored triplets n (excluded)", header, {}};
    for (const auto& m : models) {
      const auto mit = scores.find(m.model_id);
      if (mit == scores.end()) continue;
      for (const auto mode : base_modes()) {
        const auto sit = mit->second.find(std::string(specbench::to_string(mode)));
        if (sit == mit->second.end()) continue;
        std::vector<std::string> row{m.model_id + " " + short_mode(specbench::to_string(mode))};
        std::size_t n = 0, x = 0;
        for (const auto& task : tasks) {
          const auto c = sit->second.find(task);
          if (c == sit->second.end()) {
            row.push_back("--");
            continue;
          }
          const auto& r = c->second.specificity;
          n += r.n;
          x += r.excluded;
          row.push_back(r.excluded ? fmt::format("{} ({})", r.n, r.excluded)
                                   : std::to_string(r.n));
        }
        row.push_back(x ? fmt::format("{} ({})", n, x) : std::to_string(n));
        t.rows.push_back(std::move(row));
      }
    }
    if (!t.rows.empty()) {
      t.header.back() = "Total";
      t.render(out);
    }
  }

  if (pearson) {
    out += "== Pairwise Pearson of VP p_r ==\n";
    for (const auto& p : pearson->pairs) {
      out += p.r ? fmt::format("{} ~ {}: {:.4f}\n", p.a, p.b, *p.r)
                 : fmt::format("{} ~ {}: undefined (zero variance)\n", p.a, p.b);
    }
    out += fmt::format("average: {:.4f} over {} pairs", pearson->average,
                       pearson->pairs.size() - pearson->excluded);
    if (pearson->excluded) out += fmt::format(", {} excluded", pearson->excluded);
    out += "\n";
  } else {
    omitted(out, "Pairwise Pearson of VP p_r",
            "needs at least two models with VP p_r on every relation");
  }
  return out;
}

void write_report(const std::filesystem::path& dir, const MetricReport& report) {
  write_file_atomic(dir / "report.json", report.to_json().dump(2) + "\n");
  write_file_atomic(dir / "report.txt", report.to_text());
}

}  // namespace specbench
