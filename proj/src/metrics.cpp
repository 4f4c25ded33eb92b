#include "specbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <spdlog/spdlog.h>

#include "specbench/error.hpp"

namespace specbench {

using nlohmann::json;

namespace {

json optional_json(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> optional_double(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::optional<bool> optional_bool(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<bool>();
}

std::string join_key(const std::string& task, const std::string& s,
                     const std::string& f, const std::string& c) {
  return task + '\t' + s + '\t' + f + '\t' + c;
}

}  // namespace

std::string TripletOutcome::key() const {
  return join_key(task_id, subject_id, fine_id, coarse_id);
}

json to_json(const TripletOutcome& o) {
  json j{{"model_id", o.model_id},
         {"task_id", o.task_id},
         {"subject_id", o.subject_id},
         {"fine_id", o.fine_id},
         {"coarse_id", o.coarse_id},
         {"mode", to_string(o.mode)},
         {"c_fine", optional_json(o.c_fine)},
         {"c_coarse", optional_json(o.c_coarse)}};
  if (o.fine_in_topk) j["fine_in_topk"] = *o.fine_in_topk;
  if (o.coarse_in_topk) j["coarse_in_topk"] = *o.coarse_in_topk;
  if (!o.error.empty()) j["error"] = o.error;
  return j;
}

TripletOutcome outcome_from_json(const json& j) {
  TripletOutcome o;
  o.model_id = j.at("model_id").get<std::string>();
  o.task_id = j.at("task_id").get<std::string>();
  o.subject_id = j.at("subject_id").get<std::string>();
  o.fine_id = j.at("fine_id").get<std::string>();
  o.coarse_id = j.at("coarse_id").get<std::string>();
  o.mode = parse_prompt_mode(j.at("mode").get<std::string>());
  o.c_fine = optional_double(j, "c_fine");
  o.c_coarse = optional_double(j, "c_coarse");
  o.fine_in_topk = optional_bool(j, "fine_in_topk");
  o.coarse_in_topk = optional_bool(j, "coarse_in_topk");
  o.error = j.value("error", "");
  return o;
}

std::string RelatednessOutcome::key() const {
  return join_key(task_id, subject_id, fine_id, coarse_id);
}

json to_json(const RelatednessOutcome& o) {
  return {{"model_id", o.model_id},     {"task_id", o.task_id},
          {"subject_id", o.subject_id}, {"fine_id", o.fine_id},
          {"coarse_id", o.coarse_id},   {"cos_fine", optional_json(o.cos_fine)},
          {"cos_coarse", optional_json(o.cos_coarse)}};
}

RelatednessOutcome relatedness_outcome_from_json(const json& j) {
  RelatednessOutcome o;
  o.model_id = j.at("model_id").get<std::string>();
  o.task_id = j.at("task_id").get<std::string>();
  o.subject_id = j.at("subject_id").get<std::string>();
  o.fine_id = j.at("fine_id").get<std::string>();
  o.coarse_id = j.at("coarse_id").get<std::string>();
  o.cos_fine = optional_double(j, "cos_fine");
  o.cos_coarse = optional_double(j, "cos_coarse");
  return o;
}

RelatednessOutcome relatedness_outcome(const std::string& model_id,
                                       const SpecificityTriplet& t,
                                       const PhraseEmbedding& subject,
                                       const PhraseEmbedding& fine,
                                       const PhraseEmbedding& coarse) {
  RelatednessOutcome o{model_id,          t.task_id,         t.subject.id.str(),
                       t.fine.id.str(),   t.coarse.id.str(), std::nullopt,
                       std::nullopt};
  if (!subject.degenerate() && !fine.degenerate() && !coarse.degenerate()) {
    o.cos_fine = cosine(subject, fine);
    o.cos_coarse = cosine(subject, coarse);
  }
  return o;
}

double Rate::value() const {
  if (n == 0) throw MetricError("rate over zero items is undefined");
  return static_cast<double>(favorable) / static_cast<double>(n);
}

json to_json(const Rate& r) {
  json j{{"favorable", r.favorable}, {"n", r.n}, {"excluded", r.excluded}};
  j["value"] = r.defined() ? json(r.value()) : json(nullptr);
  return j;
}

Rate rate_from_json(const json& j) {
  return {j.at("favorable").get<std::size_t>(), j.at("n").get<std::size_t>(),
          j.value("excluded", std::size_t{0})};
}

Rate specificity_pr(std::span<const TripletOutcome> outcomes) {
  if (outcomes.empty()) throw MetricError("p_r of an empty outcome list");
  Rate r;
  for (const auto& o : outcomes) {
    if (o.errored()) {
      ++r.excluded;
      continue;
    }
    ++r.n;
    if (o.fine_wins()) ++r.favorable;
  }
  if (r.excluded) {
    spdlog::debug("p_r: {} of {} outcomes errored and were excluded", r.excluded,
                  outcomes.size());
  }
  return r;
}

Rate naturalness_pr(std::span<const TripletOutcome> outcomes) {
  for (const auto& o : outcomes) {
    if (!is_naturalness(o.mode)) {
      throw MetricError("naturalness over a non-naturalness outcome (mode " +
                        std::string(to_string(o.mode)) + ")");
    }
  }
  return specificity_pr(outcomes);
}

Rate acc_at_k(std::span<const TripletOutcome> outcomes, bool fine_only) {
  if (outcomes.empty()) throw MetricError("Acc@k of an empty outcome list");
  Rate r;
  for (const auto& o : outcomes) {
    if (!o.error.empty() || !o.fine_in_topk || (!fine_only && !o.coarse_in_topk)) {
      ++r.excluded;
      continue;
    }
    r.n += 1;
    if (*o.fine_in_topk) ++r.favorable;
    if (!fine_only) {
      r.n += 1;
      if (*o.coarse_in_topk) ++r.favorable;
    }
  }
  return r;
}

Rate relatedness_pr(std::span<const RelatednessOutcome> outcomes) {
  Rate r;
  for (const auto& o : outcomes) {
    if (o.degenerate()) {
      ++r.excluded;
      continue;
    }
    ++r.n;
    if (*o.cos_fine > *o.cos_coarse) ++r.favorable;
  }
  if (r.n == 0) throw MetricError("relatedness undefined: every triplet was excluded");
  return r;
}

Rate freq_pr(std::span<const SpecificityTriplet> triplets, const FrequencyTable& table) {
  if (triplets.empty()) throw MetricError("Freq p_r of an empty triplet list");
  Rate r;
  for (const auto& t : triplets) {
    ++r.n;
    if (freq_preference(t, table) == FreqChoice::fine) ++r.favorable;
  }
  return r;
}

bool ModelMatrix::complete() const {
  if (values.size() != rows.size()) return false;
  for (const auto& row : values) {
    if (row.size() != columns.size()) return false;
    for (const auto& v : row) {
      if (!v) return false;
    }
  }
  return true;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw MetricError("Pearson needs two equal-length series of at least 2 values");
  }
  const auto n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

PearsonResult pairwise_pearson(const ModelMatrix& m) {
  if (m.rows.size() < 2 || m.columns.size() < 2) {
    throw MetricError("pairwise Pearson needs at least 2 rows and 2 columns");
  }
  if (!m.complete()) throw MetricError("pairwise Pearson needs a complete matrix");
  std::vector<std::vector<double>> rows;
  for (const auto& row : m.values) {
    std::vector<double> r;
    for (const auto& v : row) r.push_back(*v);
    rows.push_back(std::move(r));
  }
  PearsonResult out;
  double sum = 0;
  std::size_t defined = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      auto r = pearson(rows[i], rows[j]);
      if (r) {
        sum += *r;
        ++defined;
      } else {
        ++out.excluded;
        spdlog::warn("Pearson({}, {}) undefined: zero variance; pair excluded",
                     m.rows[i], m.rows[j]);
      }
      out.pairs.push_back({m.rows[i], m.rows[j], r});
    }
  }
  if (defined == 0) throw MetricError("every Pearson pair has a zero-variance row");
  out.average = sum / static_cast<double>(defined);
  return out;
}

json to_json(const PearsonResult& p) {
  json pairs = json::array();
  for (const auto& q : p.pairs) {
    pairs.push_back({{"a", q.a}, {"b", q.b}, {"r", optional_json(q.r)}});
  }
  return {{"average", p.average}, {"excluded", p.excluded}, {"pairs", std::move(pairs)}};
}

PearsonResult pearson_from_json(const json& j) {
  PearsonResult p;
  p.average = j.at("average").get<double>();
  p.excluded = j.value("excluded", std::size_t{0});
  for (const auto& q : j.at("pairs")) {
    p.pairs.push_back({q.at("a").get<std::string>(), q.at("b").get<std::string>(),
                       optional_double(q, "r")});
  }
  return p;
}

double correctness_delta(double acc_base, double acc_variant) {
  return (acc_variant - acc_base) * 100.0;
}

double correctness_delta(std::span<const TripletOutcome> base,
                         std::span<const TripletOutcome> variant) {
  std::set<std::string> a, b;
  for (const auto& o : base) a.insert(o.key());
  for (const auto& o : variant) b.insert(o.key());
  if (a != b) throw MetricError("correctness delta over different triplet sets");
  return correctness_delta(acc_at_k(base, true).value(), acc_at_k(variant, true).value());
}

double unweighted_mean(std::span<const double> values) {
  if (values.empty()) throw MetricError("mean of no values");
  double s = 0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

}  // namespace specbench
