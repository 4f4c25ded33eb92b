// Python bindings. Structured values cross the boundary as JSON text; the
// Python package decodes them.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "specbench/error.hpp"
#include "specbench/graph_paths.hpp"
#include "specbench/metrics.hpp"
#include "specbench/pipeline.hpp"
#include "specbench/prompting.hpp"
#include "specbench/report.hpp"

namespace py = pybind11;
using namespace specbench;

namespace {

std::string render(const std::string& task_id, const std::string& mode, const std::string& subject,
                   const std::vector<std::pair<std::string, std::string>>& demos,
                   const std::string& separator) {
  const auto catalog = TemplateCatalog::defaults();
  DemoSet set{task_id, {}};
  for (std::size_t i = 0; i < demos.size(); ++i) {
    set.demos.push_back({"demo" + std::to_string(i), demos[i].first, demos[i].second});
  }
  const auto m = parse_prompt_mode(mode);
  const auto probe = render_probe(catalog.at(task_id), m, subject,
                                  set.demos.empty() ? nullptr : &set, separator);
  return probe.text();
}

py::dict rate_dict(const Rate& r) {
  py::dict d;
  d["favorable"] = r.favorable;
  d["n"] = r.n;
  d["excluded"] = r.excluded;
  d["value"] = r.defined() ? py::cast(r.value()) : py::none();
  return d;
}

py::dict pr(const std::vector<std::pair<std::optional<double>, std::optional<double>>>& pairs) {
  std::vector<TripletOutcome> v(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    v[i].subject_id = std::to_string(i);
    v[i].c_fine = pairs[i].first;
    v[i].c_coarse = pairs[i].second;
  }
  return rate_dict(specificity_pr(v));
}

std::vector<std::vector<std::string>> paths(
    const std::vector<std::tuple<std::string, std::string, std::string>>& triples,
    const std::string& head, const std::string& tail, const std::string& subject, int max_len) {
  std::vector<Triple> ts;
  for (const auto& [s, p, o] : triples) ts.push_back({EntityId(s), EntityId(p), EntityId(o)});
  const GraphSet gs(ts, std::vector<EntityId>{EntityId(head), EntityId(tail)});
  const RelationSpec spec{"t", "t", EntityId(head), EntityId(tail), "t"};
  std::vector<std::vector<std::string>> out;
  for (const auto& p : enumerate_paths(gs, spec, EntityId(subject), max_len)) {
    std::vector<std::string> ids;
    for (const auto& n : p.nodes) ids.push_back(n.str());
    out.push_back(std::move(ids));
  }
  return out;
}

std::map<std::string, std::pair<std::int64_t, std::int64_t>> distances(
    const std::vector<std::tuple<std::string, std::string, std::string>>& triples,
    const std::string& head, const std::string& tail, const std::string& subject, int max_len) {
  std::vector<Triple> ts;
  for (const auto& [s, p, o] : triples) ts.push_back({EntityId(s), EntityId(p), EntityId(o)});
  const GraphSet gs(ts, std::vector<EntityId>{EntityId(head), EntityId(tail)});
  const RelationSpec spec{"t", "t", EntityId(head), EntityId(tail), "t"};
  std::map<std::string, std::pair<std::int64_t, std::int64_t>> out;
  for (const auto& [o, r] : average_distances(enumerate_paths(gs, spec, EntityId(subject), max_len)).entries) {
    out[o.str()] = {r.numerator(), r.denominator()};
  }
  return out;
}

py::dict pearson_matrix(const std::map<std::string, std::vector<double>>& rows) {
  ModelMatrix m;
  for (const auto& [name, values] : rows) {
    m.rows.push_back(name);
    m.values.emplace_back(values.begin(), values.end());
    if (m.columns.empty()) {
      for (std::size_t i = 0; i < values.size(); ++i) m.columns.push_back(std::to_string(i));
    }
  }
  const auto r = pairwise_pearson(m);
  py::dict d;
  d["average"] = r.average;
  d["excluded"] = r.excluded;
  py::list pairs;
  for (const auto& p : r.pairs) pairs.append(py::make_tuple(p.a, p.b, p.r ? py::cast(*p.r) : py::none()));
  d["pairs"] = pairs;
  return d;
}

std::string run(const std::filesystem::path& config, const std::optional<std::filesystem::path>& out,
                bool force) {
  auto cfg = RunConfig::load(config);
  if (out) cfg.out = *out;
  cfg.apply_env_overrides();
  Pipeline p(cfg);
  py::gil_scoped_release release;
  return p.run_all(force).to_json().dump();
}

std::string report_text(const std::string& report_json) {
  return MetricReport::from_json(nlohmann::json::parse(report_json)).to_text();
}

}  // namespace

PYBIND11_MODULE(_specbench, m) {
  m.doc() = "Specificity benchmark core";
  m.attr("__version__") = SPECBENCH_VERSION;

  // Translators run newest first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<MetricError>(m, "MetricError", PyExc_ValueError);
  py::register_exception<StageError>(m, "StageError", PyExc_RuntimeError);

  m.def("render_prompt", &render, py::arg("task_id"), py::arg("mode"), py::arg("subject"),
        py::arg("demos") = std::vector<std::pair<std::string, std::string>>{},
        py::arg("separator") = " ");
  m.def("specificity_pr", &pr, py::arg("pairs"));
  m.def("enumerate_paths", &paths, py::arg("triples"), py::arg("head"), py::arg("tail"),
        py::arg("subject"), py::arg("max_len") = 5);
  m.def("average_distances", &distances, py::arg("triples"), py::arg("head"), py::arg("tail"),
        py::arg("subject"), py::arg("max_len") = 5);
  m.def("pairwise_pearson", &pearson_matrix, py::arg("rows"));
  m.def("run_pipeline", &run, py::arg("config"), py::arg("out") = std::nullopt,
        py::arg("force") = false);
  m.def("report_text", &report_text, py::arg("report_json"));
}
