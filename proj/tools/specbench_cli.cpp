// specbench command line: run pipeline stages and fixture helpers.

#include <csignal>
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "specbench/backends.hpp"
#include "specbench/fixture_synth.hpp"
#include "specbench/pipeline.hpp"
#include "specbench/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace specbench;

namespace {

struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> sample_per_relation;
  bool force = false;
};

RunConfig load_config(const RunFlags& f) {
  auto cfg = RunConfig::load(f.config);
  if (f.seed) cfg.eval.seed = *f.seed;
  if (!f.out.empty()) cfg.out = f.out;
  if (f.sample_per_relation) cfg.sample_per_relation = *f.sample_per_relation;
  cfg.apply_env_overrides();
  return cfg;
}

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Seed for sampling and demo selection");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--sample-per-relation", f.sample_per_relation,
                  "Keep at most N triplets per relation (seeded)");
  cmd->add_flag("--force", f.force, "Re-run even when the manifest is current");
}

ScorerServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int serve_fixture(const std::string& fixture, const std::string& host, int port) {
  auto backend = FixtureBackend::load(fixture);
  ScorerServer server(backend);
  int bound = port;
  if (port == 0) {
    bound = server.bind_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
  } else if (!server.bind(host, port)) {
    throw Error("cannot bind " + host + ":" + std::to_string(port));
  }
  std::printf("listening on http://%s:%d\n", host.c_str(), bound);
  std::fflush(stdout);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.serve();
  g_server = nullptr;
  return 0;
}

std::vector<SynthModel> load_synth_models(const fs::path& path) {
  const auto j = json::parse(read_file(path));
  const auto base = path.parent_path();
  std::vector<SynthModel> out;
  for (const auto& m : j.at("models")) {
    SynthModel s;
    s.name = m.at("name").get<std::string>();
    s.info.model_id = m.at("model_id").get<std::string>();
    s.info.family = parse_model_family(m.at("family").get<std::string>());
    s.info.mask_literal = m.value("mask_literal", "");
    s.info.embedding_dim = m.value("embedding_dim", std::size_t{0});
    s.info.max_batch = m.value("max_batch", std::size_t{64});
    s.vocab_file = base / m.at("vocab").get<std::string>();
    s.output = base / m.at("output").get<std::string>();
    const auto bias = m.value("fine_bias", json::object());
    s.fine_bias_vanilla = bias.value("vanilla", 0.0);
    s.fine_bias_fewshot = bias.value("fewshot", 0.0);
    s.fine_bias_cascade = bias.value("cascade", 0.0);
    out.push_back(std::move(s));
  }
  return out;
}

int dump_probes(const RunConfig& cfg, const std::string& backend_name) {
  Pipeline p(cfg);
  const auto bench = p.load_benchmark();
  const auto catalog = p.catalog();
  const BackendSpec* spec = nullptr;
  for (const auto& b : cfg.backends) {
    if (b.name == backend_name || backend_name.empty()) {
      spec = &b;
      break;
    }
  }
  if (!spec) throw ConfigError("no backend named '" + backend_name + "'");
  const auto info = make_backend(*spec)->info();
  const bool fewshot = std::find(cfg.eval.modes.begin(), cfg.eval.modes.end(),
                                 PromptMode::fewshot) != cfg.eval.modes.end();
  const auto demos = fewshot ? plan_demos(bench, cfg.eval) : DemoPlan{};
  for (const auto& rel : cfg.relations) {
    const auto it = bench.by_task.find(rel.task_id);
    if (it == bench.by_task.end()) continue;
    const auto& tpl = catalog.at(rel.template_id);
    for (auto base : cfg.eval.modes) {
      std::vector<PromptMode> modes{base};
      if (cfg.eval.naturalness) modes.push_back(naturalness_of(base));
      for (auto mode : modes) {
        const auto style = mask_style_for(info, mode, spec->causal_filler);
        for (std::size_t i = 0; i < it->second.size(); ++i) {
          const auto& t = it->second[i];
          const DemoSet* d = base_of(mode) == PromptMode::fewshot ? &demos.at(rel.task_id)[i] : nullptr;
          const auto probe = render_probe(tpl, mode, t.subject.label, d, cfg.eval.demo_separator);
          std::cout << probe_dump_record(rel.task_id, t.subject.id.str(), probe, style).dump()
                    << '\n';
        }
      }
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"specbench: specificity benchmark construction and probing"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  RunFlags flags;
  std::map<std::string, CLI::App*> stages;
  for (const auto* name : {"ingest", "build", "evaluate", "report", "all"}) {
    const std::string n = name;
    auto* cmd = app.add_subcommand(name, n == "all" ? "Run every stage" : "Run the " + n + " stage");
    add_run_flags(cmd, flags);
    stages[name] = cmd;
  }

  std::string fixture, host = "127.0.0.1";
  int port = 0;
  auto* serve = app.add_subcommand("serve-fixture", "Serve a fixture backend over HTTP");
  serve->add_option("--fixture", fixture, "Fixture file")->required()->check(CLI::ExistingFile);
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 picks a free one)");

  std::string models_file, expected_out;
  std::uint64_t synth_seed = 1;
  auto* synth = app.add_subcommand("synth-fixture", "Write fixture backends for a config");
  add_run_flags(synth, flags);
  synth->add_option("--models", models_file, "Synthetic model list (JSON)")->required()->check(CLI::ExistingFile);
  synth->add_option("--expected", expected_out, "Write expected counts here");
  synth->add_option("--synth-seed", synth_seed, "Seed for synthetic scores");

  std::string corpus, freq_out;
  auto* freq = app.add_subcommand("freq-table", "Count tokens of a plain-text corpus");
  freq->add_option("--corpus", corpus, "Corpus file")->required()->check(CLI::ExistingFile);
  freq->add_option("--out", freq_out, "Output TSV")->required();

  std::string probe_backend;
  auto* probes = app.add_subcommand("probes", "Print every rendered probe as JSON lines");
  add_run_flags(probes, flags);
  probes->add_option("--backend", probe_backend, "Backend whose mask style to use");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
  spdlog::set_pattern("[%l] %v");

  try {
    for (const auto& [name, cmd] : stages) {
      if (!cmd->parsed()) continue;
      Pipeline p(load_config(flags));
      if (name == "ingest") p.ingest(flags.force);
      if (name == "build") p.build(flags.force);
      if (name == "evaluate") p.evaluate(flags.force);
      if (name == "report") p.report(flags.force);
      if (name == "all") {
        p.run_all(flags.force);
        std::cout << read_file(p.config().out / "report.txt");
      }
      return 0;
    }
    if (serve->parsed()) return serve_fixture(fixture, host, port);
    if (synth->parsed()) {
      SynthOptions opts;
      opts.seed = synth_seed;
      const auto expected = synthesize_fixtures(load_config(flags), load_synth_models(models_file), opts);
      if (!expected_out.empty()) write_file_atomic(expected_out, expected.dump(2) + "\n");
      return 0;
    }
    if (freq->parsed()) {
      build_frequency_table(corpus).save(freq_out);
      return 0;
    }
    if (probes->parsed()) return dump_probes(load_config(flags), probe_backend);
  } catch (const ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return 2;
  } catch (const StageError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
