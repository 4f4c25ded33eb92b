#include <gtest/gtest.h>

#include <regex>
#include <sstream>

#include "gen.hpp"
#include "specbench/error.hpp"
#include "specbench/report.hpp"
#include "specbench/util.hpp"
#include "test_support.hpp"

using namespace specbench;
using specbench::testing::Gen;

namespace {

struct Fixture {
  std::vector<RelationSpec> relations = default_relations();
  std::vector<ModelEntry> models = {{"bert", ModelFamily::masked}, {"gpt", ModelFamily::causal}};
  std::vector<TripletOutcome> outcomes;
  std::vector<RelatednessOutcome> related;
  Benchmark bench;
  FrequencyTable freq;

  ReportInputs inputs() const {
    ReportInputs in;
    in.relations = relations;
    in.models = models;
    in.outcomes = outcomes;
    in.relatedness = related;
    in.benchmark = &bench;
    in.frequency = &freq;
    in.k = 10;
    return in;
  }
};

// Random outcomes for every model, base mode and relation, with naturalness
// and relatedness, a few errors and top-k flags.
Fixture random_fixture(Gen& g, int per_cell = 12) {
  Fixture f;
  for (const auto& rel : f.relations) {
    auto& list = f.bench.by_task[rel.task_id];
    for (int i = 0; i < per_cell; ++i) {
      SpecificityTriplet t;
      t.task_id = rel.task_id;
      t.subject = {EntityId("S" + std::to_string(i)), "s"};
      t.fine = {EntityId("F" + std::to_string(i)), "f" + std::to_string(i)};
      t.coarse = {EntityId("C" + std::to_string(i)), "c" + std::to_string(i)};
      f.freq.counts[t.fine.label] = static_cast<std::uint64_t>(g.uniform_int(1, 100));
      f.freq.counts[t.coarse.label] = static_cast<std::uint64_t>(g.uniform_int(1, 100));
      list.push_back(t);
    }
  }
  for (const auto& m : f.models) {
    for (auto mode : {PromptMode::vanilla, PromptMode::fewshot, PromptMode::cascade}) {
      for (auto probe_mode : {mode, naturalness_of(mode)}) {
        for (const auto& rel : f.relations) {
          for (const auto& t : f.bench.by_task.at(rel.task_id)) {
            TripletOutcome o;
            o.model_id = m.model_id;
            o.task_id = rel.task_id;
            o.subject_id = t.subject.id.str();
            o.fine_id = t.fine.id.str();
            o.coarse_id = t.coarse.id.str();
            o.mode = probe_mode;
            o.c_fine = g.uniform(-9, 0);
            o.c_coarse = g.uniform(-9, 0);
            if (!is_naturalness(probe_mode)) {
              o.fine_in_topk = g.chance(0.5);
              o.coarse_in_topk = g.chance(0.5);
            }
            if (g.chance(0.03)) o.error = "HTTP 503";
            f.outcomes.push_back(o);
          }
        }
      }
    }
    for (const auto& rel : f.relations) {
      for (const auto& t : f.bench.by_task.at(rel.task_id)) {
        RelatednessOutcome r{m.model_id, rel.task_id, t.subject.id.str(), t.fine.id.str(),
                             t.coarse.id.str(), g.uniform(-1, 1), g.uniform(-1, 1)};
        if (g.chance(0.05)) r.cos_fine.reset();
        f.related.push_back(r);
      }
    }
  }
  return f;
}

// Rows of the named text section: label -> cells.
std::vector<std::pair<std::string, std::vector<std::string>>> section(const std::string& text,
                                                                     const std::string& title) {
  std::vector<std::pair<std::string, std::vector<std::string>>> rows;
  const auto start = text.find("== " + title + " ==\n");
  if (start == std::string::npos) return rows;
  std::istringstream in(text.substr(start));
  std::string line;
  std::getline(in, line);  // title
  std::getline(in, line);  // header
  while (std::getline(in, line) && !line.empty()) {
    // Label is everything up to the first run of two spaces.
    const auto cut = line.find("  ");
    std::vector<std::string> cells;
    std::istringstream rest(line.substr(cut));
    std::string c;
    while (rest >> c) cells.push_back(c);
    rows.emplace_back(line.substr(0, cut), cells);
  }
  return rows;
}

}  // namespace

TEST(Report, CellsMatchDirectComputation) {
  Gen g(1);
  const auto f = random_fixture(g);
  const auto rep = compute_report(f.inputs());
  for (const auto& m : f.models) {
    for (const auto& rel : f.relations) {
      std::vector<TripletOutcome> vp, nat;
      for (const auto& o : f.outcomes) {
        if (o.model_id != m.model_id || o.task_id != rel.task_id) continue;
        if (o.mode == PromptMode::vanilla) vp.push_back(o);
        if (o.mode == PromptMode::naturalness) nat.push_back(o);
      }
      const auto& cell = rep.scores.at(m.model_id).at("vanilla").at(rel.task_id);
      EXPECT_EQ(cell.specificity, specificity_pr(vp));
      EXPECT_EQ(cell.naturalness, naturalness_pr(nat));
      EXPECT_EQ(cell.acc_at_k, acc_at_k(vp));
      ASSERT_TRUE(cell.relatedness);
      // Relatedness is prompt-independent and lives in the VP row only.
      EXPECT_FALSE(rep.scores.at(m.model_id).at("fewshot").at(rel.task_id).relatedness);
    }
  }
  ASSERT_TRUE(rep.freq);
  EXPECT_EQ(rep.freq->size(), 5u);
  ASSERT_TRUE(rep.pearson);
  EXPECT_EQ(rep.pearson->pairs.size(), 1u);
  EXPECT_EQ(rep.correctness.at("bert").size(), 2u);  // FP and CP
}

TEST(Report, OrderOfOutcomesDoesNotMatter) {
  Gen g(2);
  auto f = random_fixture(g);
  const auto a = compute_report(f.inputs());
  for (int round = 0; round < 5; ++round) {
    std::shuffle(f.outcomes.begin(), f.outcomes.end(), g.rng);
    std::shuffle(f.related.begin(), f.related.end(), g.rng);
    const auto b = compute_report(f.inputs());
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.to_text(), b.to_text());
  }
}

TEST(Report, JsonRoundTrip) {
  Gen g(3);
  for (int round = 0; round < 10; ++round) {
    const auto f = random_fixture(g, g.uniform_int(2, 15));
    const auto rep = compute_report(f.inputs());
    const auto back = MetricReport::from_json(nlohmann::json::parse(rep.to_json().dump(2)));
    EXPECT_EQ(back, rep);
    EXPECT_EQ(back.to_text(), rep.to_text());
  }
}

TEST(Report, AverageColumnIsUnweightedMean) {
  Gen g(4);
  for (int round = 0; round < 20; ++round) {
    auto f = random_fixture(g, 6);
    // Uneven relation sizes: drop a random share of outcomes per relation.
    std::erase_if(f.outcomes, [&](const TripletOutcome& o) {
      return o.task_id == "P361" && o.subject_id != "S0" && o.subject_id != "S1";
    });
    const auto rep = compute_report(f.inputs());
    const auto text = rep.to_text();
    for (const auto& title : {std::string("Specificity p_r (%)"),
                              std::string("Naturalness p_r (%) by prompting mode")}) {
      const auto rows = section(text, title);
      ASSERT_FALSE(rows.empty()) << title;
      for (const auto& [label, cells] : rows) {
        ASSERT_EQ(cells.size(), 6u) << label;
        // Recompute from the report's exact rates rather than the rounded
        // cells.
        const auto model = label.substr(0, label.find(' '));
        const auto mode_label = label.substr(label.find(' ') + 1, 2);
        const std::string mode = mode_label == "VP" ? "vanilla" : mode_label == "FP" ? "fewshot" : "cascade";
        double sum = 0;
        for (const auto& task : rep.tasks) {
          const auto& s = rep.scores.at(model).at(mode).at(task);
          sum += title.starts_with("Spec") ? s.specificity.value() : s.naturalness->value();
        }
        EXPECT_NEAR(std::stod(cells[5]), sum / 5 * 100, 0.005 + 1e-9) << label;
      }
    }
  }
}

TEST(Report, TextLayout) {
  Gen g(5);
  const auto f = random_fixture(g);
  const auto text = compute_report(f.inputs()).to_text();
  const std::vector<std::string> titles = {
      "Specificity p_r (%)",  "Freq baseline p_r (%)",
      "Acc@10 (%), fine and coarse answers", "Naturalness and relatedness p_r (%)",
      "Naturalness p_r (%) by prompting mode", "Change in fine-answer Acc@10 against VP (points)",
      "Scored triplets n (excluded)", "Pairwise Pearson of VP p_r"};
  std::size_t pos = 0;
  for (const auto& t : titles) {
    const auto at = text.find("== " + t + " ==", pos);
    ASSERT_NE(at, std::string::npos) << t;
    pos = at;
  }
  const auto header_line = text.substr(text.find('\n', text.find("== Specificity")) + 1);
  EXPECT_TRUE(std::regex_search(header_line.substr(0, header_line.find('\n')),
                                std::regex("^model +birthplace +occupation +location +subclass-of +part-of +Average$")));
  // Causal naturalness rows carry the marker, masked ones do not.
  for (const auto& [label, cells] : section(text, "Naturalness p_r (%) by prompting mode")) {
    EXPECT_EQ(label.find("[approximate]") != std::string::npos, label.starts_with("gpt")) << label;
  }
  EXPECT_NE(text.find("gpt naturalness [approximate]"), std::string::npos);
  EXPECT_EQ(text.find("gpt relatedness [approximate]"), std::string::npos);
  for (const auto& [label, cells] : section(text, "Specificity p_r (%)")) {
    EXPECT_EQ(label.find("[approximate]"), std::string::npos);
  }
  EXPECT_EQ(text.find("[omitted"), std::string::npos);
}

TEST(Report, MissingDataPlaceholders) {
  Gen g(6);
  auto f = random_fixture(g);
  std::erase_if(f.outcomes, [](const TripletOutcome& o) {
    return (o.model_id == "gpt" && o.task_id == "P279") || is_naturalness(o.mode) ||
           o.mode != PromptMode::vanilla;
  });
  for (auto& o : f.outcomes) o.fine_in_topk.reset(), o.coarse_in_topk.reset();
  f.related.clear();
  auto in = f.inputs();
  in.frequency = nullptr;
  const auto rep = compute_report(in);
  EXPECT_FALSE(rep.pearson);  // gpt misses a relation
  EXPECT_FALSE(rep.freq);
  const auto text = rep.to_text();
  EXPECT_NE(text.find("== Freq baseline p_r (%) ==\n[omitted: no frequency table configured]"),
            std::string::npos);
  EXPECT_NE(text.find("[omitted: top-k ranking disabled]"), std::string::npos);
  EXPECT_NE(text.find("[omitted: naturalness disabled]"), std::string::npos);
  EXPECT_NE(text.find("== Pairwise Pearson of VP p_r ==\n[omitted:"), std::string::npos);
  const auto rows = section(text, "Specificity p_r (%)");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].first, "gpt VP");
  EXPECT_EQ(rows[1].second[3], "--");
}

TEST(Report, ErrorsShowInCounts) {
  Gen g(7);
  auto f = random_fixture(g, 4);
  for (auto& o : f.outcomes) {
    if (o.model_id == "bert" && o.task_id == "P19" && o.mode == PromptMode::vanilla && o.subject_id == "S0") {
      o.error = "timeout";
    } else if (!is_naturalness(o.mode)) {
      o.error.clear();
    }
  }
  const auto text = compute_report(f.inputs()).to_text();
  const auto rows = section(text, "Scored triplets n (excluded)");
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(rows[0].first, "bert VP");
  EXPECT_EQ(rows[0].second[0], "3");
  EXPECT_EQ(rows[0].second[1], "(1)");
}

TEST(Report, UnknownModelRejected) {
  Gen g(8);
  auto f = random_fixture(g, 2);
  f.outcomes[0].model_id = "ghost";
  EXPECT_THROW(compute_report(f.inputs()), MetricError);
}

TEST(Report, DisplayOrderPutsStandardRelationsFirst) {
  auto rels = default_relations();
  std::reverse(rels.begin(), rels.end());
  rels.insert(rels.begin(), {"P999", "extra", EntityId("P999"), EntityId("P999"), "P999"});
  EXPECT_EQ(display_order(rels), (std::vector<std::string>{"P19", "P106", "P131", "P279", "P361", "P999"}));
}

TEST(Report, WriteReportFiles) {
  Gen g(9);
  const auto f = random_fixture(g, 3);
  const auto rep = compute_report(f.inputs());
  specbench::testing::TempDir dir;
  write_report(dir.path(), rep);
  EXPECT_EQ(read_file(dir / "report.txt"), rep.to_text());
  EXPECT_EQ(MetricReport::from_json(nlohmann::json::parse(read_file(dir / "report.json"))), rep);
}
