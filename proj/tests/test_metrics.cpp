#include <gtest/gtest.h>

#include <cmath>

#include "gen.hpp"
#include "specbench/error.hpp"
#include "specbench/metrics.hpp"
#include "published_vp.hpp"

using namespace specbench;
using specbench::testing::Gen;

namespace {

TripletOutcome outcome(std::optional<double> fine, std::optional<double> coarse,
                       int id = 0, PromptMode mode = PromptMode::vanilla) {
  TripletOutcome o;
  o.model_id = "m";
  o.task_id = "t";
  o.subject_id = "S" + std::to_string(id);
  o.fine_id = "F";
  o.coarse_id = "C";
  o.mode = mode;
  o.c_fine = fine;
  o.c_coarse = coarse;
  return o;
}

// Textbook sum-of-products form, in long double.
long double oracle_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const long double n = static_cast<long double>(x.size());
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += static_cast<long double>(x[i]) * x[i];
    syy += static_cast<long double>(y[i]) * y[i];
    sxy += static_cast<long double>(x[i]) * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

ModelMatrix published_matrix() {
  ModelMatrix m;
  m.columns = {"birthplace", "occupation", "location", "subclass-of", "part-of"};
  for (const auto& row : specbench::testing::published_vp()) {
    m.rows.push_back(row.model);
    m.values.emplace_back(row.values.begin(), row.values.end());
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// p_r
// ---------------------------------------------------------------------------

TEST(SpecificityPr, EngineeredFixtures) {
  std::vector<TripletOutcome> seven;
  for (int i = 0; i < 10; ++i) seven.push_back(i < 7 ? outcome(-1, -2, i) : outcome(-2, -1, i));
  EXPECT_EQ(specificity_pr(seven).value(), 0.7);

  std::vector<TripletOutcome> none, all;
  for (int i = 0; i < 5; ++i) {
    none.push_back(outcome(-3, -1, i));
    all.push_back(outcome(-0.5, -4, i));
  }
  EXPECT_EQ(specificity_pr(none).value(), 0.0);
  EXPECT_EQ(specificity_pr(all).value(), 1.0);
}

TEST(SpecificityPr, TiesAreNotSpecific) {
  std::vector<TripletOutcome> v = {outcome(-1, -1, 0), outcome(-1, -2, 1)};
  EXPECT_EQ(specificity_pr(v), (Rate{1, 2, 0}));
}

TEST(SpecificityPr, ErrorsExcludedAndCounted) {
  std::vector<TripletOutcome> v = {outcome(-1, -2, 0), outcome(std::nullopt, -2, 1),
                                   outcome(-3, -2, 2)};
  v.push_back(outcome(-1, -2, 3));
  v.back().error = "timeout";
  const auto r = specificity_pr(v);
  EXPECT_EQ(r, (Rate{1, 2, 2}));
  EXPECT_THROW(specificity_pr({}), MetricError);
  std::vector<TripletOutcome> errs = {v[1]};
  EXPECT_THROW(specificity_pr(errs).value(), MetricError);
}

TEST(SpecificityPr, SymmetricRandomScoresNearHalf) {
  Gen g(123);
  std::normal_distribution<double> noise(-5.0, 2.0);
  std::vector<TripletOutcome> v;
  for (int i = 0; i < 10000; ++i) v.push_back(outcome(noise(g.rng), noise(g.rng), i));
  EXPECT_NEAR(specificity_pr(v).value(), 0.5, 0.02);
}

TEST(SpecificityPr, PermutationInvariant) {
  Gen g(9);
  std::vector<TripletOutcome> v;
  for (int i = 0; i < 500; ++i) v.push_back(outcome(g.uniform(-9, 0), g.uniform(-9, 0), i));
  const auto base = specificity_pr(v);
  for (int round = 0; round < 20; ++round) {
    std::shuffle(v.begin(), v.end(), g.rng);
    EXPECT_EQ(specificity_pr(v), base);
  }
}

TEST(SpecificityPr, InvariantUnderMonotoneTransform) {
  // Only the argmax of each pair matters: shifting both scores of a probe by
  // the same normalizer, or applying exp, changes nothing.
  Gen g(10);
  std::vector<TripletOutcome> v, shifted, probs;
  for (int i = 0; i < 500; ++i) {
    const double f = g.uniform(-9, 0), c = g.uniform(-9, 0), z = g.uniform(-3, 3);
    v.push_back(outcome(f, c, i));
    shifted.push_back(outcome(f - z, c - z, i));
    probs.push_back(outcome(std::exp(f), std::exp(c), i));
  }
  EXPECT_EQ(specificity_pr(v), specificity_pr(shifted));
  EXPECT_EQ(specificity_pr(v), specificity_pr(probs));
}

TEST(NaturalnessPr, RequiresNaturalnessModes) {
  std::vector<TripletOutcome> v = {outcome(-1, -2, 0, PromptMode::naturalness),
                                   outcome(-2, -1, 1, PromptMode::naturalness_cascade)};
  EXPECT_EQ(naturalness_pr(v), (Rate{1, 2, 0}));
  v.push_back(outcome(-1, -2, 2));
  EXPECT_THROW(naturalness_pr(v), MetricError);
}

// ---------------------------------------------------------------------------
// Acc@k, relatedness, Freq
// ---------------------------------------------------------------------------

TEST(AccAtK, PooledAndFineOnly) {
  std::vector<TripletOutcome> v(4, outcome(-1, -2));
  v[0].fine_in_topk = true, v[0].coarse_in_topk = true;
  v[1].fine_in_topk = true, v[1].coarse_in_topk = false;
  v[2].fine_in_topk = false, v[2].coarse_in_topk = false;
  // v[3] has no top-k data.
  EXPECT_EQ(acc_at_k(v), (Rate{3, 6, 1}));
  EXPECT_EQ(acc_at_k(v, true), (Rate{2, 3, 1}));
}

TEST(Relatedness, StrictComparisonAndDegenerates) {
  SpecificityTriplet t;
  t.task_id = "t";
  t.subject.id = EntityId("S");
  t.fine.id = EntityId("F");
  t.coarse.id = EntityId("C");
  const PhraseEmbedding s{"s", {1, 0}}, f{"f", {1, 0.1}}, c{"c", {0, 1}}, z{"z", {0, 0}};
  std::vector<RelatednessOutcome> v = {relatedness_outcome("m", t, s, f, c),
                                       relatedness_outcome("m", t, s, c, f),
                                       relatedness_outcome("m", t, s, f, f),
                                       relatedness_outcome("m", t, s, z, c)};
  EXPECT_TRUE(v[3].degenerate());
  EXPECT_EQ(relatedness_pr(v), (Rate{1, 3, 1}));
  std::vector<RelatednessOutcome> only_bad = {v[3]};
  EXPECT_THROW(relatedness_pr(only_bad), MetricError);
}

TEST(FreqPr, FixtureTableGivesEightyFivePercent) {
  FrequencyTable table;
  std::vector<SpecificityTriplet> ts;
  for (int i = 0; i < 20; ++i) {
    SpecificityTriplet t;
    t.fine.label = "fine" + std::to_string(i);
    t.coarse.label = "coarse" + std::to_string(i);
    // 17 of 20 fine labels are rarer; two are more frequent, one ties.
    table.counts[t.fine.label] = i < 17 ? 10 : (i < 19 ? 1000 : 50);
    table.counts[t.coarse.label] = 50;
    ts.push_back(t);
  }
  EXPECT_EQ(freq_pr(ts, table).value(), 0.85);
  EXPECT_THROW(freq_pr({}, table), MetricError);
}

// ---------------------------------------------------------------------------
// Pearson
// ---------------------------------------------------------------------------

TEST(Pearson, PublishedMatrixAverage) {
  const auto m = published_matrix();
  const auto r = pairwise_pearson(m);
  EXPECT_EQ(r.pairs.size(), 10u);
  EXPECT_EQ(r.excluded, 0u);
  long double sum = 0;
  const auto& rows = specbench::testing::published_vp();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) sum += oracle_pearson(rows[i].values, rows[j].values);
  }
  EXPECT_NEAR(r.average, static_cast<double>(sum / 10), 1e-12);
  EXPECT_NEAR(r.average, 0.803, 0.01);
}

TEST(Pearson, MatchesOracleOnRandomRows) {
  Gen g(77);
  for (int round = 0; round < 300; ++round) {
    const int n = g.uniform_int(2, 12);
    std::vector<double> x, y;
    for (int i = 0; i < n; ++i) {
      x.push_back(g.uniform(0, 100));
      y.push_back(g.uniform(0, 100));
    }
    const auto r = pearson(x, y);
    ASSERT_TRUE(r);
    EXPECT_NEAR(*r, static_cast<double>(oracle_pearson(x, y)), 1e-9);
    EXPECT_LE(std::abs(*r), 1.0);
  }
}

TEST(Pearson, ZeroVarianceRowExcluded) {
  auto m = published_matrix();
  m.rows.push_back("flat");
  m.values.push_back({50.0, 50.0, 50.0, 50.0, 50.0});
  const auto r = pairwise_pearson(m);
  EXPECT_EQ(r.excluded, 5u);  // flat against each of the five rows
  EXPECT_EQ(r.pairs.size(), 15u);
  EXPECT_NEAR(r.average, pairwise_pearson(published_matrix()).average, 1e-15);
}

TEST(Pearson, ShapeErrors) {
  auto m = published_matrix();
  m.values[0][2].reset();
  EXPECT_THROW(pairwise_pearson(m), MetricError);
  ModelMatrix one{{"a"}, {"x", "y"}, {{1.0, 2.0}}};
  EXPECT_THROW(pairwise_pearson(one), MetricError);
  const std::vector<double> a{1.0}, b{2.0};
  EXPECT_THROW(pearson(a, b), MetricError);
}

TEST(Pearson, JsonRoundTrip) {
  auto m = published_matrix();
  m.rows.push_back("flat");
  m.values.push_back({1.0, 1.0, 1.0, 1.0, 1.0});
  const auto r = pairwise_pearson(m);
  EXPECT_EQ(pearson_from_json(nlohmann::json::parse(to_json(r).dump())), r);
}

// ---------------------------------------------------------------------------
// Aggregation helpers
// ---------------------------------------------------------------------------

TEST(Correctness, DeltaInPoints) {
  EXPECT_NEAR(correctness_delta(0.30, 0.4062), 10.62, 1e-9);
  std::vector<TripletOutcome> base(4, outcome(-1, -2)), variant;
  for (int i = 0; i < 4; ++i) {
    base[i].subject_id = "S" + std::to_string(i);
    base[i].fine_in_topk = i == 0;
    base[i].coarse_in_topk = true;
  }
  variant = base;
  variant[1].fine_in_topk = true;
  EXPECT_DOUBLE_EQ(correctness_delta(base, variant), 25.0);
  variant.pop_back();
  EXPECT_THROW(correctness_delta(base, variant), MetricError);
}

TEST(UnweightedMean, EqualWeights) {
  const std::vector<double> v{0.2, 0.4, 0.9};
  EXPECT_DOUBLE_EQ(unweighted_mean(v), 0.5);
  EXPECT_THROW(unweighted_mean({}), MetricError);
}

TEST(OutcomeJson, RoundTrip) {
  auto o = outcome(-1.0 / 3.0, std::nullopt, 4, PromptMode::naturalness_fewshot);
  o.fine_in_topk = false;
  o.error = "x";
  const auto back = outcome_from_json(nlohmann::json::parse(to_json(o).dump()));
  EXPECT_EQ(back.c_fine, o.c_fine);
  EXPECT_EQ(back.c_coarse, o.c_coarse);
  EXPECT_EQ(back.mode, o.mode);
  EXPECT_EQ(back.fine_in_topk, o.fine_in_topk);
  EXPECT_EQ(back.coarse_in_topk, o.coarse_in_topk);
  EXPECT_EQ(back.error, "x");
  EXPECT_EQ(back.key(), o.key());
  EXPECT_EQ(rate_from_json(to_json(Rate{3, 4, 1})), (Rate{3, 4, 1}));
  EXPECT_TRUE(to_json(Rate{0, 0, 2}).at("value").is_null());
}
