#include <gtest/gtest.h>

#include "testutil.hpp"
#include "tokrec/tokrec.hpp"

using namespace tokrec;

namespace {

NGramModel story_model() {
  return train_ngram_text(
      "the cat sat on the mat . the dog sat on the rug . the cat saw the dog .\n\n"
      "a dog ran after a cat . the cat ran after the dog . they sat on the mat .",
      3, 0.1, 24);
}

std::vector<BenchCase> two_cases(const LanguageModelOracle& model) {
  std::vector<BenchCase> cases;
  cases.push_back({"case-00", "case", {0, 1}, 24});
  cases.push_back({"case-01", "case", {0, 2}, 24});
  (void)model;
  return cases;
}

DecodeConfig small_config() {
  DecodeConfig cfg;
  cfg.k = 3;
  cfg.tree = make_tree(12, 3, 3);
  cfg.max_new_tokens = 24;
  return cfg;
}

// drop every volatile "timing" subobject, recursively
void strip_timing(nlohmann::json& j) {
  if (j.is_object()) {
    j.erase("timing");
    for (auto it = j.begin(); it != j.end(); ++it) strip_timing(it.value());
  } else if (j.is_array()) {
    for (auto& v : j) strip_timing(v);
  }
}

TEST(hash, fnv1a_is_stable_and_discriminating) {
  std::vector<TokenId> a{1, 2, 3};
  std::vector<TokenId> b{1, 2, 4};
  std::vector<TokenId> empty;
  EXPECT_EQ(fnv1a_hex(a), fnv1a_hex(a));
  EXPECT_NE(fnv1a_hex(a), fnv1a_hex(b));
  EXPECT_EQ(fnv1a_hex(empty), "cbf29ce484222325");  // offset basis, nothing mixed in
  EXPECT_EQ(fnv1a_hex(a).size(), 16u);
}

TEST(metrics, ratios_and_validation) {
  DecodeResult r;
  r.tokens.assign(300, 1);
  r.steps = 60;
  r.per_step.assign(60, StepSummary{5, {}});
  MethodMetrics m = compute_metrics(r, nullptr);
  EXPECT_EQ(m.tokens, 300u);
  EXPECT_EQ(m.steps, 60u);
  EXPECT_DOUBLE_EQ(m.mat, 5.0);
  EXPECT_FALSE(m.step_reduction.has_value());

  DecodeResult ar;
  ar.tokens.assign(300, 1);
  ar.steps = 300;
  ar.per_step.assign(300, StepSummary{1, {}});
  m = compute_metrics(r, &ar);
  ASSERT_TRUE(m.step_reduction.has_value());
  EXPECT_DOUBLE_EQ(*m.step_reduction, 5.0);

  DecodeResult self = ar;
  m = compute_metrics(self, &ar);
  EXPECT_DOUBLE_EQ(m.mat, 1.0);
  EXPECT_DOUBLE_EQ(*m.step_reduction, 1.0);

  DecodeResult bad = r;
  bad.per_step[0].accepted = 4;  // sum no longer matches tokens
  EXPECT_THROW(compute_metrics(bad, nullptr), std::invalid_argument);
  DecodeResult not_ar = r;
  EXPECT_THROW(compute_metrics(ar, &not_ar), std::invalid_argument);
  DecodeResult empty;
  EXPECT_THROW(compute_metrics(empty, nullptr), std::invalid_argument);
}

TEST(bench, ar_only_baseline_numbers) {
  NGramModel model = story_model();
  BenchReport report = run_bench(model, two_cases(model), {"ar"}, small_config());
  ASSERT_EQ(report.aggregate.size(), 1u);
  const AggregateMetrics& a = report.aggregate[0].second;
  EXPECT_EQ(a.tokens, 48u);
  EXPECT_EQ(a.steps, 48u);
  EXPECT_DOUBLE_EQ(a.mat, 1.0);
  EXPECT_DOUBLE_EQ(a.mat_mean_cases, 1.0);
  ASSERT_TRUE(a.step_reduction.has_value());
  EXPECT_DOUBLE_EQ(*a.step_reduction, 1.0);
  EXPECT_FALSE(report.lossless_checked);  // one method, nothing to compare
  for (const CaseReport& c : report.cases) {
    ASSERT_EQ(c.methods.size(), 1u);
    EXPECT_DOUBLE_EQ(c.methods[0].second.mat, 1.0);
  }
}

TEST(bench, tr_vs_ar_lossless_and_fewer_steps) {
  NGramModel model = story_model();
  BenchReport report = run_bench(model, two_cases(model), {"ar", "tr", "pld"}, small_config());
  EXPECT_TRUE(report.lossless_checked);
  EXPECT_TRUE(report.lossless_identical);
  const AggregateMetrics* ar = nullptr;
  const AggregateMetrics* tr = nullptr;
  for (const auto& [name, a] : report.aggregate) {
    if (name == "ar") ar = &a;
    if (name == "tr") tr = &a;
  }
  ASSERT_TRUE(ar && tr);
  EXPECT_EQ(ar->tokens, tr->tokens);
  EXPECT_EQ(ar->output_hash, tr->output_hash);
  EXPECT_LE(tr->steps, ar->steps);
  ASSERT_TRUE(tr->step_reduction.has_value());
  EXPECT_GE(*tr->step_reduction, 1.0);
}

TEST(bench, matrix_stays_warm_across_cases) {
  CycleModel model({1, 2, 3, 4, 5}, 8);
  DecodeConfig cfg;
  cfg.k = 2;
  cfg.tree = make_tree(5, 4, 2);  // rank-0 chain
  std::vector<BenchCase> cases;
  cases.push_back({"rep-00", "rep", {1}, 40});
  cases.push_back({"rep-01", "rep", {1}, 40});
  BenchReport report = run_bench(model, cases, {"tr"}, cfg);
  ASSERT_EQ(report.cases.size(), 2u);
  std::size_t first_steps = report.cases[0].methods[0].second.steps;
  std::size_t second_steps = report.cases[1].methods[0].second.steps;
  EXPECT_EQ(first_steps, 12u);  // cold matrix learns one row per step first
  EXPECT_EQ(second_steps, 8u);  // warm matrix drafts the full cycle immediately
}

TEST(bench, rejects_bad_requests) {
  NGramModel model = story_model();
  EXPECT_THROW(run_bench(model, {}, {"ar"}, small_config()), std::invalid_argument);
  EXPECT_THROW(run_bench(model, two_cases(model), {}, small_config()), std::invalid_argument);
  EXPECT_THROW(run_bench(model, two_cases(model), {"warp"}, small_config()),
               std::invalid_argument);
}

TEST(bench, hit_counts_align_with_tree_nodes) {
  CycleModel model({1, 2, 3, 4, 5}, 8);
  DecodeConfig cfg;
  cfg.k = 2;
  cfg.tree = make_tree(5, 4, 2);
  std::vector<BenchCase> cases;
  cases.push_back({"rep-00", "rep", {1}, 40});
  std::vector<std::uint64_t> counts = collect_hit_counts(model, cases, cfg);
  ASSERT_EQ(counts.size(), 5u);
  // 12 steps total: 5 warm-up singles (no draft matched), then 7 full paths
  EXPECT_EQ(counts[0], 12u);
  for (std::size_t i = 1; i < counts.size(); ++i) EXPECT_EQ(counts[i], 7u) << "node " << i;
}

TEST(sweep, single_point_matches_bench_and_bad_points_skip) {
  NGramModel model = story_model();
  DecodeConfig cfg = small_config();
  BenchReport direct = run_bench(model, two_cases(model), {"tr"}, cfg);
  SweepReport sweep = sweep_tree(model, two_cases(model), cfg, {cfg.tree.nodes.size()}, {10});
  ASSERT_EQ(sweep.rows.size(), 2u);
  const SweepRow& point = sweep.rows[0];
  EXPECT_EQ(point.kind, "breadth");
  EXPECT_TRUE(point.warning.empty());
  EXPECT_EQ(point.nodes, cfg.tree.nodes.size());
  EXPECT_EQ(point.depth, cfg.tree.depth);
  EXPECT_EQ(point.tokens, direct.aggregate[0].second.tokens);
  EXPECT_EQ(point.steps, direct.aggregate[0].second.steps);
  EXPECT_DOUBLE_EQ(point.mat, direct.aggregate[0].second.mat);
  // depth 10 with a 12-node budget is fine, but depth 20 cannot fit: ask for
  // one impossible point and expect a warning row, not a failure
  const SweepRow& depth_row = sweep.rows[1];
  EXPECT_EQ(depth_row.kind, "depth");
  EXPECT_TRUE(depth_row.warning.empty());
  SweepReport bad = sweep_tree(model, two_cases(model), cfg, {}, {20});
  ASSERT_EQ(bad.rows.size(), 1u);
  EXPECT_FALSE(bad.rows[0].warning.empty());
}

TEST(ablate, zero_matches_manual_per_case_runs) {
  NGramModel model = story_model();
  DecodeConfig cfg = small_config();
  std::vector<BenchCase> cases = two_cases(model);
  AblateReport report = ablate_init(model, cases, {"zero"}, cfg, "");
  ASSERT_EQ(report.rows.size(), 1u);
  std::size_t tokens = 0, steps = 0;
  for (const BenchCase& c : cases) {
    RecycleMatrix m = RecycleMatrix::make(model.vocab().size, cfg.k, InitStrategy::zero());
    DecodeConfig cc = cfg;
    cc.max_new_tokens = c.max_new_tokens;
    DecodeResult r = tr_decode(model, c.prompt, cc, m);
    tokens += r.tokens.size();
    steps += r.steps;
  }
  EXPECT_EQ(report.rows[0].metrics.tokens, tokens);
  EXPECT_EQ(report.rows[0].metrics.steps, steps);
}

TEST(ablate, strategies_validated_and_annotations_emitted) {
  NGramModel model = story_model();
  DecodeConfig cfg = small_config();
  std::vector<BenchCase> cases = two_cases(model);
  EXPECT_THROW(ablate_init(model, cases, {"fixed-hot"}, cfg, ""), std::invalid_argument);
  EXPECT_THROW(ablate_init(model, cases, {"warm-ish"}, cfg, ""), std::invalid_argument);
  EXPECT_THROW(ablate_init(model, cases, {}, cfg, ""), std::invalid_argument);
  EXPECT_THROW(ablate_init(model, {}, {"zero"}, cfg, ""), std::invalid_argument);

  AblateReport report = ablate_init(model, cases, {"zero", "random", "shuffle-hot"}, cfg, "");
  ASSERT_EQ(report.rows.size(), 3u);
  for (const AblateRow& r : report.rows) {
    EXPECT_GT(r.metrics.tokens, 0u);
    EXPECT_GT(r.metrics.mat, 0.0);
  }
  ASSERT_EQ(report.annotations.size(), 2u);  // random<=zero and zero<=shuffle-hot resolvable
  EXPECT_EQ(report.annotations[0].rfind("mat(random)", 0), 0u);
  EXPECT_EQ(report.annotations[1].rfind("mat(zero)", 0), 0u);
}

TEST(reports, json_is_deterministic_modulo_timing) {
  NGramModel model = story_model();
  DecodeConfig cfg = small_config();
  nlohmann::json a = report_to_json(run_bench(model, two_cases(model), {"ar", "tr"}, cfg));
  nlohmann::json b = report_to_json(run_bench(model, two_cases(model), {"ar", "tr"}, cfg));
  EXPECT_NE(a.dump(), b.dump());  // wall clock fields differ...
  strip_timing(a);
  strip_timing(b);
  EXPECT_EQ(a.dump(2), b.dump(2));  // ...and nothing else does

  EXPECT_EQ(a["kind"], "bench");
  EXPECT_EQ(a["config"]["k"], cfg.k);
  EXPECT_TRUE(a["losslessness"]["identical_outputs"].get<bool>());
  EXPECT_TRUE(a["aggregate"]["tr"].contains("mat"));
  ASSERT_EQ(a["cases"].size(), 2u);
  EXPECT_FALSE(a["cases"][0]["methods"]["ar"].contains("timing"));
}

TEST(reports, sweep_and_ablate_json_round_out) {
  NGramModel model = story_model();
  DecodeConfig cfg = small_config();
  SweepReport sweep = sweep_tree(model, two_cases(model), cfg, {6}, {20});
  nlohmann::json sj = report_to_json(sweep);
  EXPECT_EQ(sj["kind"], "sweep");
  ASSERT_EQ(sj["grid"].size(), 2u);
  EXPECT_TRUE(sj["grid"][0].contains("mat"));
  EXPECT_TRUE(sj["grid"][1].contains("skipped"));

  AblateReport ablate = ablate_init(model, two_cases(model), {"zero"}, cfg, "");
  nlohmann::json aj = report_to_json(ablate);
  EXPECT_EQ(aj["kind"], "ablate-init");
  EXPECT_TRUE(aj["strategies"]["zero"].contains("mat"));
}

TEST(reports, csv_has_one_row_per_case_method) {
  NGramModel model = story_model();
  BenchReport report = run_bench(model, two_cases(model), {"ar", "tr"}, small_config());
  std::string csv = report_to_csv(report);
  std::size_t lines = std::count(csv.begin(), csv.end(), '\n');
  EXPECT_EQ(lines, 1u + 2u * 2u);  // header + cases x methods
  EXPECT_NE(csv.find("case,category,method"), std::string::npos);
  EXPECT_NE(csv.find(",tr,"), std::string::npos);

  std::string sweep_csv = report_to_csv(sweep_tree(model, two_cases(model), small_config(),
                                                   {6}, {}));
  EXPECT_NE(sweep_csv.find("breadth,6"), std::string::npos);
}

TEST(corpus_cases, names_prompts_and_validation) {
  NGramModel model = story_model();
  std::string corpus =
      "@category repetitive\nthe cat sat on the mat . the cat sat on the mat .\n\n"
      "@category fresh\na dog ran after a cat .\n\nthe dog saw the cat .\n";
  std::vector<BenchCase> cases = load_corpus_cases(corpus, model.vocab(), 4, 32);
  ASSERT_EQ(cases.size(), 3u);
  EXPECT_EQ(cases[0].name, "repetitive-00");
  EXPECT_EQ(cases[0].category, "repetitive");
  EXPECT_EQ(cases[1].name, "fresh-01");
  EXPECT_EQ(cases[2].name, "case-02");
  EXPECT_EQ(cases[2].category, "case");
  for (const BenchCase& c : cases) {
    EXPECT_EQ(c.prompt.size(), 4u);
    EXPECT_EQ(c.max_new_tokens, 32u);
  }
  std::vector<std::string> toks = tokenize_text("the cat sat on");
  EXPECT_EQ(cases[0].prompt, encode(model.vocab(), toks));
  EXPECT_THROW(load_corpus_cases(corpus, model.vocab(), 0, 32), std::invalid_argument);
  EXPECT_TRUE(load_corpus_cases("\n\n", model.vocab(), 4, 32).empty());
}

}  // namespace
