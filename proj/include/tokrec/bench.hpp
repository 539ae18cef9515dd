#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tokrec/common.hpp"
#include "tokrec/decoder.hpp"
#include "tokrec/draft_tree.hpp"
#include "tokrec/model.hpp"
#include "tokrec/recycle_matrix.hpp"
#include "tokrec/vocab.hpp"

namespace tokrec {

struct BenchCase {
  std::string name;
  std::string category;
  std::vector<TokenId> prompt;
  std::size_t max_new_tokens = 64;
};

/// Blank-line-separated corpus blocks become cases: the first prompt_tokens
/// tokens of each block are the prompt, the rest of the block is ignored
/// (generation is the model's business).
inline std::vector<BenchCase> load_corpus_cases(const std::string& corpus_text,
                                                const Vocabulary& vocab,
                                                std::size_t prompt_tokens,
                                                std::size_t max_new_tokens) {
  if (prompt_tokens < 1) throw std::invalid_argument("load_corpus_cases: prompt_tokens must be >= 1");
  std::vector<BenchCase> cases;
  std::vector<CorpusBlock> blocks = split_corpus_blocks(corpus_text);
  for (const CorpusBlock& b : blocks) {
    std::vector<TokenId> toks = encode(vocab, tokenize_text(b.text));
    if (toks.empty()) continue;
    BenchCase c;
    c.category = b.category.empty() ? "case" : b.category;
    char buf[8];
    std::snprintf(buf, sizeof buf, "%02zu", cases.size());
    c.name = c.category + "-" + buf;
    std::size_t take = std::min(prompt_tokens, toks.size());
    c.prompt.assign(toks.begin(), toks.begin() + static_cast<std::ptrdiff_t>(take));
    c.max_new_tokens = max_new_tokens;
    cases.push_back(std::move(c));
  }
  return cases;
}

inline std::string fnv1a_hex(std::span<const TokenId> tokens) {
  std::uint64_t h = 14695981039346656037ull;
  for (TokenId t : tokens) {
    for (int b = 0; b < 4; ++b) {
      h ^= (t >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Per-run metrics. MAT and step counts are deterministic; everything clock-
/// derived (wall time, tokens/s, speedup) is volatile and kept apart so
/// reports can be compared modulo timing.
struct MethodMetrics {
  std::size_t tokens = 0;
  std::size_t steps = 0;
  double mat = 0.0;                          // tokens / steps
  std::optional<double> step_reduction;      // ar_steps / steps, needs an ar reference
  std::string output_hash;
  double wall_time_s = 0.0;                  // volatile
  double tokens_per_second = 0.0;            // volatile
  std::optional<double> speedup_vs_ar;       // volatile, needs an ar reference
  PhaseTimes phases;                         // volatile
};

inline MethodMetrics compute_metrics(const DecodeResult& result, const DecodeResult* ar_reference) {
  std::size_t accepted_sum = 0;
  for (const StepSummary& s : result.per_step) accepted_sum += s.accepted;
  if (result.steps != result.per_step.size() || accepted_sum != result.tokens.size()) {
    throw std::invalid_argument("compute_metrics: inconsistent decode result");
  }
  if (result.steps == 0) throw std::invalid_argument("compute_metrics: empty decode result");
  MethodMetrics m;
  m.tokens = result.tokens.size();
  m.steps = result.steps;
  m.mat = static_cast<double>(m.tokens) / static_cast<double>(m.steps);
  m.output_hash = fnv1a_hex(result.tokens);
  m.wall_time_s = result.wall_time_s;
  m.tokens_per_second = result.wall_time_s > 0.0
                            ? static_cast<double>(m.tokens) / result.wall_time_s
                            : 0.0;
  m.phases = result.phases;
  if (ar_reference) {
    if (ar_reference->steps != ar_reference->tokens.size()) {
      throw std::invalid_argument("compute_metrics: ar reference is not an autoregressive run");
    }
    m.step_reduction = static_cast<double>(ar_reference->steps) / static_cast<double>(m.steps);
    if (result.wall_time_s > 0.0) {
      m.speedup_vs_ar = ar_reference->wall_time_s / result.wall_time_s;
    }
  }
  return m;
}

struct CaseReport {
  std::string name;
  std::string category;
  std::vector<std::pair<std::string, MethodMetrics>> methods;  // bench method order
};

struct AggregateMetrics {
  std::size_t tokens = 0;
  std::size_t steps = 0;
  double mat = 0.0;             // total tokens / total steps
  double mat_mean_cases = 0.0;  // mean of per-case MATs (a different number; both reported)
  std::optional<double> step_reduction;
  std::string output_hash;      // hash over all cases' outputs, case order
  double wall_time_s = 0.0;
  double tokens_per_second = 0.0;
  std::optional<double> speedup_vs_ar;
};

struct BenchReport {
  std::vector<std::string> methods;
  DecodeConfig config;
  std::string corpus_label;
  std::vector<CaseReport> cases;
  std::vector<std::pair<std::string, AggregateMetrics>> aggregate;
  bool lossless_checked = false;   // needs >= 2 methods at temperature 0
  bool lossless_identical = false;
};

namespace detail {

inline void require_known_methods(const std::vector<std::string>& methods) {
  if (methods.empty()) throw std::invalid_argument("bench: no methods selected");
  for (const std::string& m : methods) {
    if (m != "ar" && m != "tr" && m != "pld") {
      throw std::invalid_argument("bench: unknown method '" + m + "'");
    }
  }
}

}  // namespace detail

/// Run every method over every case. The TR matrix is created once from
/// config.init and carried across cases in order, so later cases see a warm
/// matrix — re-initialization policies live in ablate_init. AR (when present)
/// is the reference for step-reduction and speedup columns, and at
/// temperature 0 the report records whether all methods emitted identical
/// tokens.
inline BenchReport run_bench(const LanguageModelOracle& model, const std::vector<BenchCase>& cases,
                             const std::vector<std::string>& methods, const DecodeConfig& config) {
  detail::require_known_methods(methods);
  if (cases.empty()) throw std::invalid_argument("bench: empty case list");

  BenchReport report;
  report.methods = methods;
  report.config = config;

  bool has_tr = std::find(methods.begin(), methods.end(), "tr") != methods.end();
  std::optional<RecycleMatrix> matrix;
  if (has_tr) matrix.emplace(RecycleMatrix::make(model.vocab().size, config.k, config.init));

  struct Totals {
    std::size_t tokens = 0, steps = 0;
    double mat_sum = 0.0, wall = 0.0;
    std::vector<TokenId> all_tokens;
  };
  std::map<std::string, Totals> totals;
  report.lossless_checked = config.temperature == 0.0 && methods.size() >= 2;
  report.lossless_identical = true;

  std::size_t ar_total_steps = 0;
  double ar_total_wall = 0.0;
  for (const BenchCase& c : cases) {
    DecodeConfig cc = config;
    cc.max_new_tokens = c.max_new_tokens;
    CaseReport cr;
    cr.name = c.name;
    cr.category = c.category;
    std::optional<DecodeResult> ar_result;
    std::vector<std::pair<std::string, DecodeResult>> results;
    for (const std::string& method : methods) {
      DecodeResult r;
      if (method == "ar") {
        r = ar_decode(model, c.prompt, cc);
        ar_result = r;
        ar_total_steps += r.steps;
        ar_total_wall += r.wall_time_s;
      } else if (method == "tr") {
        r = tr_decode(model, c.prompt, cc, *matrix);
      } else {
        r = pld_decode(model, c.prompt, cc);
      }
      results.emplace_back(method, std::move(r));
    }
    for (const auto& [method, r] : results) {
      MethodMetrics m = compute_metrics(r, ar_result ? &*ar_result : nullptr);
      Totals& t = totals[method];
      t.tokens += m.tokens;
      t.steps += m.steps;
      t.mat_sum += m.mat;
      t.wall += m.wall_time_s;
      t.all_tokens.insert(t.all_tokens.end(), r.tokens.begin(), r.tokens.end());
      cr.methods.emplace_back(method, std::move(m));
    }
    if (report.lossless_checked) {
      for (std::size_t i = 1; i < results.size(); ++i) {
        if (results[i].second.tokens != results[0].second.tokens) {
          report.lossless_identical = false;
        }
      }
    }
    report.cases.push_back(std::move(cr));
  }

  for (const std::string& method : methods) {
    const Totals& t = totals[method];
    AggregateMetrics a;
    a.tokens = t.tokens;
    a.steps = t.steps;
    a.mat = t.steps ? static_cast<double>(t.tokens) / static_cast<double>(t.steps) : 0.0;
    a.mat_mean_cases = cases.empty() ? 0.0 : t.mat_sum / static_cast<double>(cases.size());
    a.output_hash = fnv1a_hex(t.all_tokens);
    a.wall_time_s = t.wall;
    a.tokens_per_second = t.wall > 0.0 ? static_cast<double>(t.tokens) / t.wall : 0.0;
    bool has_ar = std::find(methods.begin(), methods.end(), "ar") != methods.end();
    if (has_ar && a.steps > 0) {
      a.step_reduction = static_cast<double>(ar_total_steps) / static_cast<double>(a.steps);
      if (t.wall > 0.0) a.speedup_vs_ar = ar_total_wall / t.wall;
    }
    report.aggregate.emplace_back(method, std::move(a));
  }
  return report;
}

/// Per-step node hit counts for tree calibration: node 0 is charged once per
/// step (the root always participates), every matched draft node once per
/// match. Counts align with config.tree node indices. One matrix is carried
/// across cases.
inline std::vector<std::uint64_t> collect_hit_counts(const LanguageModelOracle& model,
                                                     const std::vector<BenchCase>& cases,
                                                     const DecodeConfig& config) {
  if (cases.empty()) throw std::invalid_argument("collect_hit_counts: empty case list");
  std::vector<std::uint64_t> counts(config.tree.nodes.size(), 0);
  RecycleMatrix matrix = RecycleMatrix::make(model.vocab().size, config.k, config.init);
  for (const BenchCase& c : cases) {
    DecodeConfig cc = config;
    cc.max_new_tokens = c.max_new_tokens;
    DecodeResult r = tr_decode(model, c.prompt, cc, matrix);
    counts[0] += r.steps;
    for (const StepSummary& s : r.per_step) {
      for (std::int32_t n : s.matched_nodes) counts[static_cast<std::size_t>(n)] += 1;
    }
  }
  return counts;
}

struct SweepRow {
  std::string kind;          // "breadth" | "depth"
  std::size_t requested = 0; // requested node budget or depth
  std::size_t nodes = 0;     // actual tree size
  std::int32_t depth = 0;    // actual depth
  std::size_t tokens = 0;
  std::size_t steps = 0;
  double mat = 0.0;
  double wall_time_s = 0.0;      // volatile
  double tokens_per_second = 0.0;  // volatile
  std::string warning;           // non-empty = grid point skipped
};

struct SweepReport {
  DecodeConfig config;
  std::vector<SweepRow> rows;
};

/// Breadth rows grow the node budget at the base tree's depth; depth rows
/// change depth at the base tree's node count. Each grid point is a fresh
/// TR-only bench (matrix re-created from config.init), so points are
/// comparable. Budgets the (k, depth) capacity cannot honor come back smaller
/// than requested; impossible points (budget below depth+1) are reported as
/// skipped rather than failing the sweep.
inline SweepReport sweep_tree(const LanguageModelOracle& model, const std::vector<BenchCase>& cases,
                              const DecodeConfig& config, const std::vector<std::size_t>& breadths,
                              const std::vector<std::int32_t>& depths) {
  if (cases.empty()) throw std::invalid_argument("sweep: empty case list");
  SweepReport report;
  report.config = config;
  const std::size_t base_nodes = config.tree.nodes.size();
  const std::int32_t base_depth = config.tree.depth;

  auto run_point = [&](const std::string& kind, std::size_t requested, std::size_t nodes,
                       std::int32_t depth) {
    SweepRow row;
    row.kind = kind;
    row.requested = requested;
    try {
      DecodeConfig cc = config;
      cc.tree = make_tree(nodes, depth, config.k);
      validate_tree(cc.tree, cc.k);
      BenchReport b = run_bench(model, cases, {"tr"}, cc);
      const AggregateMetrics& a = b.aggregate[0].second;
      row.nodes = cc.tree.nodes.size();
      row.depth = cc.tree.depth;
      row.tokens = a.tokens;
      row.steps = a.steps;
      row.mat = a.mat;
      row.wall_time_s = a.wall_time_s;
      row.tokens_per_second = a.tokens_per_second;
    } catch (const std::invalid_argument& e) {
      row.warning = e.what();
    }
    report.rows.push_back(std::move(row));
  };

  for (std::size_t b : breadths) run_point("breadth", b, b, base_depth);
  for (std::int32_t d : depths) {
    run_point("depth", static_cast<std::size_t>(d), base_nodes, d);
  }
  return report;
}

struct AblateRow {
  std::string strategy;  // zero | random | fixed-hot | shuffle-hot
  AggregateMetrics metrics;
};

struct AblateReport {
  DecodeConfig config;
  std::vector<AblateRow> rows;
  std::vector<std::string> annotations;  // directional observations, never hard failures
};

/// Initialization ablation. zero / random / fixed-hot re-create the matrix
/// before every case (so each case sees exactly the named starting state);
/// fixed-hot loads the warm-up matrix file each time. shuffle-hot runs the
/// cases in a seed-shuffled order with one matrix carried through, the
/// "heat arrives from unrelated text" condition.
inline AblateReport ablate_init(const LanguageModelOracle& model,
                                const std::vector<BenchCase>& cases,
                                const std::vector<std::string>& strategies,
                                const DecodeConfig& config, const std::string& hot_matrix_path) {
  if (cases.empty()) throw std::invalid_argument("ablate_init: empty case list");
  if (strategies.empty()) throw std::invalid_argument("ablate_init: no strategies");
  AblateReport report;
  report.config = config;

  for (const std::string& strategy : strategies) {
    std::optional<InitStrategy> per_case_init;
    if (strategy == "zero") {
      per_case_init = InitStrategy::zero();
    } else if (strategy == "random") {
      per_case_init = InitStrategy::random(config.rng_seed);
    } else if (strategy == "fixed-hot") {
      if (hot_matrix_path.empty()) {
        throw std::invalid_argument("ablate_init: fixed-hot needs a warm-up matrix file");
      }
      per_case_init = InitStrategy::hot(hot_matrix_path);
    } else if (strategy != "shuffle-hot") {
      throw std::invalid_argument("ablate_init: unknown strategy '" + strategy + "'");
    }

    AblateRow row;
    row.strategy = strategy;
    std::size_t tokens = 0, steps = 0;
    double mat_sum = 0.0, wall = 0.0;
    std::vector<TokenId> all_tokens;

    auto run_case = [&](const BenchCase& c, RecycleMatrix& matrix) {
      DecodeConfig cc = config;
      cc.max_new_tokens = c.max_new_tokens;
      DecodeResult r = tr_decode(model, c.prompt, cc, matrix);
      MethodMetrics m = compute_metrics(r, nullptr);
      tokens += m.tokens;
      steps += m.steps;
      mat_sum += m.mat;
      wall += m.wall_time_s;
      all_tokens.insert(all_tokens.end(), r.tokens.begin(), r.tokens.end());
    };

    if (strategy == "shuffle-hot") {
      std::vector<std::size_t> order(cases.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng::Stream stream(config.rng_seed ^ 0x5b5b5b5b5b5b5b5bull);
      for (std::size_t i = order.size(); i > 1; --i) {  // Fisher-Yates
        std::size_t j = static_cast<std::size_t>(stream.next_below(i));
        std::swap(order[i - 1], order[j]);
      }
      RecycleMatrix matrix = RecycleMatrix::make(model.vocab().size, config.k, InitStrategy::zero());
      for (std::size_t idx : order) run_case(cases[idx], matrix);
    } else {
      for (const BenchCase& c : cases) {
        RecycleMatrix matrix = RecycleMatrix::make(model.vocab().size, config.k, *per_case_init);
        run_case(c, matrix);
      }
    }

    row.metrics.tokens = tokens;
    row.metrics.steps = steps;
    row.metrics.mat = steps ? static_cast<double>(tokens) / static_cast<double>(steps) : 0.0;
    row.metrics.mat_mean_cases = mat_sum / static_cast<double>(cases.size());
    row.metrics.output_hash = fnv1a_hex(all_tokens);
    row.metrics.wall_time_s = wall;
    row.metrics.tokens_per_second = wall > 0.0 ? static_cast<double>(tokens) / wall : 0.0;
    report.rows.push_back(std::move(row));
  }

  auto find_mat = [&](const std::string& s) -> std::optional<double> {
    for (const AblateRow& r : report.rows) {
      if (r.strategy == s) return r.metrics.mat;
    }
    return std::nullopt;
  };
  auto note = [&](const std::string& a, const std::string& b) {
    std::optional<double> ma = find_mat(a), mb = find_mat(b);
    if (ma && mb) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "mat(%s)=%.4f <= mat(%s)=%.4f: %s", a.c_str(), *ma, b.c_str(),
                    *mb, *ma <= *mb ? "yes" : "no");
      report.annotations.emplace_back(buf);
    }
  };
  note("random", "zero");
  note("zero", "fixed-hot");
  note("zero", "shuffle-hot");
  return report;
}

// ---- report emitters ------------------------------------------------------

namespace detail {

inline nlohmann::json timing_json(const MethodMetrics& m) {
  nlohmann::json t{{"wall_time_s", m.wall_time_s}, {"tokens_per_second", m.tokens_per_second}};
  if (m.speedup_vs_ar) t["speedup_vs_ar"] = *m.speedup_vs_ar;
  t["phases"] = {{"retrieve_s", m.phases.retrieve_s},
                 {"evaluate_s", m.phases.evaluate_s},
                 {"verify_s", m.phases.verify_s},
                 {"update_s", m.phases.update_s}};
  return t;
}

inline nlohmann::json metrics_json(const MethodMetrics& m) {
  nlohmann::json j{{"tokens", m.tokens}, {"steps", m.steps}, {"mat", m.mat},
                   {"output_hash", m.output_hash}};
  j["step_reduction"] = m.step_reduction ? nlohmann::json(*m.step_reduction) : nlohmann::json();
  j["timing"] = timing_json(m);
  return j;
}

inline nlohmann::json aggregate_json(const AggregateMetrics& a) {
  nlohmann::json j{{"tokens", a.tokens},
                   {"steps", a.steps},
                   {"mat", a.mat},
                   {"mat_mean_cases", a.mat_mean_cases},
                   {"output_hash", a.output_hash}};
  j["step_reduction"] = a.step_reduction ? nlohmann::json(*a.step_reduction) : nlohmann::json();
  nlohmann::json t{{"wall_time_s", a.wall_time_s}, {"tokens_per_second", a.tokens_per_second}};
  if (a.speedup_vs_ar) t["speedup_vs_ar"] = *a.speedup_vs_ar;
  j["timing"] = t;
  return j;
}

inline nlohmann::json config_json(const DecodeConfig& c) {
  return {{"k", c.k},
          {"tree_nodes", c.tree.nodes.size()},
          {"tree_depth", c.tree.depth},
          {"temperature", c.temperature},
          {"seed", c.rng_seed},
          {"init", to_string(c.init.kind)},
          {"update", to_string(c.update)},
          {"update_scope", to_string(c.scope)},
          {"max_new_tokens", c.max_new_tokens}};
}

}  // namespace detail

inline nlohmann::json report_to_json(const BenchReport& report) {
  nlohmann::json j;
  j["kind"] = "bench";
  j["config"] = detail::config_json(report.config);
  j["config"]["methods"] = report.methods;
  if (!report.corpus_label.empty()) j["config"]["corpus"] = report.corpus_label;
  j["cases"] = nlohmann::json::array();
  for (const CaseReport& c : report.cases) {
    nlohmann::json cj{{"name", c.name}, {"category", c.category}};
    for (const auto& [method, m] : c.methods) cj["methods"][method] = detail::metrics_json(m);
    j["cases"].push_back(std::move(cj));
  }
  for (const auto& [method, a] : report.aggregate) {
    j["aggregate"][method] = detail::aggregate_json(a);
  }
  j["losslessness"] = {{"checked", report.lossless_checked},
                       {"identical_outputs", report.lossless_checked && report.lossless_identical}};
  return j;
}

inline std::string report_to_csv(const BenchReport& report) {
  std::string out =
      "case,category,method,tokens,steps,mat,step_reduction,output_hash,"
      "wall_time_s,tokens_per_second\n";
  char buf[256];
  for (const CaseReport& c : report.cases) {
    for (const auto& [method, m] : c.methods) {
      std::snprintf(buf, sizeof buf, "%s,%s,%s,%zu,%zu,%.6f,%s,%s,%.6f,%.1f\n", c.name.c_str(),
                    c.category.c_str(), method.c_str(), m.tokens, m.steps, m.mat,
                    m.step_reduction ? std::to_string(*m.step_reduction).c_str() : "",
                    m.output_hash.c_str(), m.wall_time_s, m.tokens_per_second);
      out += buf;
    }
  }
  return out;
}

inline nlohmann::json report_to_json(const SweepReport& report) {
  nlohmann::json j;
  j["kind"] = "sweep";
  j["config"] = detail::config_json(report.config);
  j["grid"] = nlohmann::json::array();
  for (const SweepRow& r : report.rows) {
    nlohmann::json rj{{"kind", r.kind}, {"requested", r.requested}};
    if (!r.warning.empty()) {
      rj["skipped"] = r.warning;
    } else {
      rj["nodes"] = r.nodes;
      rj["depth"] = r.depth;
      rj["tokens"] = r.tokens;
      rj["steps"] = r.steps;
      rj["mat"] = r.mat;
      rj["timing"] = {{"wall_time_s", r.wall_time_s}, {"tokens_per_second", r.tokens_per_second}};
    }
    j["grid"].push_back(std::move(rj));
  }
  return j;
}

inline std::string report_to_csv(const SweepReport& report) {
  std::string out = "kind,requested,nodes,depth,tokens,steps,mat,wall_time_s,warning\n";
  char buf[256];
  for (const SweepRow& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%d,%zu,%zu,%.6f,%.6f,%s\n", r.kind.c_str(),
                  r.requested, r.nodes, r.depth, r.tokens, r.steps, r.mat, r.wall_time_s,
                  r.warning.c_str());
    out += buf;
  }
  return out;
}

inline nlohmann::json report_to_json(const AblateReport& report) {
  nlohmann::json j;
  j["kind"] = "ablate-init";
  j["config"] = detail::config_json(report.config);
  for (const AblateRow& r : report.rows) {
    j["strategies"][r.strategy] = detail::aggregate_json(r.metrics);
  }
  j["annotations"] = report.annotations;
  return j;
}

}  // namespace tokrec
