// tokrec — command-line front end: train the n-gram oracle, decode with the
// ar/tr/pld engines, run benchmarks/sweeps/ablations, calibrate draft trees,
// and poke at matrix files.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tokrec/tokrec.hpp"

namespace {

struct CommonFlags {
  std::string model_path;
  std::string tree_path;
  std::uint32_t k = 8;
  double temperature = 0.0;
  std::uint64_t seed = 0;
  std::string init = "zero";
  std::string update = "sequential";
  std::string scope = "all";
  std::size_t max_new_tokens = 64;
};

void add_decode_flags(CLI::App* cmd, CommonFlags& f, bool with_model = true) {
  if (with_model) {
    cmd->add_option("--model", f.model_path, "trained n-gram model file (TRNG)")->required();
  }
  cmd->add_option("--tree", f.tree_path,
                  "draft tree file; default is a built-in 81-node, 6-layer tree");
  cmd->add_option("--k", f.k, "candidates per matrix row")->capture_default_str();
  cmd->add_option("--temperature", f.temperature, "0 = greedy, >0 = sampled")
      ->capture_default_str();
  cmd->add_option("--seed", f.seed, "seed for all randomness")->capture_default_str();
  cmd->add_option("--init", f.init, "matrix init: zero | random | hot:PATH")
      ->capture_default_str();
  cmd->add_option("--update", f.update, "duplicate handling: sequential | first | last")
      ->capture_default_str();
  cmd->add_option("--update-scope", f.scope, "rows to refresh: accepted | all")
      ->capture_default_str();
  cmd->add_option("--max-new-tokens", f.max_new_tokens, "tokens to generate per case")
      ->capture_default_str();
}

tokrec::DecodeConfig build_config(const CommonFlags& f) {
  tokrec::DecodeConfig config;
  config.k = f.k;
  config.temperature = f.temperature;
  config.rng_seed = f.seed;
  config.max_new_tokens = f.max_new_tokens;

  if (f.tree_path.empty()) {
    config.tree = tokrec::make_tree(81, 5, f.k);
  } else {
    config.tree = tokrec::load_tree(f.tree_path);
  }
  tokrec::validate_tree(config.tree, config.k);

  if (f.init == "zero") {
    config.init = tokrec::InitStrategy::zero();
  } else if (f.init == "random") {
    config.init = tokrec::InitStrategy::random(f.seed);
  } else if (f.init.rfind("hot:", 0) == 0) {
    config.init = tokrec::InitStrategy::hot(f.init.substr(4));
  } else {
    throw std::invalid_argument("--init must be zero, random, or hot:PATH");
  }

  if (f.update == "sequential") {
    config.update = tokrec::UpdateStrategy::sequential;
  } else if (f.update == "first") {
    config.update = tokrec::UpdateStrategy::first;
  } else if (f.update == "last") {
    config.update = tokrec::UpdateStrategy::last;
  } else {
    throw std::invalid_argument("--update must be sequential, first, or last");
  }

  if (f.scope == "accepted") {
    config.scope = tokrec::UpdateScope::accepted_only;
  } else if (f.scope == "all") {
    config.scope = tokrec::UpdateScope::all_draft;
  } else {
    throw std::invalid_argument("--update-scope must be accepted or all");
  }
  return config;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t comma = s.find(',', start);
    if (comma == std::string::npos) comma = s.size();
    if (comma > start) out.push_back(s.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

void write_or_print(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text << "\n";
    return;
  }
  std::ofstream out(out_path);
  if (!out) throw tokrec::IoError("cannot open " + out_path + " for writing");
  out << text << "\n";
  if (!out) throw tokrec::IoError("write failed: " + out_path);
}

int cmd_train(const std::string& corpus, std::uint32_t order, double alpha,
              std::uint32_t vocab_cap, const std::string& out_path) {
  tokrec::NGramModel model = tokrec::train_ngram(corpus, order, alpha, vocab_cap);
  model.save(out_path);
  std::printf("trained order-%u model: vocab=%u alpha=%g -> %s\n", model.order(),
              model.vocab().size, model.alpha(), out_path.c_str());
  return 0;
}

int cmd_decode(const CommonFlags& flags, const std::string& prompt_text,
               const std::string& method, const std::string& save_matrix) {
  tokrec::NGramModel model = tokrec::NGramModel::load(flags.model_path);
  tokrec::DecodeConfig config = build_config(flags);
  std::vector<tokrec::TokenId> prompt =
      tokrec::encode(model.vocab(), tokrec::tokenize_text(prompt_text));
  if (prompt.empty()) throw std::invalid_argument("--prompt tokenized to nothing");

  tokrec::DecodeResult result;
  if (method == "ar") {
    result = tokrec::ar_decode(model, prompt, config);
  } else if (method == "tr") {
    tokrec::RecycleMatrix matrix =
        tokrec::RecycleMatrix::make(model.vocab().size, config.k, config.init);
    result = tokrec::tr_decode(model, prompt, config, matrix);
    if (!save_matrix.empty()) matrix.save(save_matrix);
  } else if (method == "pld") {
    result = tokrec::pld_decode(model, prompt, config);
  } else {
    throw std::invalid_argument("--method must be ar, tr, or pld");
  }

  std::cout << tokrec::detokenize(model.vocab(), result.tokens) << "\n";
  double mat = static_cast<double>(result.tokens.size()) / static_cast<double>(result.steps);
  std::printf("method=%s tokens=%zu steps=%zu mat=%.3f wall_s=%.4f tokens_per_s=%.1f\n",
              method.c_str(), result.tokens.size(), result.steps, mat, result.wall_time_s,
              result.wall_time_s > 0 ? static_cast<double>(result.tokens.size()) / result.wall_time_s
                                     : 0.0);
  return 0;
}

int cmd_bench(const CommonFlags& flags, const std::string& corpus, const std::string& methods_csv,
              std::size_t prompt_tokens, const std::string& out_path, const std::string& format,
              const std::string& hot_matrix, bool ablate) {
  tokrec::NGramModel model = tokrec::NGramModel::load(flags.model_path);
  tokrec::DecodeConfig config = build_config(flags);
  std::vector<tokrec::BenchCase> cases = tokrec::load_corpus_cases(
      tokrec::read_text_file(corpus), model.vocab(), prompt_tokens, flags.max_new_tokens);

  nlohmann::json j;
  std::string csv;
  if (ablate) {
    std::vector<std::string> strategies = split_csv(methods_csv);
    tokrec::AblateReport report =
        tokrec::ablate_init(model, cases, strategies, config, hot_matrix);
    j = tokrec::report_to_json(report);
    if (format == "csv") throw std::invalid_argument("--ablate-init reports are json only");
  } else {
    tokrec::BenchReport report = tokrec::run_bench(model, cases, split_csv(methods_csv), config);
    report.corpus_label = corpus;
    j = tokrec::report_to_json(report);
    if (format == "csv") csv = tokrec::report_to_csv(report);
  }

  if (format == "json") {
    write_or_print(j.dump(2), out_path);
  } else if (format == "csv") {
    write_or_print(csv, out_path);
  } else {
    throw std::invalid_argument("--format must be json or csv");
  }
  return 0;
}

int cmd_sweep(const CommonFlags& flags, const std::string& corpus, const std::string& breadths_csv,
              const std::string& depths_csv, std::size_t prompt_tokens,
              const std::string& out_path, const std::string& format) {
  tokrec::NGramModel model = tokrec::NGramModel::load(flags.model_path);
  tokrec::DecodeConfig config = build_config(flags);
  std::vector<tokrec::BenchCase> cases = tokrec::load_corpus_cases(
      tokrec::read_text_file(corpus), model.vocab(), prompt_tokens, flags.max_new_tokens);

  std::vector<std::size_t> breadths;
  for (const std::string& s : split_csv(breadths_csv)) breadths.push_back(std::stoull(s));
  std::vector<std::int32_t> depths;
  for (const std::string& s : split_csv(depths_csv)) depths.push_back(std::stoi(s));

  tokrec::SweepReport report = tokrec::sweep_tree(model, cases, config, breadths, depths);
  if (format == "json") {
    write_or_print(tokrec::report_to_json(report).dump(2), out_path);
  } else if (format == "csv") {
    write_or_print(tokrec::report_to_csv(report), out_path);
  } else {
    throw std::invalid_argument("--format must be json or csv");
  }
  return 0;
}

int cmd_calibrate(const CommonFlags& flags, const std::string& corpus, std::int32_t branch,
                  std::int32_t depth, std::size_t target, std::size_t prune_step,
                  std::size_t prompt_tokens, const std::string& out_path) {
  tokrec::NGramModel model = tokrec::NGramModel::load(flags.model_path);
  tokrec::DecodeConfig config;
  config.k = static_cast<std::uint32_t>(branch);  // validation tree uses ranks 0..branch-1
  config.temperature = 0.0;
  config.rng_seed = flags.seed;
  config.max_new_tokens = flags.max_new_tokens;
  config.tree = tokrec::make_balanced_tree(branch, depth);

  std::vector<tokrec::BenchCase> cases = tokrec::load_corpus_cases(
      tokrec::read_text_file(corpus), model.vocab(), prompt_tokens, flags.max_new_tokens);
  std::vector<std::uint64_t> counts = tokrec::collect_hit_counts(model, cases, config);
  tokrec::TreeSpec spec = tokrec::calibrate_tree(branch, depth, counts, target, prune_step);
  tokrec::validate_tree(spec, static_cast<std::uint32_t>(branch));
  tokrec::save_tree(spec, out_path);
  std::printf("calibrated tree: %zu nodes, %d draft layers -> %s\n", spec.nodes.size(), spec.depth,
              out_path.c_str());
  return 0;
}

int cmd_matrix_copy(const std::string& in_path, const std::string& out_path) {
  tokrec::RecycleMatrix m = tokrec::RecycleMatrix::load(in_path);
  m.save(out_path);
  std::printf("matrix %ux%u -> %s\n", m.vocab_size(), m.k(), out_path.c_str());
  return 0;
}

int cmd_matrix_inspect(const std::string& in_path, const std::string& model_path,
                       const std::string& token) {
  tokrec::RecycleMatrix m = tokrec::RecycleMatrix::load(in_path);
  tokrec::NGramModel model = tokrec::NGramModel::load(model_path);
  if (model.vocab().size != m.vocab_size()) {
    throw tokrec::IncompatibleMatrixError("matrix vocab_size " + std::to_string(m.vocab_size()) +
                                          " != model vocab " +
                                          std::to_string(model.vocab().size));
  }
  bool numeric = !token.empty() && token.find_first_not_of("0123456789") == std::string::npos;
  tokrec::TokenId id = numeric ? static_cast<tokrec::TokenId>(std::stoul(token))
                               : model.vocab().id_of(token);
  if (id >= m.vocab_size()) throw std::invalid_argument("token id out of range");
  std::printf("row %u (%s):\n", id, model.vocab().surface(id).c_str());
  auto row = m.row(id);
  for (std::size_t r = 0; r < row.size(); ++r) {
    std::printf("  rank %zu: %u (%s)\n", r, row[r], model.vocab().surface(row[r]).c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"token-recycling speculative decoding toolkit"};
  app.require_subcommand(1);

  // train-ngram
  auto* train = app.add_subcommand("train-ngram", "train the n-gram oracle from a text corpus");
  std::string train_corpus, train_out;
  std::uint32_t train_order = 3, train_cap = 128;
  double train_alpha = 0.05;
  train->add_option("--corpus", train_corpus, "training text")->required();
  train->add_option("--order", train_order, "n-gram order")->capture_default_str();
  train->add_option("--alpha", train_alpha, "add-alpha smoothing")->capture_default_str();
  train->add_option("--vocab-cap", train_cap, "max surface forms kept")->capture_default_str();
  train->add_option("--out", train_out, "output model file")->required();

  // decode
  auto* decode = app.add_subcommand("decode", "generate text with one engine");
  CommonFlags decode_flags;
  std::string decode_prompt, decode_method = "tr", decode_save_matrix;
  add_decode_flags(decode, decode_flags);
  decode->add_option("--prompt", decode_prompt, "prompt text")->required();
  decode->add_option("--method", decode_method, "ar | tr | pld")->capture_default_str();
  decode->add_option("--save-matrix", decode_save_matrix,
                     "write the end-of-run matrix (tr only), for hot starts later");

  // bench
  auto* bench = app.add_subcommand("bench", "run methods over a corpus and emit a report");
  CommonFlags bench_flags;
  std::string bench_corpus, bench_methods = "ar,tr", bench_out, bench_format = "json";
  std::string bench_hot_matrix;
  std::size_t bench_prompt_tokens = 16;
  bool bench_ablate = false;
  add_decode_flags(bench, bench_flags);
  bench->add_option("--corpus", bench_corpus, "benchmark corpus")->required();
  bench->add_option("--methods", bench_methods,
                    "comma list of ar,tr,pld; with --ablate-init: zero,random,fixed-hot,shuffle-hot")
      ->capture_default_str();
  bench->add_option("--prompt-tokens", bench_prompt_tokens, "prompt tokens per case")
      ->capture_default_str();
  bench->add_option("--out", bench_out, "report path (stdout when omitted)");
  bench->add_option("--format", bench_format, "json | csv")->capture_default_str();
  bench->add_flag("--ablate-init", bench_ablate,
                  "treat --methods as init strategies and ablate initialization");
  bench->add_option("--hot-matrix", bench_hot_matrix, "warm-up matrix for fixed-hot");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "tree breadth/depth sweeps");
  CommonFlags sweep_flags;
  std::string sweep_corpus, sweep_breadths = "20,40,60,80", sweep_depths = "2,4,5,7";
  std::string sweep_out, sweep_format = "json";
  std::size_t sweep_prompt_tokens = 16;
  add_decode_flags(sweep, sweep_flags);
  sweep->add_option("--corpus", sweep_corpus, "benchmark corpus")->required();
  sweep->add_option("--breadths", sweep_breadths, "node budgets at the base depth")
      ->capture_default_str();
  sweep->add_option("--depths", sweep_depths, "depths at the base node count")
      ->capture_default_str();
  sweep->add_option("--prompt-tokens", sweep_prompt_tokens, "prompt tokens per case")
      ->capture_default_str();
  sweep->add_option("--out", sweep_out, "report path (stdout when omitted)");
  sweep->add_option("--format", sweep_format, "json | csv")->capture_default_str();

  // calibrate-tree
  auto* cal = app.add_subcommand("calibrate-tree",
                                 "derive an imbalanced tree from balanced-tree hit counts");
  CommonFlags cal_flags;
  std::string cal_corpus, cal_out;
  std::int32_t cal_branch = 8, cal_depth = 5;
  std::size_t cal_target = 81, cal_prune = 8, cal_prompt_tokens = 16;
  cal->add_option("--model", cal_flags.model_path, "trained n-gram model file (TRNG)")->required();
  cal->add_option("--corpus", cal_corpus, "validation corpus")->required();
  cal->add_option("--branch", cal_branch, "balanced tree branching")->capture_default_str();
  cal->add_option("--depth", cal_depth, "draft layers below the root")->capture_default_str();
  cal->add_option("--target", cal_target, "node budget")->capture_default_str();
  cal->add_option("--prune-step", cal_prune, "nodes kept per refinement round")
      ->capture_default_str();
  cal->add_option("--prompt-tokens", cal_prompt_tokens, "prompt tokens per case")
      ->capture_default_str();
  cal->add_option("--max-new-tokens", cal_flags.max_new_tokens, "tokens per validation case")
      ->capture_default_str();
  cal->add_option("--seed", cal_flags.seed, "seed")->capture_default_str();
  cal->add_option("--out", cal_out, "output tree file")->required();

  // matrix {export, import, inspect}
  auto* matrix = app.add_subcommand("matrix", "matrix file utilities");
  matrix->require_subcommand(1);
  std::string mx_in, mx_out, mx_model, mx_token;
  auto* mx_export = matrix->add_subcommand("export", "validate and re-emit a matrix file");
  mx_export->add_option("--in", mx_in, "input matrix")->required();
  mx_export->add_option("--out", mx_out, "output matrix")->required();
  auto* mx_import = matrix->add_subcommand("import", "validate and re-emit a matrix file");
  mx_import->add_option("--in", mx_in, "input matrix")->required();
  mx_import->add_option("--out", mx_out, "output matrix")->required();
  auto* mx_inspect = matrix->add_subcommand("inspect", "print one row with surface forms");
  mx_inspect->add_option("--in", mx_in, "input matrix")->required();
  mx_inspect->add_option("--model", mx_model, "model file for surface forms")->required();
  mx_inspect->add_option("token", mx_token, "surface form, or a numeric token id")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help/version exit 0, every usage problem exits 2
  }

  try {
    if (*train) return cmd_train(train_corpus, train_order, train_alpha, train_cap, train_out);
    if (*decode) return cmd_decode(decode_flags, decode_prompt, decode_method, decode_save_matrix);
    if (*bench) {
      return cmd_bench(bench_flags, bench_corpus, bench_methods, bench_prompt_tokens, bench_out,
                       bench_format, bench_hot_matrix, bench_ablate);
    }
    if (*sweep) {
      return cmd_sweep(sweep_flags, sweep_corpus, sweep_breadths, sweep_depths,
                       sweep_prompt_tokens, sweep_out, sweep_format);
    }
    if (*cal) {
      return cmd_calibrate(cal_flags, cal_corpus, cal_branch, cal_depth, cal_target, cal_prune,
                           cal_prompt_tokens, cal_out);
    }
    if (*mx_export) return cmd_matrix_copy(mx_in, mx_out);
    if (*mx_import) return cmd_matrix_copy(mx_in, mx_out);
    if (*mx_inspect) return cmd_matrix_inspect(mx_in, mx_model, mx_token);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
