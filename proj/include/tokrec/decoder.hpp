#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tokrec/common.hpp"
#include "tokrec/draft_tree.hpp"
#include "tokrec/model.hpp"
#include "tokrec/recycle_matrix.hpp"
#include "tokrec/vocab.hpp"

namespace tokrec {

enum class UpdateScope { accepted_only, all_draft };

inline const char* to_string(UpdateScope s) {
  return s == UpdateScope::accepted_only ? "accepted_only" : "all_draft";
}

struct DecodeConfig {
  std::uint32_t k = 8;
  TreeSpec tree;  // must validate against k
  double temperature = 0.0;
  std::uint64_t rng_seed = 0;
  InitStrategy init;  // zero unless told otherwise
  UpdateStrategy update = UpdateStrategy::sequential;
  UpdateScope scope = UpdateScope::all_draft;
  std::size_t max_new_tokens = 64;
  // prompt-lookup baseline knobs
  std::uint32_t pld_match_len = 2;
  std::uint32_t pld_span = 5;
};

/// One verification step: the ground-truth tokens confirmed by the walk, the
/// draft-node indices they matched, and the fresh per-node candidates that
/// feed the matrix update.
struct StepOutcome {
  std::vector<TokenId> accepted;             // matched drafts + one correction token
  std::vector<std::int32_t> matched_nodes;   // node index of accepted[i], i < accepted-1
  std::vector<TopK> per_node_topk;           // argtop_k of every node's distribution
  MergedSequence merged;
};

struct StepSummary {
  std::uint32_t accepted = 0;                // tokens actually emitted this step
  std::vector<std::int32_t> matched_nodes;   // truncated alongside accepted
};

struct PhaseTimes {
  double retrieve_s = 0.0;
  double evaluate_s = 0.0;
  double verify_s = 0.0;
  double update_s = 0.0;
};

struct DecodeResult {
  std::vector<TokenId> tokens;  // generated tokens, prompt excluded
  std::size_t steps = 0;
  std::vector<StepSummary> per_step;
  double wall_time_s = 0.0;  // wall-clock; never deterministic
  PhaseTimes phases;
};

struct VerifyMode {
  double temperature = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t draw_base = 0;  // draw index of the walk's first ground truth
};

namespace detail {

inline void check_prompt(const LanguageModelOracle& model, std::span<const TokenId> prompt) {
  if (prompt.empty()) throw std::invalid_argument("decode: prompt must be non-empty");
  for (TokenId t : prompt) {
    if (t >= model.vocab().size) throw std::invalid_argument("decode: prompt token out of range");
  }
}

inline void check_config(const DecodeConfig& config) {
  if (config.k < 1) throw std::invalid_argument("decode: k must be >= 1");
  if (config.temperature < 0.0) throw std::invalid_argument("decode: temperature must be >= 0");
  if (config.max_new_tokens < 1) {
    throw std::invalid_argument("decode: max_new_tokens must be >= 1");
  }
}

inline TokenId ground_truth(const Distribution& dist, const VerifyMode& mode,
                            std::uint64_t position) {
  if (mode.temperature == 0.0) return greedy_token(dist);
  return sample_token(dist, mode.temperature, mode.seed, mode.draw_base + position);
}

class StopWatch {
 public:
  StopWatch() : start_(std::chrono::steady_clock::now()) {}
  double lap() {
    auto now = std::chrono::steady_clock::now();
    double s = std::chrono::duration<double>(now - start_).count();
    start_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

/// Walk the draft tree from the root: the ground truth at the current node
/// either matches one of its children (descend, token confirmed) or nobody
/// (stop; that ground truth is the correction token). Children sit in rank
/// order, so a ground truth duplicated among siblings lands on the
/// lowest-rank copy. Always confirms at least one token, never more than
/// depth + 1.
inline StepOutcome verify(const MergedSequence& merged, const std::vector<Distribution>& node_dists,
                          std::uint32_t k, const VerifyMode& mode) {
  if (node_dists.size() != merged.size() || merged.size() == 0) {
    throw std::invalid_argument("verify: node distributions not aligned with merged sequence");
  }
  StepOutcome out;
  out.merged = merged;
  out.per_node_topk.reserve(merged.size());
  for (const Distribution& d : node_dists) out.per_node_topk.push_back(argtop_k(d, k));

  std::vector<std::vector<std::int32_t>> children = child_lists(merged.parents);
  std::int32_t node = 0;
  for (;;) {
    TokenId g = detail::ground_truth(node_dists[static_cast<std::size_t>(node)], mode,
                                     out.accepted.size());
    out.accepted.push_back(g);
    std::int32_t next = -1;
    for (std::int32_t c : children[static_cast<std::size_t>(node)]) {
      if (merged.tokens[static_cast<std::size_t>(c)] == g) {
        next = c;
        break;
      }
    }
    if (next < 0) break;
    out.matched_nodes.push_back(next);
    node = next;
  }
  return out;
}

/// Plain autoregressive loop: one model call, one token per step.
inline DecodeResult ar_decode(const LanguageModelOracle& model, std::span<const TokenId> prompt,
                              const DecodeConfig& config) {
  detail::check_prompt(model, prompt);
  detail::check_config(config);
  detail::StopWatch total;
  DecodeResult res;
  std::vector<TokenId> context(prompt.begin(), prompt.end());
  const std::optional<TokenId>& eos = model.vocab().eos_id;
  for (std::size_t step = 0; step < config.max_new_tokens; ++step) {
    Distribution dist = model.next_distribution(context);
    TokenId t = config.temperature == 0.0
                    ? greedy_token(dist)
                    : sample_token(dist, config.temperature, config.rng_seed, step);
    context.push_back(t);
    res.tokens.push_back(t);
    res.per_step.push_back({1, {}});
    if (eos && t == *eos) break;
  }
  res.steps = res.per_step.size();
  res.wall_time_s = total.lap();
  res.phases.evaluate_s = res.wall_time_s;
  return res;
}

/// Token Recycling loop against a caller-owned matrix (hot state survives the
/// call). Per step: retrieve the draft tree for the last confirmed token,
/// evaluate every node in one batched call, verify the longest matching path,
/// refresh matrix rows with each node's fresh top-k (scope picks which nodes),
/// then emit. The matrix update always sees the full step outcome; EOS and
/// max_new_tokens only truncate what is emitted.
inline DecodeResult tr_decode(const LanguageModelOracle& model, std::span<const TokenId> prompt,
                              const DecodeConfig& config, RecycleMatrix& matrix) {
  detail::check_prompt(model, prompt);
  detail::check_config(config);
  validate_tree(config.tree, config.k);
  if (matrix.vocab_size() != model.vocab().size || matrix.k() != config.k) {
    throw IncompatibleMatrixError(
        "matrix is " + std::to_string(matrix.vocab_size()) + "x" + std::to_string(matrix.k()) +
        ", decode needs " + std::to_string(model.vocab().size) + "x" + std::to_string(config.k));
  }

  detail::StopWatch total;
  DecodeResult res;
  std::vector<TokenId> context(prompt.begin(), prompt.end());
  const std::optional<TokenId>& eos = model.vocab().eos_id;
  const std::uint64_t draw_stride = static_cast<std::uint64_t>(config.tree.depth) + 1;
  bool stop = false;
  for (std::size_t step = 0; res.tokens.size() < config.max_new_tokens && !stop; ++step) {
    detail::StopWatch phase;
    MergedSequence merged = retrieve(matrix, config.tree, context.back());
    res.phases.retrieve_s += phase.lap();

    std::span<const TokenId> before_root(context.data(), context.size() - 1);
    std::vector<Distribution> dists = evaluate_tree(model, before_root, merged);
    res.phases.evaluate_s += phase.lap();

    VerifyMode mode{config.temperature, config.rng_seed, step * draw_stride};
    StepOutcome outcome = verify(merged, dists, config.k, mode);
    res.phases.verify_s += phase.lap();

    if (config.scope == UpdateScope::all_draft) {
      matrix.update(outcome.merged.tokens, outcome.per_node_topk, config.update);
    } else {
      // rows of the confirmed path only: the root (last confirmed token) plus
      // every matched draft node; the trailing correction token has no
      // distribution of its own yet
      std::vector<TokenId> tokens{outcome.merged.tokens[0]};
      std::vector<TopK> rows{outcome.per_node_topk[0]};
      for (std::int32_t nidx : outcome.matched_nodes) {
        tokens.push_back(outcome.merged.tokens[static_cast<std::size_t>(nidx)]);
        rows.push_back(outcome.per_node_topk[static_cast<std::size_t>(nidx)]);
      }
      matrix.update(tokens, rows, config.update);
    }
    res.phases.update_s += phase.lap();

    std::vector<TokenId> emit = outcome.accepted;
    if (eos) {
      auto it = std::find(emit.begin(), emit.end(), *eos);
      if (it != emit.end()) {
        emit.resize(static_cast<std::size_t>(it - emit.begin()) + 1);
        stop = true;
      }
    }
    std::size_t room = config.max_new_tokens - res.tokens.size();
    if (emit.size() > room) emit.resize(room);

    StepSummary summary;
    summary.accepted = static_cast<std::uint32_t>(emit.size());
    std::size_t matched_kept = std::min(outcome.matched_nodes.size(), emit.size());
    summary.matched_nodes.assign(outcome.matched_nodes.begin(),
                                 outcome.matched_nodes.begin() +
                                     static_cast<std::ptrdiff_t>(matched_kept));
    res.per_step.push_back(std::move(summary));
    context.insert(context.end(), emit.begin(), emit.end());
    res.tokens.insert(res.tokens.end(), emit.begin(), emit.end());
  }
  res.steps = res.per_step.size();
  res.wall_time_s = total.lap();
  return res;
}

/// Convenience overload: build the matrix from config.init, decode, drop it.
inline DecodeResult tr_decode(const LanguageModelOracle& model, std::span<const TokenId> prompt,
                              const DecodeConfig& config) {
  RecycleMatrix matrix = RecycleMatrix::make(model.vocab().size, config.k, config.init);
  return tr_decode(model, prompt, config, matrix);
}

/// Prompt-lookup baseline: drafts are copied verbatim from after the most
/// recent prior occurrence of the context's trailing pld_match_len tokens,
/// verified as a linear chain. No matrix, no learning.
inline DecodeResult pld_decode(const LanguageModelOracle& model, std::span<const TokenId> prompt,
                               const DecodeConfig& config) {
  detail::check_prompt(model, prompt);
  detail::check_config(config);
  if (config.pld_match_len < 1 || config.pld_span < 1) {
    throw std::invalid_argument("decode: pld_match_len and pld_span must be >= 1");
  }

  detail::StopWatch total;
  DecodeResult res;
  std::vector<TokenId> context(prompt.begin(), prompt.end());
  const std::optional<TokenId>& eos = model.vocab().eos_id;
  const std::uint64_t draw_stride = static_cast<std::uint64_t>(config.pld_span) + 1;
  bool stop = false;
  for (std::size_t step = 0; res.tokens.size() < config.max_new_tokens && !stop; ++step) {
    detail::StopWatch phase;
    // rightmost earlier window equal to the current suffix, with at least one
    // token after it to copy
    const std::size_t len = context.size();
    const std::size_t m = config.pld_match_len;
    std::vector<TokenId> drafts;
    if (len >= m + 1) {
      for (std::size_t end = len - 2; end + 1 >= m; --end) {  // end = last index of window
        bool match = true;
        for (std::size_t j = 0; j < m; ++j) {
          if (context[end - j] != context[len - 1 - j]) {
            match = false;
            break;
          }
        }
        if (match) {
          for (std::size_t p = end + 1; p < len && drafts.size() < config.pld_span; ++p) {
            drafts.push_back(context[p]);
          }
          break;
        }
        if (end == 0) break;
      }
    }
    MergedSequence merged;
    merged.tokens.push_back(context.back());
    merged.parents.push_back(-1);
    for (std::size_t i = 0; i < drafts.size(); ++i) {
      merged.tokens.push_back(drafts[i]);
      merged.parents.push_back(static_cast<std::int32_t>(i));
    }
    res.phases.retrieve_s += phase.lap();

    std::span<const TokenId> before_root(context.data(), context.size() - 1);
    std::vector<Distribution> dists = evaluate_tree(model, before_root, merged);
    res.phases.evaluate_s += phase.lap();

    VerifyMode mode{config.temperature, config.rng_seed, step * draw_stride};
    StepOutcome outcome = verify(merged, dists, 1, mode);
    res.phases.verify_s += phase.lap();

    std::vector<TokenId> emit = outcome.accepted;
    if (eos) {
      auto it = std::find(emit.begin(), emit.end(), *eos);
      if (it != emit.end()) {
        emit.resize(static_cast<std::size_t>(it - emit.begin()) + 1);
        stop = true;
      }
    }
    std::size_t room = config.max_new_tokens - res.tokens.size();
    if (emit.size() > room) emit.resize(room);

    res.per_step.push_back({static_cast<std::uint32_t>(emit.size()), {}});
    context.insert(context.end(), emit.begin(), emit.end());
    res.tokens.insert(res.tokens.end(), emit.begin(), emit.end());
  }
  res.steps = res.per_step.size();
  res.wall_time_s = total.lap();
  return res;
}

}  // namespace tokrec
