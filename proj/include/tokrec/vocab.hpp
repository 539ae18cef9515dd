#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tokrec/common.hpp"

namespace tokrec {

struct Vocabulary {
  std::uint32_t size = 0;
  std::vector<std::string> surface_forms;  // empty, or exactly `size` entries
  TokenId unknown_id = 0;
  std::optional<TokenId> eos_id;  // decoders stop on it when set

  bool valid() const {
    if (size < 2 || unknown_id >= size) return false;
    if (!surface_forms.empty() && surface_forms.size() != size) return false;
    if (eos_id && *eos_id >= size) return false;
    return true;
  }

  std::string surface(TokenId t) const {
    if (t < surface_forms.size()) return surface_forms[t];
    return "<" + std::to_string(t) + ">";
  }

  /// Reverse lookup by surface form; unknown_id when absent.
  TokenId id_of(const std::string& form) const {
    for (std::uint32_t i = 0; i < surface_forms.size(); ++i) {
      if (surface_forms[i] == form) return i;
    }
    return unknown_id;
  }
};

/// Next-token probabilities over a vocabulary, linear space.
using Distribution = std::vector<double>;

/// Rank-ordered candidate tokens: probability descending, ties by ascending id.
using TopK = std::vector<TokenId>;

inline bool is_valid_distribution(std::span<const double> probs) {
  if (probs.empty()) return false;
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) return false;  // also rejects NaN
    sum += p;
  }
  return std::abs(sum - 1.0) <= 1e-6;
}

inline void check_distribution(std::span<const double> probs) {
  if (!is_valid_distribution(probs)) {
    throw std::invalid_argument("invalid probability distribution");
  }
}

/// Indices of the k most probable tokens, probability descending; equal
/// probabilities are ordered by ascending token id, mirroring argmax
/// returning the smallest index on ties.
inline TopK argtop_k(const Distribution& dist, int k) {
  check_distribution(dist);
  if (k < 1 || static_cast<std::size_t>(k) > dist.size()) {
    throw std::invalid_argument("argtop_k: k must be in [1, vocab_size]");
  }
  TopK ids(dist.size());
  std::iota(ids.begin(), ids.end(), TokenId{0});
  auto better = [&dist](TokenId a, TokenId b) {
    if (dist[a] != dist[b]) return dist[a] > dist[b];
    return a < b;
  };
  std::partial_sort(ids.begin(), ids.begin() + k, ids.end(), better);
  ids.resize(static_cast<std::size_t>(k));
  return ids;
}

inline TokenId greedy_token(const Distribution& dist) {
  check_distribution(dist);
  TokenId best = 0;
  for (TokenId t = 1; t < dist.size(); ++t) {
    if (dist[t] > dist[best]) best = t;  // strict: ties keep the smaller id
  }
  return best;
}

/// Draw a token from probs^(1/temperature), renormalized. temperature == 0
/// reduces to greedy_token. The draw is a pure function of
/// (dist, temperature, seed, draw_index); decoders derive draw_index from the
/// step counter so re-draws are reproducible regardless of tree shape.
inline TokenId sample_token(const Distribution& dist, double temperature, std::uint64_t seed,
                            std::uint64_t draw_index) {
  check_distribution(dist);
  if (temperature < 0.0) {
    throw std::invalid_argument("sample_token: temperature must be >= 0");
  }
  if (temperature == 0.0) return greedy_token(dist);

  // Scale relative to the max in log space so extreme temperatures stay finite.
  double max_p = *std::max_element(dist.begin(), dist.end());
  std::vector<double> weights(dist.size(), 0.0);
  double total = 0.0;
  for (std::size_t t = 0; t < dist.size(); ++t) {
    if (dist[t] > 0.0) {
      weights[t] = std::exp((std::log(dist[t]) - std::log(max_p)) / temperature);
      total += weights[t];
    }
  }
  double u = rng::unit_uniform(seed, draw_index) * total;
  double cum = 0.0;
  TokenId last_positive = 0;
  for (TokenId t = 0; t < weights.size(); ++t) {
    if (weights[t] <= 0.0) continue;
    cum += weights[t];
    last_positive = t;
    if (u < cum) return t;
  }
  return last_positive;  // rounding fell past the end
}

}  // namespace tokrec
