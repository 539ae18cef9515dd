#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tokrec/common.hpp"
#include "tokrec/vocab.hpp"

namespace tokrec {

/// How duplicate tokens inside one update batch are resolved. The uncontrolled
/// parallel merge is replaced by deterministic sequential application; its
/// final state coincides with `last`.
enum class UpdateStrategy { sequential, first, last };

inline const char* to_string(UpdateStrategy s) {
  switch (s) {
    case UpdateStrategy::sequential: return "sequential";
    case UpdateStrategy::first: return "first";
    case UpdateStrategy::last: return "last";
  }
  return "?";
}

struct InitStrategy {
  enum class Kind { zero, random, hot };
  Kind kind = Kind::zero;
  std::uint64_t seed = 0;  // random only
  std::string path;        // hot only

  static InitStrategy zero() { return {}; }
  static InitStrategy random(std::uint64_t seed) { return {Kind::random, seed, {}}; }
  static InitStrategy hot(std::string path) { return {Kind::hot, 0, std::move(path)}; }
};

inline const char* to_string(InitStrategy::Kind k) {
  switch (k) {
    case InitStrategy::Kind::zero: return "zero";
    case InitStrategy::Kind::random: return "random";
    case InitStrategy::Kind::hot: return "hot";
  }
  return "?";
}

/// The retrieval library: row t holds the k most recent candidate successors
/// of token t, rank ordered. Stored flat, vocab_size x k. One decoding
/// session owns the matrix mutably; it is never shared across sessions.
class RecycleMatrix {
 public:
  static constexpr char kMagic[4] = {'T', 'R', 'M', 'X'};
  static constexpr std::uint32_t kFormatVersion = 1;
  static constexpr std::size_t kHeaderBytes = 16;

  RecycleMatrix(std::uint32_t vocab_size, std::uint32_t k)
      : vocab_size_(vocab_size), k_(k), rows_(std::size_t{vocab_size} * k, TokenId{0}) {
    if (vocab_size < 2) throw std::invalid_argument("RecycleMatrix: vocab_size must be >= 2");
    if (k < 1) throw std::invalid_argument("RecycleMatrix: k must be >= 1");
  }

  static RecycleMatrix make(std::uint32_t vocab_size, std::uint32_t k, const InitStrategy& init) {
    switch (init.kind) {
      case InitStrategy::Kind::zero:
        return RecycleMatrix(vocab_size, k);
      case InitStrategy::Kind::random: {
        RecycleMatrix m(vocab_size, k);
        rng::Stream stream(init.seed);
        for (auto& cell : m.rows_) cell = static_cast<TokenId>(stream.next_below(vocab_size));
        return m;
      }
      case InitStrategy::Kind::hot: {
        RecycleMatrix m = load(init.path);
        if (m.vocab_size_ != vocab_size || m.k_ != k) {
          throw IncompatibleMatrixError(
              "hot-start matrix " + init.path + " has dimensions " +
              std::to_string(m.vocab_size_) + "x" + std::to_string(m.k_) + ", expected " +
              std::to_string(vocab_size) + "x" + std::to_string(k));
        }
        return m;
      }
    }
    throw std::invalid_argument("RecycleMatrix: unknown init strategy");
  }

  std::uint32_t vocab_size() const { return vocab_size_; }
  std::uint32_t k() const { return k_; }

  /// Row t in rank order (candidate successors of token t).
  std::span<const TokenId> row(TokenId t) const {
    if (t >= vocab_size_) {
      throw std::invalid_argument("RecycleMatrix::row: token " + std::to_string(t) +
                                  " out of range");
    }
    return {rows_.data() + std::size_t{t} * k_, k_};
  }

  /// Overwrite rows for the given (token, candidates) pairs. Deduplication is
  /// governed by the strategy; sequential applies pairs in list order so the
  /// last occurrence wins the final state.
  void update(std::span<const TokenId> tokens, std::span<const TopK> candidate_rows,
              UpdateStrategy strategy) {
    if (tokens.size() != candidate_rows.size()) {
      throw std::invalid_argument("RecycleMatrix::update: tokens and rows length mismatch");
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i] >= vocab_size_) {
        throw std::invalid_argument("RecycleMatrix::update: token out of range");
      }
      if (candidate_rows[i].size() != k_) {
        throw std::invalid_argument("RecycleMatrix::update: candidate row width != k");
      }
    }
    switch (strategy) {
      case UpdateStrategy::sequential:
        for (std::size_t i = 0; i < tokens.size(); ++i) write_row(tokens[i], candidate_rows[i]);
        break;
      case UpdateStrategy::first: {
        std::unordered_set<TokenId> seen;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
          if (seen.insert(tokens[i]).second) write_row(tokens[i], candidate_rows[i]);
        }
        break;
      }
      case UpdateStrategy::last: {
        std::unordered_map<TokenId, std::size_t> last_pos;
        for (std::size_t i = 0; i < tokens.size(); ++i) last_pos[tokens[i]] = i;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
          if (last_pos[tokens[i]] == i) write_row(tokens[i], candidate_rows[i]);
        }
        break;
      }
    }
  }

  bool operator==(const RecycleMatrix& other) const {
    return vocab_size_ == other.vocab_size_ && k_ == other.k_ && rows_ == other.rows_;
  }

  /// Canonical serialization: byte-deterministic for equal matrices.
  /// Layout (little-endian): "TRMX", version u32, vocab_size u32, k u32,
  /// then vocab_size*k token ids as u32, row major.
  void save(std::ostream& out) const {
    io::write_magic(out, kMagic);
    io::write_u32(out, kFormatVersion);
    io::write_u32(out, vocab_size_);
    io::write_u32(out, k_);
    for (TokenId cell : rows_) io::write_u32(out, cell);
    if (!out) throw IoError("RecycleMatrix: write failed");
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    save(out);
  }

  static RecycleMatrix load(std::istream& in) {
    io::expect_magic(in, kMagic, "matrix");
    std::uint32_t version = io::read_u32(in, "matrix version");
    if (version != kFormatVersion) {
      throw FormatError("unsupported matrix format version " + std::to_string(version));
    }
    std::uint32_t vocab_size = io::read_u32(in, "matrix vocab_size");
    std::uint32_t k = io::read_u32(in, "matrix k");
    if (vocab_size < 2) throw FormatError("matrix vocab_size field must be >= 2");
    if (k < 1) throw FormatError("matrix k field must be >= 1");
    RecycleMatrix m(vocab_size, k);
    for (auto& cell : m.rows_) {
      cell = io::read_u32(in, "matrix rows");
      if (cell >= vocab_size) throw FormatError("matrix rows contain token id out of range");
    }
    return m;
  }

  static RecycleMatrix load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    return load(in);
  }

  /// Size of the serialized form in bytes.
  std::size_t serialized_bytes() const { return kHeaderBytes + rows_.size() * 4; }

 private:
  void write_row(TokenId t, const TopK& candidates) {
    std::copy(candidates.begin(), candidates.end(), rows_.begin() + std::size_t{t} * k_);
  }

  std::uint32_t vocab_size_;
  std::uint32_t k_;
  std::vector<TokenId> rows_;
};

}  // namespace tokrec
