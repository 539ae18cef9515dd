#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tokrec/common.hpp"
#include "tokrec/draft_tree.hpp"
#include "tokrec/vocab.hpp"

namespace tokrec {

/// Next-token distribution provider. Implementations are immutable after
/// construction: identical queries give identical (bit-exact) answers.
struct LanguageModelOracle {
  virtual ~LanguageModelOracle() = default;
  virtual const Vocabulary& vocab() const = 0;
  virtual Distribution next_distribution(std::span<const TokenId> context) const = 0;
};

/// One distribution per tree node, each conditioned on context + the
/// root-to-node token path. This is the batched verification call: feeding
/// the whole merged sequence at once must give exactly what per-node
/// context-extended calls give, node order preserved. `context` is the text
/// before the root token and may be empty (the root itself is node 0).
inline std::vector<Distribution> evaluate_tree(const LanguageModelOracle& model,
                                               std::span<const TokenId> context,
                                               const MergedSequence& seq) {
  const std::size_t n = seq.tokens.size();
  if (n == 0 || seq.parents.size() != n || seq.parents[0] != -1) {
    throw std::invalid_argument("evaluate_tree: malformed parent links (bad root)");
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (seq.parents[i] < 0 || static_cast<std::size_t>(seq.parents[i]) >= i) {
      throw std::invalid_argument("evaluate_tree: malformed parent links at node " +
                                  std::to_string(i));
    }
  }
  std::vector<std::vector<std::int32_t>> children = child_lists(seq.parents);
  std::vector<Distribution> out(n);
  std::vector<TokenId> buf(context.begin(), context.end());
  // depth-first, sharing one context buffer; recursion depth = tree depth
  auto walk = [&](auto&& self, std::int32_t node) -> void {
    buf.push_back(seq.tokens[static_cast<std::size_t>(node)]);
    out[static_cast<std::size_t>(node)] = model.next_distribution(buf);
    for (std::int32_t c : children[static_cast<std::size_t>(node)]) self(self, c);
    buf.pop_back();
  };
  walk(walk, 0);
  return out;
}

/// Deterministic test oracle: a fixed token cycle. The next token is the one
/// following the longest context suffix that matches somewhere in the cycle
/// (cyclically); ties pick the smallest cycle position, no match at all maps
/// to cycle[0]. Emits delta distributions only.
class CycleModel : public LanguageModelOracle {
 public:
  CycleModel(std::vector<TokenId> cycle, std::uint32_t vocab_size) : cycle_(std::move(cycle)) {
    if (cycle_.empty()) throw std::invalid_argument("CycleModel: empty cycle");
    if (vocab_size < 2) throw std::invalid_argument("CycleModel: vocab_size must be >= 2");
    for (TokenId t : cycle_) {
      if (t >= vocab_size) throw std::invalid_argument("CycleModel: cycle token out of range");
    }
    vocab_.size = vocab_size;
    vocab_.unknown_id = 0;
  }

  const Vocabulary& vocab() const override { return vocab_; }
  const std::vector<TokenId>& cycle() const { return cycle_; }

  Distribution next_distribution(std::span<const TokenId> context) const override {
    if (context.empty()) throw std::invalid_argument("CycleModel: empty context");
    const std::size_t L = cycle_.size();
    const std::size_t max_m = std::min(context.size(), L);
    for (std::size_t m = max_m; m >= 1; --m) {
      for (std::size_t p = 0; p < L; ++p) {
        // does the length-m context suffix end at cycle position p?
        bool match = true;
        for (std::size_t j = 0; j < m; ++j) {
          std::size_t pos = (p + L - j) % L;
          if (context[context.size() - 1 - j] != cycle_[pos]) {
            match = false;
            break;
          }
        }
        if (match) return delta((p + 1) % L);
      }
    }
    return delta(0);
  }

 private:
  Distribution delta(std::size_t cycle_pos) const {
    Distribution d(vocab_.size, 0.0);
    d[cycle_[cycle_pos]] = 1.0;
    return d;
  }

  std::vector<TokenId> cycle_;
  Vocabulary vocab_;
};

/// Interpolated add-alpha n-gram model. Counts are kept for every context
/// length 0..order-1; a query mixes the per-order estimates with weights
/// proportional to the order (longer contexts trusted more), normalized over
/// the orders the context can actually serve. alpha > 0 keeps every token's
/// probability strictly positive.
class NGramModel : public LanguageModelOracle {
 public:
  static constexpr char kMagic[4] = {'T', 'R', 'N', 'G'};
  static constexpr std::uint32_t kFormatVersion = 1;

  NGramModel(Vocabulary vocab, std::uint32_t order, double alpha)
      : vocab_(std::move(vocab)), order_(order), alpha_(alpha), tables_(order) {
    if (!vocab_.valid()) throw std::invalid_argument("NGramModel: invalid vocabulary");
    if (order_ < 1) throw std::invalid_argument("NGramModel: order must be >= 1");
    if (!(alpha_ > 0.0)) throw std::invalid_argument("NGramModel: alpha must be > 0");
  }

  const Vocabulary& vocab() const override { return vocab_; }
  std::uint32_t order() const { return order_; }
  double alpha() const { return alpha_; }

  /// Ingest one training sequence: every (context, successor) pair for every
  /// context length below `order`.
  void observe(std::span<const TokenId> tokens) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i] >= vocab_.size) throw std::invalid_argument("NGramModel: token out of range");
    }
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      for (std::uint32_t c = 0; c < order_ && c <= i; ++c) {
        std::vector<TokenId> ctx(tokens.begin() + static_cast<std::ptrdiff_t>(i - c),
                                 tokens.begin() + static_cast<std::ptrdiff_t>(i));
        Bucket& b = tables_[c][ctx];
        b.succ[tokens[i]] += 1;
        b.total += 1;
      }
    }
  }

  Distribution next_distribution(std::span<const TokenId> context) const override {
    if (context.empty()) throw std::invalid_argument("NGramModel: empty context");
    for (TokenId t : context) {
      if (t >= vocab_.size) throw std::invalid_argument("NGramModel: context token out of range");
    }
    const std::uint32_t usable =
        std::min<std::uint32_t>(order_, static_cast<std::uint32_t>(context.size()) + 1);
    double weight_sum = 0.0;
    for (std::uint32_t c = 0; c < usable; ++c) weight_sum += static_cast<double>(c + 1);

    const double v = static_cast<double>(vocab_.size);
    Distribution dist(vocab_.size, 0.0);
    for (std::uint32_t c = 0; c < usable; ++c) {
      const double w = static_cast<double>(c + 1) / weight_sum;
      const Bucket* b = nullptr;
      std::vector<TokenId> ctx(context.end() - c, context.end());
      auto it = tables_[c].find(ctx);
      if (it != tables_[c].end()) b = &it->second;
      const double denom = (b ? static_cast<double>(b->total) : 0.0) + alpha_ * v;
      // smoothing floor for every token, observed counts on top
      const double floor = w * alpha_ / denom;
      for (double& p : dist) p += floor;
      if (b) {
        for (const auto& [tok, cnt] : b->succ) {
          dist[tok] += w * static_cast<double>(cnt) / denom;
        }
      }
    }
    return dist;
  }

  bool operator==(const NGramModel& other) const {
    return vocab_.size == other.vocab_.size && vocab_.surface_forms == other.vocab_.surface_forms &&
           vocab_.unknown_id == other.vocab_.unknown_id && vocab_.eos_id == other.vocab_.eos_id &&
           order_ == other.order_ && alpha_ == other.alpha_ && tables_equal(other);
  }

  /// Versioned binary, magic "TRNG"; round-trips bit-exactly (alpha included).
  void save(std::ostream& out) const {
    io::write_magic(out, kMagic);
    io::write_u32(out, kFormatVersion);
    io::write_u32(out, vocab_.size);
    io::write_u32(out, vocab_.unknown_id);
    io::write_u32(out, vocab_.eos_id ? *vocab_.eos_id + 1 : 0);  // 0 = no eos, else id+1
    io::write_u64(out, vocab_.surface_forms.size());
    for (const std::string& s : vocab_.surface_forms) {
      io::write_u64(out, s.size());
      out.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    io::write_u32(out, order_);
    io::write_f64(out, alpha_);
    for (std::uint32_t c = 0; c < order_; ++c) {
      io::write_u64(out, tables_[c].size());
      for (const auto& [ctx, bucket] : tables_[c]) {  // std::map: sorted, canonical bytes
        for (TokenId t : ctx) io::write_u32(out, t);
        io::write_u64(out, bucket.succ.size());
        for (const auto& [tok, cnt] : bucket.succ) {
          io::write_u32(out, tok);
          io::write_u64(out, cnt);
        }
      }
    }
    if (!out) throw IoError("NGramModel: write failed");
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    save(out);
  }

  static NGramModel load(std::istream& in) {
    io::expect_magic(in, kMagic, "ngram model");
    std::uint32_t version = io::read_u32(in, "ngram version");
    if (version != kFormatVersion) {
      throw FormatError("unsupported ngram model version " + std::to_string(version));
    }
    Vocabulary vocab;
    vocab.size = io::read_u32(in, "ngram vocab_size");
    vocab.unknown_id = io::read_u32(in, "ngram unknown_id");
    std::uint32_t eos_plus1 = io::read_u32(in, "ngram eos_id");
    if (eos_plus1 > 0) vocab.eos_id = eos_plus1 - 1;
    std::uint64_t n_forms = io::read_u64(in, "ngram surface form count");
    if (n_forms != 0 && n_forms != vocab.size) {
      throw FormatError("ngram surface form count does not match vocab_size");
    }
    vocab.surface_forms.resize(n_forms);
    for (auto& s : vocab.surface_forms) {
      std::uint64_t len = io::read_u64(in, "ngram surface form length");
      if (len > (1u << 20)) throw FormatError("ngram surface form length implausible");
      s.resize(len);
      if (!in.read(s.data(), static_cast<std::streamsize>(len))) {
        throw FormatError("truncated file while reading ngram surface form");
      }
    }
    if (!vocab.valid()) throw FormatError("ngram model vocabulary fields inconsistent");
    std::uint32_t order = io::read_u32(in, "ngram order");
    double alpha = io::read_f64(in, "ngram alpha");
    if (order < 1 || order > 16) throw FormatError("ngram order field out of range");
    if (!(alpha > 0.0)) throw FormatError("ngram alpha field must be > 0");
    NGramModel model(std::move(vocab), order, alpha);
    for (std::uint32_t c = 0; c < order; ++c) {
      std::uint64_t n_ctx = io::read_u64(in, "ngram context count");
      for (std::uint64_t i = 0; i < n_ctx; ++i) {
        std::vector<TokenId> ctx(c);
        for (auto& t : ctx) {
          t = io::read_u32(in, "ngram context token");
          if (t >= model.vocab_.size) throw FormatError("ngram context token out of range");
        }
        Bucket& b = model.tables_[c][ctx];
        std::uint64_t n_succ = io::read_u64(in, "ngram successor count");
        for (std::uint64_t j = 0; j < n_succ; ++j) {
          TokenId tok = io::read_u32(in, "ngram successor token");
          if (tok >= model.vocab_.size) throw FormatError("ngram successor token out of range");
          std::uint64_t cnt = io::read_u64(in, "ngram successor frequency");
          b.succ[tok] = cnt;
          b.total += cnt;
        }
      }
    }
    return model;
  }

  static NGramModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    return load(in);
  }

 private:
  struct Bucket {
    std::map<TokenId, std::uint64_t> succ;
    std::uint64_t total = 0;
  };

  bool tables_equal(const NGramModel& other) const {
    if (tables_.size() != other.tables_.size()) return false;
    for (std::size_t c = 0; c < tables_.size(); ++c) {
      if (tables_[c].size() != other.tables_[c].size()) return false;
      auto it = tables_[c].begin();
      auto jt = other.tables_[c].begin();
      for (; it != tables_[c].end(); ++it, ++jt) {
        if (it->first != jt->first || it->second.total != jt->second.total ||
            it->second.succ != jt->second.succ) {
          return false;
        }
      }
    }
    return true;
  }

  Vocabulary vocab_;
  std::uint32_t order_;
  double alpha_;
  std::vector<std::map<std::vector<TokenId>, Bucket>> tables_;
};

/// Word-level tokenizer: runs of [A-Za-z0-9_] or non-ASCII bytes form one
/// token, every other printable character is its own token, whitespace only
/// separates.
inline std::vector<std::string> tokenize_text(const std::string& text) {
  auto is_word_byte = [](unsigned char ch) {
    return (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
           ch == '_' || ch >= 0x80;
  };
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    unsigned char ch = static_cast<unsigned char>(text[i]);
    if (std::isspace(ch)) {
      ++i;
      continue;
    }
    if (is_word_byte(ch)) {
      std::size_t j = i;
      while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
      out.emplace_back(text.substr(i, j - i));
      i = j;
    } else {
      out.emplace_back(1, text[i]);
      ++i;
    }
  }
  return out;
}

/// Map surface tokens to ids, unknown forms to vocab.unknown_id.
inline std::vector<TokenId> encode(const Vocabulary& vocab, const std::vector<std::string>& forms) {
  std::vector<TokenId> out;
  out.reserve(forms.size());
  for (const std::string& f : forms) out.push_back(vocab.id_of(f));
  return out;
}

inline std::string detokenize(const Vocabulary& vocab, std::span<const TokenId> tokens) {
  std::string out;
  for (TokenId t : tokens) {
    const std::string& s = vocab.surface(t);
    bool punct = s.size() == 1 && !std::isalnum(static_cast<unsigned char>(s[0])) && s[0] != '_';
    if (!out.empty() && !punct) out.push_back(' ');
    out += s;
  }
  return out;
}

/// Blank-line-separated blocks of a UTF-8 corpus; lines starting with '@' are
/// per-block metadata and not part of the text.
struct CorpusBlock {
  std::string category;
  std::string text;
};

inline std::vector<CorpusBlock> split_corpus_blocks(const std::string& text) {
  std::vector<CorpusBlock> blocks;
  CorpusBlock cur;
  bool cur_has_text = false;
  std::istringstream lines(text);
  std::string line;
  auto flush = [&] {
    if (cur_has_text) blocks.push_back(cur);
    cur = {};
    cur_has_text = false;
  };
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    bool blank = line.find_first_not_of(" \t") == std::string::npos;
    if (blank) {
      flush();
      continue;
    }
    if (line[0] == '@') {
      // "@category NAME" — other @-keys are reserved and skipped
      std::istringstream tag(line.substr(1));
      std::string key, value;
      tag >> key;
      if (key == "category") {
        std::getline(tag, value);
        std::size_t start = value.find_first_not_of(" \t");
        std::size_t end = value.find_last_not_of(" \t");
        cur.category = start == std::string::npos ? "" : value.substr(start, end - start + 1);
      }
      continue;
    }
    if (cur_has_text) cur.text.push_back('\n');
    cur.text += line;
    cur_has_text = true;
  }
  flush();
  return blocks;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Build vocabulary and count tables from a plain-text corpus. Blocks
/// (blank-line separated) are independent sequences; the vocabulary keeps the
/// vocab_cap most frequent surface forms (ties by first appearance) plus one
/// trailing unknown token.
inline NGramModel train_ngram_text(const std::string& corpus_text, std::uint32_t order,
                                   double alpha, std::uint32_t vocab_cap) {
  if (vocab_cap < 2) throw std::invalid_argument("train_ngram: vocab_cap must be >= 2");
  std::vector<CorpusBlock> blocks = split_corpus_blocks(corpus_text);
  std::vector<std::vector<std::string>> block_tokens;
  std::unordered_map<std::string, std::uint64_t> freq;
  std::unordered_map<std::string, std::size_t> first_seen;
  for (const CorpusBlock& b : blocks) {
    std::vector<std::string> toks = tokenize_text(b.text);
    for (const std::string& t : toks) {
      first_seen.emplace(t, first_seen.size());
      freq[t] += 1;
    }
    if (!toks.empty()) block_tokens.push_back(std::move(toks));
  }
  if (block_tokens.empty()) throw FormatError("training corpus is empty");

  std::vector<std::string> forms;
  forms.reserve(freq.size());
  for (const auto& [form, _] : freq) forms.push_back(form);
  std::sort(forms.begin(), forms.end(), [&](const std::string& a, const std::string& b) {
    if (freq[a] != freq[b]) return freq[a] > freq[b];
    return first_seen[a] < first_seen[b];
  });
  if (forms.size() > vocab_cap) forms.resize(vocab_cap);
  forms.push_back("<unk>");

  Vocabulary vocab;
  vocab.size = static_cast<std::uint32_t>(forms.size());
  vocab.surface_forms = std::move(forms);
  vocab.unknown_id = vocab.size - 1;

  NGramModel model(std::move(vocab), order, alpha);
  for (const auto& toks : block_tokens) {
    model.observe(encode(model.vocab(), toks));
  }
  return model;
}

inline NGramModel train_ngram(const std::string& corpus_path, std::uint32_t order, double alpha,
                              std::uint32_t vocab_cap) {
  return train_ngram_text(read_text_file(corpus_path), order, alpha, vocab_cap);
}

}  // namespace tokrec
