#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <queue>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tokrec/common.hpp"
#include "tokrec/recycle_matrix.hpp"

namespace tokrec {

struct TreeNode {
  std::int32_t parent;  // index of parent node; -1 for the root
  std::int32_t rank;    // candidate rank taken from the parent's matrix row; -1 for the root
};

/// Static draft-tree topology. Nodes are stored in layer order (root first),
/// so walking the list front to back visits layer d fully before layer d+1.
struct TreeSpec {
  std::vector<TreeNode> nodes;
  std::int32_t depth = 0;  // number of draft layers below the root
};

inline std::vector<std::int32_t> layers_of(const TreeSpec& spec) {
  std::vector<std::int32_t> layers(spec.nodes.size(), 0);
  for (std::size_t i = 1; i < spec.nodes.size(); ++i) {
    layers[i] = layers[static_cast<std::size_t>(spec.nodes[i].parent)] + 1;
  }
  return layers;
}

/// Check every structural invariant; throw std::invalid_argument naming the
/// offending node otherwise.
inline void validate_tree(const TreeSpec& spec, std::uint32_t k) {
  if (spec.nodes.empty()) throw std::invalid_argument("tree has no nodes");
  if (spec.nodes[0].parent != -1 || spec.nodes[0].rank != -1) {
    throw std::invalid_argument("node 0 must be the root (parent -1, rank -1)");
  }
  if (spec.depth < 0) throw std::invalid_argument("tree depth must be >= 0");
  std::vector<std::int32_t> layers(spec.nodes.size(), 0);
  std::vector<std::int32_t> last_sibling_rank(spec.nodes.size(), -1);
  std::int32_t max_layer = 0;
  for (std::size_t i = 1; i < spec.nodes.size(); ++i) {
    const TreeNode& n = spec.nodes[i];
    if (n.parent < 0 || static_cast<std::size_t>(n.parent) >= i) {
      throw std::invalid_argument("node " + std::to_string(i) + " not layer-ordered (parent " +
                                  std::to_string(n.parent) + " must precede it)");
    }
    if (n.rank < 0 || static_cast<std::uint32_t>(n.rank) >= k) {
      throw std::invalid_argument("node " + std::to_string(i) + " rank " + std::to_string(n.rank) +
                                  " outside [0, " + std::to_string(k) + ")");
    }
    layers[i] = layers[static_cast<std::size_t>(n.parent)] + 1;
    if (layers[i] < layers[i - 1]) {
      throw std::invalid_argument("node " + std::to_string(i) + " not layer-ordered (layer " +
                                  std::to_string(layers[i]) + " after layer " +
                                  std::to_string(layers[i - 1]) + ")");
    }
    if (n.rank <= last_sibling_rank[static_cast<std::size_t>(n.parent)]) {
      throw std::invalid_argument("node " + std::to_string(i) +
                                  " sibling ranks not strictly increasing under parent " +
                                  std::to_string(n.parent));
    }
    last_sibling_rank[static_cast<std::size_t>(n.parent)] = n.rank;
    max_layer = std::max(max_layer, layers[i]);
  }
  if (max_layer > spec.depth) {
    throw std::invalid_argument("tree declares depth " + std::to_string(spec.depth) +
                                " but contains a path of length " + std::to_string(max_layer));
  }
}

/// Draft tokens in layer order plus the parent links needed to reconstruct
/// every root-to-node path. parents[0] == -1.
struct MergedSequence {
  std::vector<TokenId> tokens;
  std::vector<std::int32_t> parents;

  std::size_t size() const { return tokens.size(); }
};

/// Instantiate the static tree from the matrix: the root carries the given
/// token, every other node takes candidate `rank` from its parent's row.
/// Layer order means each parent's token is already known when its children
/// are filled, and nodes within one layer never depend on each other.
inline MergedSequence retrieve(const RecycleMatrix& m, const TreeSpec& spec, TokenId root) {
  MergedSequence out;
  out.tokens.resize(spec.nodes.size());
  out.parents.resize(spec.nodes.size());
  out.tokens[0] = root;
  out.parents[0] = -1;
  for (std::size_t i = 1; i < spec.nodes.size(); ++i) {
    const TreeNode& n = spec.nodes[i];
    out.parents[i] = n.parent;
    out.tokens[i] = m.row(out.tokens[static_cast<std::size_t>(n.parent)])
                        [static_cast<std::size_t>(n.rank)];
  }
  return out;
}

/// Children of each node, in index (= rank) order.
inline std::vector<std::vector<std::int32_t>> child_lists(std::span<const std::int32_t> parents) {
  std::vector<std::vector<std::int32_t>> children(parents.size());
  for (std::size_t i = 1; i < parents.size(); ++i) {
    children[static_cast<std::size_t>(parents[i])].push_back(static_cast<std::int32_t>(i));
  }
  return children;
}

/// Fully balanced tree: every node above the last layer has `branch` children
/// with ranks 0..branch-1.
inline TreeSpec make_balanced_tree(std::int32_t branch, std::int32_t depth) {
  if (branch < 1) throw std::invalid_argument("make_balanced_tree: branch must be >= 1");
  if (depth < 0) throw std::invalid_argument("make_balanced_tree: depth must be >= 0");
  TreeSpec spec;
  spec.depth = depth;
  spec.nodes.push_back({-1, -1});
  std::size_t layer_begin = 0;
  std::size_t layer_end = 1;
  for (std::int32_t d = 1; d <= depth; ++d) {
    for (std::size_t p = layer_begin; p < layer_end; ++p) {
      for (std::int32_t r = 0; r < branch; ++r) {
        spec.nodes.push_back({static_cast<std::int32_t>(p), r});
      }
    }
    layer_begin = layer_end;
    layer_end = spec.nodes.size();
  }
  return spec;
}

/// Deterministic imbalanced tree builder used for breadth/depth sweeps when no
/// calibration data is at hand. A rank-0 chain down to `depth` is seeded
/// first (so the requested depth always exists), then nodes are added
/// best-first under the prior that candidate rank r of any node is roughly
/// half as likely as rank r-1: score(child) = score(parent) * 0.5^(rank+1).
/// The greedy order does not depend on target_nodes, so smaller budgets yield
/// subtrees of larger ones. If the (k, depth) capacity is below target_nodes
/// the tree is simply smaller than requested.
inline TreeSpec make_tree(std::size_t target_nodes, std::int32_t depth, std::uint32_t k) {
  if (depth < 0) throw std::invalid_argument("make_tree: depth must be >= 0");
  if (k < 1) throw std::invalid_argument("make_tree: k must be >= 1");
  if (target_nodes < static_cast<std::size_t>(depth) + 1) {
    throw std::invalid_argument("make_tree: target_nodes " + std::to_string(target_nodes) +
                                " cannot reach depth " + std::to_string(depth));
  }

  struct Built {
    std::int32_t parent;
    std::int32_t rank;
    std::int32_t layer;
    double score;
  };
  std::vector<Built> built;
  built.push_back({-1, -1, 0, 1.0});
  for (std::int32_t d = 1; d <= depth; ++d) {
    built.push_back({static_cast<std::int32_t>(built.size()) - 1, 0, d, built.back().score * 0.5});
  }

  struct Cand {
    double score;
    std::int32_t parent;
    std::int32_t rank;
  };
  auto worse = [](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score < b.score;
    if (a.parent != b.parent) return a.parent > b.parent;
    return a.rank > b.rank;
  };
  std::priority_queue<Cand, std::vector<Cand>, decltype(worse)> frontier(worse);
  auto push_children = [&](std::int32_t idx, std::int32_t first_rank) {
    if (built[static_cast<std::size_t>(idx)].layer >= depth) return;
    for (std::int32_t r = first_rank; r < static_cast<std::int32_t>(k); ++r) {
      frontier.push({built[static_cast<std::size_t>(idx)].score * std::pow(0.5, r + 1), idx, r});
    }
  };
  for (std::size_t i = 0; i < built.size(); ++i) {
    // chain node i already consumed its rank-0 slot for chain node i+1
    std::int32_t first_rank = (i + 1 < built.size()) ? 1 : 0;
    push_children(static_cast<std::int32_t>(i), first_rank);
  }
  while (built.size() < target_nodes && !frontier.empty()) {
    Cand c = frontier.top();
    frontier.pop();
    std::int32_t idx = static_cast<std::int32_t>(built.size());
    built.push_back({c.parent, c.rank, built[static_cast<std::size_t>(c.parent)].layer + 1,
                     built[static_cast<std::size_t>(c.parent)].score * std::pow(0.5, c.rank + 1)});
    push_children(idx, 0);
  }

  // re-emit in layer order, siblings by rank: sort on (layer, root path)
  std::vector<std::vector<std::int32_t>> paths(built.size());
  for (std::size_t i = 1; i < built.size(); ++i) {
    paths[i] = paths[static_cast<std::size_t>(built[i].parent)];
    paths[i].push_back(built[i].rank);
  }
  std::vector<std::size_t> order(built.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (built[a].layer != built[b].layer) return built[a].layer < built[b].layer;
    return paths[a] < paths[b];
  });
  std::vector<std::int32_t> new_index(built.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    new_index[order[pos]] = static_cast<std::int32_t>(pos);
  }
  TreeSpec spec;
  spec.depth = depth;
  spec.nodes.resize(built.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const Built& b = built[order[pos]];
    spec.nodes[pos] = {b.parent < 0 ? -1 : new_index[static_cast<std::size_t>(b.parent)], b.rank};
  }
  return spec;
}

/// Carve an imbalanced tree out of a balanced (branch, depth) tree using
/// per-node hit counts from a validation run. Starting from the root, each
/// round ranks the children of the previously retained beam by hit count
/// (ties by node index) and keeps the best prune_step of them; when the beam
/// runs out of fresh children the candidate pool widens to the children of
/// everything retained so far. Stops at target_nodes (or when the balanced
/// tree is exhausted). Children are only ever reached through their parents,
/// so the output is ancestor-closed by construction.
inline TreeSpec calibrate_tree(std::int32_t branch, std::int32_t depth,
                               std::span<const std::uint64_t> hit_counts,
                               std::size_t target_nodes, std::size_t prune_step) {
  TreeSpec balanced = make_balanced_tree(branch, depth);
  if (hit_counts.size() != balanced.nodes.size()) {
    throw std::invalid_argument("calibrate_tree: got " + std::to_string(hit_counts.size()) +
                                " hit counts for a balanced tree of " +
                                std::to_string(balanced.nodes.size()) + " nodes");
  }
  if (target_nodes < 1) throw std::invalid_argument("calibrate_tree: target_nodes must be >= 1");
  if (prune_step < 1) throw std::invalid_argument("calibrate_tree: prune_step must be >= 1");

  auto children = child_lists(
      [&] {
        std::vector<std::int32_t> parents(balanced.nodes.size());
        for (std::size_t i = 0; i < balanced.nodes.size(); ++i) parents[i] = balanced.nodes[i].parent;
        return parents;
      }());

  std::vector<char> retained(balanced.nodes.size(), 0);
  retained[0] = 1;
  std::size_t retained_count = 1;
  std::vector<std::int32_t> beam{0};

  auto collect = [&](const std::vector<std::int32_t>& sources) {
    std::vector<std::int32_t> cands;
    for (std::int32_t s : sources) {
      for (std::int32_t c : children[static_cast<std::size_t>(s)]) {
        if (!retained[static_cast<std::size_t>(c)]) cands.push_back(c);
      }
    }
    return cands;
  };

  while (retained_count < target_nodes) {
    std::vector<std::int32_t> cands = collect(beam);
    if (cands.empty()) {
      std::vector<std::int32_t> all;
      for (std::size_t i = 0; i < retained.size(); ++i) {
        if (retained[i]) all.push_back(static_cast<std::int32_t>(i));
      }
      cands = collect(all);
      if (cands.empty()) break;  // balanced tree exhausted
    }
    std::sort(cands.begin(), cands.end(), [&](std::int32_t a, std::int32_t b) {
      if (hit_counts[static_cast<std::size_t>(a)] != hit_counts[static_cast<std::size_t>(b)]) {
        return hit_counts[static_cast<std::size_t>(a)] > hit_counts[static_cast<std::size_t>(b)];
      }
      return a < b;
    });
    std::size_t take = std::min({prune_step, target_nodes - retained_count, cands.size()});
    beam.assign(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(take));
    for (std::int32_t c : beam) retained[static_cast<std::size_t>(c)] = 1;
    retained_count += take;
  }

  // balanced-tree indices are BFS-ordered, so ascending index keeps layer order
  std::vector<std::int32_t> new_index(balanced.nodes.size(), -1);
  TreeSpec spec;
  std::vector<std::int32_t> balanced_layers = layers_of(balanced);
  std::int32_t max_layer = 0;
  for (std::size_t i = 0; i < balanced.nodes.size(); ++i) {
    if (!retained[i]) continue;
    new_index[i] = static_cast<std::int32_t>(spec.nodes.size());
    std::int32_t parent = balanced.nodes[i].parent;
    spec.nodes.push_back(
        {parent < 0 ? -1 : new_index[static_cast<std::size_t>(parent)], balanced.nodes[i].rank});
    max_layer = std::max(max_layer, balanced_layers[i]);
  }
  spec.depth = max_layer;
  return spec;
}

/// Text format: one record per node, "index parent rank", `#` starts a
/// comment. The root record is "0 -1 -1".
inline void save_tree(const TreeSpec& spec, std::ostream& out) {
  out << "# draft tree: " << spec.nodes.size() << " nodes, " << spec.depth
      << " draft layers below the root\n";
  out << "# index parent rank\n";
  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    out << i << ' ' << spec.nodes[i].parent << ' ' << spec.nodes[i].rank << '\n';
  }
  if (!out) throw IoError("tree write failed");
}

inline void save_tree(const TreeSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  save_tree(spec, out);
}

inline TreeSpec load_tree(std::istream& in) {
  TreeSpec spec;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream fields(line);
    long long index, parent, rank;
    if (!(fields >> index)) continue;  // blank or comment-only line
    if (!(fields >> parent >> rank)) {
      throw FormatError("tree file line " + std::to_string(line_no) +
                        ": expected \"index parent rank\"");
    }
    std::string trailing;
    if (fields >> trailing) {
      throw FormatError("tree file line " + std::to_string(line_no) + ": trailing fields");
    }
    if (index != static_cast<long long>(spec.nodes.size())) {
      throw FormatError("tree file line " + std::to_string(line_no) + ": expected node index " +
                        std::to_string(spec.nodes.size()) + ", got " + std::to_string(index));
    }
    if (index == 0) {
      if (parent != -1 || rank != -1) {
        throw FormatError("tree file line " + std::to_string(line_no) +
                          ": root record must be \"0 -1 -1\"");
      }
    } else if (parent < 0 || parent >= index || rank < 0) {
      throw FormatError("tree file line " + std::to_string(line_no) + ": bad parent/rank");
    }
    spec.nodes.push_back({static_cast<std::int32_t>(parent), static_cast<std::int32_t>(rank)});
  }
  if (spec.nodes.empty()) throw FormatError("tree file has no nodes");
  std::vector<std::int32_t> layers = layers_of(spec);
  spec.depth = *std::max_element(layers.begin(), layers.end());
  return spec;
}

inline TreeSpec load_tree(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path + " for reading");
  return load_tree(in);
}

}  // namespace tokrec
