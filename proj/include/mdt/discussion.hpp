#pragma once

// Discussion trees and the structural encodings fed to graph attention.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mdt/errors.hpp"

namespace mdt {

enum class Label : int { Neutral = 0, Hateful = 1 };

inline const char* label_name(Label l) { return l == Label::Hateful ? "Hateful" : "Neutral"; }

// Largest discussion a single forward pass accepts.
inline constexpr std::size_t kMaxDiscussionSize = 516;

struct CommentRecord {
  std::string id;
  std::optional<std::string> parent_id;
  std::string text;
  std::optional<std::string> image_ref;
  std::optional<Label> label;
};

struct CommentNode {
  std::string id;
  std::optional<std::size_t> parent_index;
  std::string text;
  std::optional<std::string> image_ref;
  std::optional<Label> label;
};

class DiscussionTree {
 public:
  DiscussionTree() = default;

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<CommentNode>& nodes() const noexcept { return nodes_; }
  const CommentNode& node(std::size_t i) const { return nodes_.at(i); }
  const std::vector<std::size_t>& children(std::size_t i) const { return children_.at(i); }
  std::size_t depth(std::size_t i) const { return depth_.at(i); }
  const std::vector<std::size_t>& depths() const noexcept { return depth_; }
  std::size_t max_depth() const { return depth_.empty() ? 0 : *std::max_element(depth_.begin(), depth_.end()); }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index_of(const std::string& id) const {
    auto i = find(id);
    if (!i) throw std::out_of_range("no comment with id '" + id + "' in discussion");
    return *i;
  }

  std::vector<CommentRecord> records() const {
    std::vector<CommentRecord> out;
    out.reserve(nodes_.size());
    for (const auto& n : nodes_) {
      CommentRecord r{n.id, std::nullopt, n.text, n.image_ref, n.label};
      if (n.parent_index) r.parent_id = nodes_[*n.parent_index].id;
      out.push_back(std::move(r));
    }
    return out;
  }

  friend DiscussionTree build_tree(const std::vector<CommentRecord>& records);

 private:
  std::vector<CommentNode> nodes_;
  std::vector<std::vector<std::size_t>> children_;
  std::vector<std::size_t> depth_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Validates parent links and stores the nodes breadth-first from the root,
// visiting siblings in id order.
inline DiscussionTree build_tree(const std::vector<CommentRecord>& records) {
  if (records.empty()) throw StructureError("discussion has no comments");
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!pos.emplace(records[i].id, i).second) throw StructureError("duplicate comment id '" + records[i].id + "'");
  }
  std::optional<std::size_t> root;
  std::vector<std::vector<std::size_t>> kids(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!r.parent_id) {
      if (root) throw StructureError("multiple roots: '" + records[*root].id + "' and '" + r.id + "'");
      root = i;
      continue;
    }
    auto it = pos.find(*r.parent_id);
    if (it == pos.end())
      throw StructureError("comment '" + r.id + "' references missing parent '" + *r.parent_id + "'");
    if (it->second == i) throw StructureError("cycle: comment '" + r.id + "' is its own parent");
    kids[it->second].push_back(i);
  }
  if (!root) throw StructureError("cycle: no root comment (every comment has a parent), involving '" + records[0].id + "'");

  for (auto& k : kids)
    std::sort(k.begin(), k.end(), [&](std::size_t a, std::size_t b) { return records[a].id < records[b].id; });

  std::vector<std::size_t> order;  // original index per canonical slot
  std::vector<std::size_t> depth_of(records.size(), 0);
  std::vector<bool> reached(records.size(), false);
  std::deque<std::size_t> queue{*root};
  reached[*root] = true;
  while (!queue.empty()) {
    const auto v = queue.front();
    queue.pop_front();
    order.push_back(v);
    for (auto c : kids[v]) {
      reached[c] = true;
      depth_of[c] = depth_of[v] + 1;
      queue.push_back(c);
    }
  }
  if (order.size() != records.size()) {
    // With a single root and no dangling parents, anything unreachable sits on a cycle.
    std::string offender;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (!reached[i] && (offender.empty() || records[i].id < offender)) offender = records[i].id;
    throw StructureError("cycle: comment '" + offender + "' is not connected to the root");
  }

  std::vector<std::size_t> slot(records.size());
  for (std::size_t s = 0; s < order.size(); ++s) slot[order[s]] = s;

  DiscussionTree t;
  t.nodes_.reserve(order.size());
  t.children_.resize(order.size());
  t.depth_.resize(order.size());
  for (std::size_t s = 0; s < order.size(); ++s) {
    const auto& r = records[order[s]];
    CommentNode n{r.id, std::nullopt, r.text, r.image_ref, r.label};
    if (r.parent_id) n.parent_index = slot[pos.at(*r.parent_id)];
    t.nodes_.push_back(std::move(n));
    t.depth_[s] = depth_of[order[s]];
    for (auto c : kids[order[s]]) t.children_[s].push_back(slot[c]);
    t.index_.emplace(r.id, s);
  }
  return t;
}

struct TrimLimits {
  std::size_t max_branching = 3;
  std::size_t max_depth = 5;
};

// Drops nodes deeper than max_depth, then keeps at most max_branching
// children per node. Children whose (depth-limited) subtree holds a labeled
// comment are kept first; ties fall back to canonical order.
inline DiscussionTree trim(const DiscussionTree& tree, TrimLimits limits = {}) {
  const std::size_t n = tree.size();
  std::vector<bool> has_label(n, false);
  // Canonical order is breadth-first, so a reverse sweep visits children first.
  for (std::size_t i = n; i-- > 0;) {
    if (tree.depth(i) > limits.max_depth) continue;
    if (tree.node(i).label) has_label[i] = true;
    if (has_label[i] && tree.node(i).parent_index) has_label[*tree.node(i).parent_index] = true;
  }

  std::vector<bool> keep(n, false);
  keep[0] = true;
  for (std::size_t i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    std::vector<std::size_t> cand;
    for (auto c : tree.children(i))
      if (tree.depth(c) <= limits.max_depth) cand.push_back(c);
    std::stable_partition(cand.begin(), cand.end(), [&](std::size_t c) { return has_label[c]; });
    if (cand.size() > limits.max_branching) cand.resize(limits.max_branching);
    for (auto c : cand) keep[c] = true;
  }

  auto all = tree.records();
  std::vector<CommentRecord> kept;
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) kept.push_back(std::move(all[i]));
  return build_tree(kept);
}

struct Hops {
  std::size_t up = 0;
  std::size_t down = 0;
  bool operator==(const Hops&) const = default;
};

// Hops upward from a to the lowest common ancestor, then downward to b.
inline Hops hops(const DiscussionTree& tree, std::size_t a, std::size_t b) {
  if (a >= tree.size() || b >= tree.size()) throw std::out_of_range("hops: node index outside discussion");
  std::size_t x = a, y = b;
  while (tree.depth(x) > tree.depth(y)) x = *tree.node(x).parent_index;
  while (tree.depth(y) > tree.depth(x)) y = *tree.node(y).parent_index;
  while (x != y) {
    x = *tree.node(x).parent_index;
    y = *tree.node(y).parent_index;
  }
  const std::size_t lca_depth = tree.depth(x);
  return {tree.depth(a) - lca_depth, tree.depth(b) - lca_depth};
}

inline Hops hops(const DiscussionTree& tree, const std::string& a, const std::string& b) {
  return hops(tree, tree.index_of(a), tree.index_of(b));
}

// Order-independent Cantor pairing: (u+d)(u+d+1)/2 + min(u, d).
constexpr std::uint64_t cantor_index(std::uint64_t u, std::uint64_t d) noexcept {
  const std::uint64_t s = u + d;
  return s * (s + 1) / 2 + (u < d ? u : d);
}

// Number of distinct indices for hop pairs with u, d <= max_depth.
constexpr std::size_t spatial_table_size(std::size_t max_depth) noexcept {
  return (2 * max_depth + 1) * (2 * max_depth + 2) / 2;
}

// Replies received plus one for the parent. The root has no parent and only
// gets the extra one when root_parent_bonus is set.
inline std::size_t degree(const DiscussionTree& tree, std::size_t node, bool root_parent_bonus = false) {
  const auto& n = tree.node(node);
  const std::size_t replies = tree.children(node).size();
  return replies + ((n.parent_index || root_parent_bonus) ? 1 : 0);
}

struct StructureEncodings {
  std::size_t n = 0;
  std::vector<std::size_t> degree;
  std::vector<std::size_t> spatial_index;  // row-major n x n
  std::vector<bool> attn_mask;             // row-major n x n; true = may attend
  std::optional<std::size_t> window;       // hop budget on u + d; nullopt = unbounded

  std::size_t spatial(std::size_t i, std::size_t j) const { return spatial_index[i * n + j]; }
  bool allowed(std::size_t i, std::size_t j) const { return attn_mask[i * n + j]; }
};

inline StructureEncodings structure_matrices(const DiscussionTree& tree, std::optional<std::size_t> window,
                                             bool root_parent_bonus = false) {
  StructureEncodings enc;
  enc.n = tree.size();
  enc.window = window;
  enc.degree.resize(enc.n);
  enc.spatial_index.assign(enc.n * enc.n, 0);
  enc.attn_mask.assign(enc.n * enc.n, false);
  for (std::size_t i = 0; i < enc.n; ++i) {
    enc.degree[i] = degree(tree, i, root_parent_bonus);
    for (std::size_t j = 0; j < enc.n; ++j) {
      const auto h = hops(tree, i, j);
      enc.spatial_index[i * enc.n + j] = static_cast<std::size_t>(cantor_index(h.up, h.down));
      enc.attn_mask[i * enc.n + j] = i == j || !window || h.up + h.down <= *window;
    }
  }
  return enc;
}

// Relabels nodes: new node k is old node perm[k].
inline StructureEncodings permute(const StructureEncodings& enc, const std::vector<std::size_t>& perm) {
  if (perm.size() != enc.n) throw std::invalid_argument("permute: permutation size mismatch");
  StructureEncodings out = enc;
  for (std::size_t a = 0; a < enc.n; ++a) {
    out.degree[a] = enc.degree[perm[a]];
    for (std::size_t b = 0; b < enc.n; ++b) {
      out.spatial_index[a * enc.n + b] = enc.spatial_index[perm[a] * enc.n + perm[b]];
      out.attn_mask[a * enc.n + b] = enc.attn_mask[perm[a] * enc.n + perm[b]];
    }
  }
  return out;
}

inline std::string format_window(std::optional<std::size_t> w) { return w ? std::to_string(*w) : "inf"; }

// Text dump used by `mdt structure` and golden-file fixtures.
inline std::string format_structure(const std::string& discussion_id, const DiscussionTree& tree,
                                    const StructureEncodings& enc) {
  std::ostringstream os;
  os << "discussion " << discussion_id << " nodes " << enc.n << " window " << format_window(enc.window) << '\n';
  os << "order";
  for (const auto& node : tree.nodes()) os << ' ' << node.id;
  os << "\ndepth";
  for (auto d : tree.depths()) os << ' ' << d;
  os << "\ndegree";
  for (auto d : enc.degree) os << ' ' << d;
  os << "\nspatial\n";
  for (std::size_t i = 0; i < enc.n; ++i) {
    for (std::size_t j = 0; j < enc.n; ++j) os << (j ? " " : "") << enc.spatial(i, j);
    os << '\n';
  }
  os << "mask\n";
  for (std::size_t i = 0; i < enc.n; ++i) {
    for (std::size_t j = 0; j < enc.n; ++j) os << (j ? " " : "") << (enc.allowed(i, j) ? 1 : 0);
    os << '\n';
  }
  return os.str();
}

}  // namespace mdt
