#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

#include "mdt/discussion.hpp"
#include "mdt/rng.hpp"

namespace mdt {
namespace {

CommentRecord rec(std::string id, std::optional<std::string> parent, std::optional<Label> label = std::nullopt) {
  return {std::move(id), std::move(parent), "", std::nullopt, label};
}

DiscussionTree sample_tree() {
  return build_tree({rec("a", "x"), rec("x", "c"), rec("d", "c"), rec("c", std::nullopt), rec("b", "c")});
}

// Random tree over ids n0..n{size-1}; parents always precede children.
std::vector<CommentRecord> random_records(Rng& rng, std::size_t size, double label_rate = 0.0) {
  std::vector<CommentRecord> out;
  for (std::size_t i = 0; i < size; ++i) {
    std::optional<std::string> parent;
    if (i > 0) parent = "n" + std::to_string(rng.below(i));
    std::optional<Label> label;
    if (rng.bernoulli(label_rate)) label = Label::Neutral;
    out.push_back(rec("n" + std::to_string(i), parent, label));
  }
  rng.shuffle(out);
  return out;
}

// Undirected BFS distances from `src`.
std::vector<std::size_t> bfs_distances(const DiscussionTree& t, std::size_t src) {
  std::vector<std::vector<std::size_t>> adj(t.size());
  for (std::size_t i = 0; i < t.size(); ++i)
    if (auto p = t.node(i).parent_index) {
      adj[i].push_back(*p);
      adj[*p].push_back(i);
    }
  std::vector<std::size_t> dist(t.size(), SIZE_MAX);
  std::queue<std::size_t> q;
  dist[src] = 0;
  q.push(src);
  while (!q.empty()) {
    auto x = q.front();
    q.pop();
    for (auto y : adj[x])
      if (dist[y] == SIZE_MAX) {
        dist[y] = dist[x] + 1;
        q.push(y);
      }
  }
  return dist;
}

// Path-to-root listing oracle for (up, down).
Hops brute_hops(const DiscussionTree& t, std::size_t a, std::size_t b) {
  auto chain = [&](std::size_t x) {
    std::vector<std::size_t> c{x};
    while (auto p = t.node(c.back()).parent_index) c.push_back(*p);
    return c;
  };
  const auto ca = chain(a), cb = chain(b);
  for (std::size_t i = 0; i < ca.size(); ++i)
    for (std::size_t j = 0; j < cb.size(); ++j)
      if (ca[i] == cb[j]) return {i, j};
  ADD_FAILURE() << "no common ancestor";
  return {};
}

std::vector<std::string> ids(const DiscussionTree& t) {
  std::vector<std::string> out;
  for (const auto& n : t.nodes()) out.push_back(n.id);
  return out;
}

TEST(BuildTree, SingleRecord) {
  auto t = build_tree({rec("r", std::nullopt)});
  EXPECT_EQ(t.size(), 1u);
  EXPECT_EQ(t.depths(), std::vector<std::size_t>{0});
}

TEST(BuildTree, SampleTreeCanonicalOrderAndDepths) {
  auto t = sample_tree();
  EXPECT_EQ(ids(t), (std::vector<std::string>{"c", "b", "d", "x", "a"}));
  EXPECT_EQ(t.depths(), (std::vector<std::size_t>{0, 1, 1, 1, 2}));
  EXPECT_EQ(t.children(0), (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(t.node(4).parent_index, std::optional<std::size_t>(3));
}

TEST(BuildTree, ParentChildIndicesAreConsistent) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    auto t = build_tree(random_records(rng, 1 + rng.below(40)));
    std::size_t roots = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!t.node(i).parent_index) {
        ++roots;
        EXPECT_EQ(t.depth(i), 0u);
        continue;
      }
      const auto p = *t.node(i).parent_index;
      EXPECT_LT(p, i);
      EXPECT_EQ(t.depth(i), t.depth(p) + 1);
      const auto& kids = t.children(p);
      EXPECT_NE(std::find(kids.begin(), kids.end(), i), kids.end());
    }
    EXPECT_EQ(roots, 1u);
  }
}

TEST(BuildTree, CycleIsRejected) {
  try {
    build_tree({rec("r", std::nullopt), rec("a", "b"), rec("b", "a")});
    FAIL();
  } catch (const StructureError& e) {
    EXPECT_NE(std::string(e.what()).find("cycle"), std::string::npos) << e.what();
  }
  EXPECT_THROW(build_tree({rec("a", "b"), rec("b", "a")}), StructureError);
  EXPECT_THROW(build_tree({rec("a", "a")}), StructureError);
}

TEST(BuildTree, StructuralErrorsNameTheOffendingId) {
  auto message = [](const std::vector<CommentRecord>& rs) {
    try {
      build_tree(rs);
    } catch (const StructureError& e) {
      return std::string(e.what());
    }
    return std::string("<no error>");
  };
  EXPECT_NE(message({rec("r", std::nullopt), rec("q", std::nullopt)}).find("q"), std::string::npos);
  EXPECT_NE(message({rec("r", std::nullopt), rec("k", "ghost")}).find("ghost"), std::string::npos);
  EXPECT_NE(message({rec("r", std::nullopt), rec("r", "r")}).find("r"), std::string::npos);
  EXPECT_THROW(build_tree({}), StructureError);
}

TEST(Trim, WithinLimitsIsFixedPoint) {
  auto t = sample_tree();
  auto u = trim(t);
  EXPECT_EQ(ids(u), ids(t));
  EXPECT_EQ(u.depths(), t.depths());
}

TEST(Trim, ChainOfSevenKeepsDepthsZeroToFive) {
  std::vector<CommentRecord> rs{rec("n0", std::nullopt)};
  for (int i = 1; i < 7; ++i) rs.push_back(rec("n" + std::to_string(i), "n" + std::to_string(i - 1)));
  auto t = trim(build_tree(rs));
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.depths(), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
}

TEST(Trim, FiveUnlabeledChildrenKeepFirstThree) {
  std::vector<CommentRecord> rs{rec("r", std::nullopt)};
  for (const char* id : {"e", "b", "d", "a", "c"}) rs.push_back(rec(id, "r"));
  auto t = trim(build_tree(rs));
  // Survivors under the keep-rule: no labels anywhere, so canonical (id) order.
  EXPECT_EQ(ids(t), (std::vector<std::string>{"r", "a", "b", "c"}));
}

TEST(Trim, LabeledSubtreesOutrankUnlabeled) {
  std::vector<CommentRecord> rs{rec("r", std::nullopt)};
  for (const char* id : {"a", "b", "c", "e"}) rs.push_back(rec(id, "r"));
  rs.push_back(rec("d", "r", Label::Neutral));
  rs.push_back(rec("e1", "e", Label::Hateful));
  auto t = trim(build_tree(rs));
  // d and e carry labels, a is the first unlabeled child.
  EXPECT_EQ(ids(t), (std::vector<std::string>{"r", "a", "d", "e", "e1"}));
}

TEST(Trim, IdempotentAndWithinLimits) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    auto t = build_tree(random_records(rng, 1 + rng.below(60), 0.3));
    const TrimLimits lim{1 + rng.below(4), rng.below(7)};
    auto once = trim(t, lim);
    auto twice = trim(once, lim);
    EXPECT_EQ(ids(once), ids(twice));
    for (std::size_t i = 0; i < once.size(); ++i) {
      EXPECT_LE(once.children(i).size(), lim.max_branching);
      EXPECT_LE(once.depth(i), lim.max_depth);
    }
  }
}

TEST(Hops, SampleTreeExamples) {
  auto t = sample_tree();
  EXPECT_EQ(hops(t, "a", "d"), (Hops{2, 1}));
  EXPECT_EQ(hops(t, "x", "x"), (Hops{0, 0}));
  EXPECT_EQ(hops(t, "b", "d"), (Hops{1, 1}));
  EXPECT_EQ(hops(t, "a", "c"), (Hops{2, 0}));
  EXPECT_THROW(hops(t, "a", "nope"), std::out_of_range);
}

TEST(Hops, MatchesBruteForceOnRandomTrees) {
  Rng rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    auto t = build_tree(random_records(rng, 1 + rng.below(30)));
    for (std::size_t a = 0; a < t.size(); ++a) {
      const auto dist = bfs_distances(t, a);
      for (std::size_t b = 0; b < t.size(); ++b) {
        const auto h = hops(t, a, b);
        EXPECT_EQ(h, brute_hops(t, a, b));
        EXPECT_EQ(h.up + h.down, dist[b]);
      }
    }
  }
}

TEST(CantorIndex, Examples) {
  EXPECT_EQ(cantor_index(2, 1), 7u);
  EXPECT_EQ(cantor_index(1, 2), 7u);
  EXPECT_EQ(cantor_index(0, 0), 0u);
  EXPECT_EQ(cantor_index(2, 0), 3u);
  EXPECT_EQ(cantor_index(1, 1), 4u);
}

TEST(CantorIndex, SymmetricAndInjectiveOnUnorderedPairs) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t u = 0; u <= 64; ++u)
    for (std::uint64_t d = 0; d <= 64; ++d) {
      EXPECT_EQ(cantor_index(u, d), cantor_index(d, u));
      if (u <= d) EXPECT_TRUE(seen.insert(cantor_index(u, d)).second) << u << "," << d;
    }
}

TEST(CantorIndex, TrimmedTreesFitTheTable) {
  EXPECT_EQ(spatial_table_size(5), 66u);
  EXPECT_EQ(cantor_index(5, 5), 60u);
  Rng rng(23);
  for (int trial = 0; trial < 40; ++trial) {
    auto t = trim(build_tree(random_records(rng, 1 + rng.below(80))));
    auto enc = structure_matrices(t, std::nullopt);
    for (auto s : enc.spatial_index) EXPECT_LT(s, spatial_table_size(5));
  }
}

TEST(Degree, SampleTreeExamples) {
  auto t = sample_tree();
  EXPECT_EQ(degree(t, t.index_of("c")), 3u);
  EXPECT_EQ(degree(t, t.index_of("c"), true), 4u);
  EXPECT_EQ(degree(t, t.index_of("x")), 2u);
  EXPECT_EQ(degree(t, t.index_of("a")), 1u);
}

TEST(StructureMatrices, SingleNode) {
  auto enc = structure_matrices(build_tree({rec("r", std::nullopt)}), 5);
  EXPECT_EQ(enc.spatial_index, std::vector<std::size_t>{0});
  EXPECT_EQ(enc.attn_mask, std::vector<bool>{true});
}

TEST(StructureMatrices, SampleTreeUnboundedMatchesBruteForce) {
  auto t = sample_tree();
  auto enc = structure_matrices(t, std::nullopt);
  auto at = [&](const char* a, const char* b) { return enc.spatial(t.index_of(a), t.index_of(b)); };
  EXPECT_EQ(at("c", "a"), 3u);
  EXPECT_EQ(at("b", "d"), 4u);
  EXPECT_EQ(at("a", "d"), 7u);
  EXPECT_EQ(at("c", "b"), 1u);
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = 0; j < t.size(); ++j) {
      const auto h = brute_hops(t, i, j);
      const auto s = h.up + h.down;
      EXPECT_EQ(enc.spatial(i, j), s * (s + 1) / 2 + std::min(h.up, h.down));
      EXPECT_TRUE(enc.allowed(i, j));
    }
}

TEST(StructureMatrices, SampleTreeWindowTwo) {
  auto t = sample_tree();
  auto enc = structure_matrices(t, 2);
  EXPECT_FALSE(enc.allowed(t.index_of("a"), t.index_of("d")));
  EXPECT_FALSE(enc.allowed(t.index_of("d"), t.index_of("a")));
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = 0; j < t.size(); ++j) {
      const auto dist = bfs_distances(t, i)[j];
      EXPECT_EQ(enc.allowed(i, j), dist <= 2);
    }
}

TEST(StructureMatrices, SymmetricWithTrueDiagonal) {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    auto t = build_tree(random_records(rng, 1 + rng.below(25)));
    std::optional<std::size_t> window;
    if (rng.bernoulli(0.5)) window = 1 + rng.below(5);
    auto enc = structure_matrices(t, window);
    for (std::size_t i = 0; i < enc.n; ++i) {
      EXPECT_EQ(enc.spatial(i, i), 0u);
      EXPECT_TRUE(enc.allowed(i, i));
      for (std::size_t j = 0; j < enc.n; ++j) {
        EXPECT_EQ(enc.spatial(i, j), enc.spatial(j, i));
        EXPECT_EQ(enc.allowed(i, j), enc.allowed(j, i));
        if (!window) EXPECT_TRUE(enc.allowed(i, j));
      }
    }
  }
}

TEST(StructureMatrices, PermutationRelabelsConsistently) {
  auto t = sample_tree();
  auto enc = structure_matrices(t, 2);
  const std::vector<std::size_t> perm{4, 2, 0, 3, 1};
  auto p = permute(enc, perm);
  for (std::size_t a = 0; a < 5; ++a) {
    EXPECT_EQ(p.degree[a], enc.degree[perm[a]]);
    for (std::size_t b = 0; b < 5; ++b) {
      EXPECT_EQ(p.spatial(a, b), enc.spatial(perm[a], perm[b]));
      EXPECT_EQ(p.allowed(a, b), enc.allowed(perm[a], perm[b]));
    }
  }
}

TEST(FormatStructure, MatchesGoldenFile) {
  auto t = sample_tree();
  const std::string got = format_structure("sample", t, structure_matrices(t, 2)) +
                          format_structure("sample", t, structure_matrices(t, std::nullopt));
  std::ifstream in(std::string(MDT_FIXTURE_DIR) + "/sample_tree_structure.golden");
  ASSERT_TRUE(in) << "missing golden file";
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(got, ss.str());
}

}  // namespace
}  // namespace mdt
