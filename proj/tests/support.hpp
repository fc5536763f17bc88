#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mdt/mdt.hpp"

namespace mdt::testing {

// The tiny gradient-check configuration: d = 8, N = 4, K = 1, Z = 1, G = 1, b = 2.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 4;
  c.prefix_layers = 1;
  c.fusion_layers_per_module = 1;
  c.graph_layers_per_module = 1;
  c.bottleneck = 2;
  c.hidden = 8;
  c.ffn_hidden = 16;
  c.heads_modality = 2;
  c.heads_graph = 2;
  c.window = std::nullopt;
  c.attention_dropout = 0.0;
  c.activation_dropout = 0.0;
  c.graph_dropout = 0.0;
  c.max_degree_table = 4;
  c.vocab_size = 12;
  c.max_len = 6;
  c.image_size = 4;
  c.patch_size = 2;
  return c;
}

inline Tokenizer tiny_tokenizer() {
  return Tokenizer::from_tokens({"alpha", "beta", "gamma", "delta", "ctx", "amb", "trig", "omega"});
}

inline CommentRecord record(std::string id, std::optional<std::string> parent, std::string text,
                            std::optional<Label> label = std::nullopt, std::optional<std::string> image = std::nullopt) {
  return {std::move(id), std::move(parent), std::move(text), std::move(image), label};
}

inline PixelGrid random_grid(Rng& rng, std::size_t size) {
  PixelGrid g;
  g.height = g.width = size;
  g.values.resize(size * size * 3);
  for (auto& v : g.values) v = static_cast<float>(rng.uniform());
  return g;
}

// A discussion whose images are given per comment id.
inline Discussion make_discussion(const std::string& id, const std::vector<CommentRecord>& records,
                                  const std::map<std::string, PixelGrid>& images = {}) {
  Discussion d;
  d.id = id;
  d.tree = build_tree(records);
  d.images.resize(d.tree.size());
  for (std::size_t i = 0; i < d.tree.size(); ++i) {
    auto it = images.find(d.tree.node(i).id);
    if (it != images.end()) d.images[i] = it->second;
  }
  return d;
}

// Five-comment discussion: c root; b, d, x reply to c; a replies to x.
inline std::vector<CommentRecord> sample_tree_records() {
  return {record("c", std::nullopt, "alpha beta"), record("b", "c", "gamma amb", Label::Neutral),
          record("d", "c", "delta trig", Label::Hateful), record("x", "c", "ctx alpha", Label::Neutral),
          record("a", "x", "amb beta omega", Label::Hateful)};
}

inline std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(MDT_FIXTURE_DIR) / name; }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mdt_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace mdt::testing
