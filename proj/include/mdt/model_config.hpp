#pragma once

#include <concepts>
#include <cstdint>
#include <optional>
#include <string>
#include <type_traits>

#include "mdt/config.hpp"
#include "mdt/discussion.hpp"
#include "mdt/errors.hpp"

namespace mdt {

// Architecture hyperparameters. Defaults are the desk-scale configuration:
// the topology of the full model with small widths.
struct ModelConfig {
  std::size_t layers = 6;                   // N: layers per modality stack
  std::size_t prefix_layers = 2;            // K: frozen pre-fusion layers
  std::size_t fusion_layers_per_module = 2; // Z
  std::size_t graph_layers_per_module = 2;  // G
  std::size_t bottleneck = 4;               // b
  std::size_t hidden = 64;                  // d
  std::size_t ffn_hidden = 256;
  std::size_t heads_modality = 4;
  std::size_t heads_graph = 4;
  std::optional<std::size_t> window = 5;    // hop budget; nullopt = unbounded
  double attention_dropout = 0.3;
  double activation_dropout = 0.3;
  double graph_dropout = 0.4;
  std::size_t max_degree_table = 16;
  std::size_t max_depth = 5;                // sizes the spatial table
  bool root_parent_bonus = false;

  std::size_t vocab_size = 4;
  std::size_t max_len = 32;
  std::size_t image_size = 16;
  std::size_t patch_size = 4;

  std::string head_mode = "average";  // average | concat
  bool freeze_prefix = true;
  bool freeze_embeddings = true;
  bool use_images = true;
  bool graph_ablation = false;  // zero the graph write-back (no cross-comment channel)
  std::uint64_t init_seed = 1;

  std::size_t modules() const { return (layers - prefix_layers) / fusion_layers_per_module; }
  std::size_t num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
  std::size_t patch_dim() const { return 3 * patch_size * patch_size; }
  // Rows in each spatial bias table, including the trailing out-of-range row.
  std::size_t spatial_rows() const { return spatial_table_size(max_depth) + 1; }

  void validate() const {
    if (layers == 0) throw ConfigError("layers (N) must be positive");
    if (prefix_layers >= layers) throw ConfigError("prefix_layers (K) must be < layers (N)");
    if (fusion_layers_per_module == 0) throw ConfigError("fusion_layers_per_module (Z) must be positive");
    if ((layers - prefix_layers) % fusion_layers_per_module != 0)
      throw ConfigError("layers - prefix_layers (N - K) must be divisible by fusion_layers_per_module (Z)");
    if (bottleneck == 0) throw ConfigError("bottleneck (b) must be at least 1");
    if (hidden == 0 || ffn_hidden == 0) throw ConfigError("hidden sizes must be positive");
    if (heads_modality == 0 || hidden % heads_modality != 0)
      throw ConfigError("hidden must be divisible by heads_modality");
    if (heads_graph == 0 || hidden % heads_graph != 0) throw ConfigError("hidden must be divisible by heads_graph");
    if (window && *window == 0) throw ConfigError("window must be positive or inf");
    for (double p : {attention_dropout, activation_dropout, graph_dropout})
      if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probabilities must be in [0, 1)");
    if (max_degree_table == 0) throw ConfigError("max_degree_table must be positive");
    if (vocab_size < 5) throw ConfigError("vocab_size must cover the reserved ids plus at least one token");
    if (max_len < 2) throw ConfigError("max_len must be at least 2");
    if (patch_size == 0 || image_size % patch_size != 0) throw ConfigError("image_size must be divisible by patch_size");
    if (head_mode != "average" && head_mode != "concat") throw ConfigError("head_mode must be 'average' or 'concat'");
  }
};

template <class C, class V>
  requires std::same_as<std::remove_const_t<C>, ModelConfig>
void visit_fields(C& c, V&& v) {
  v("layers", c.layers);
  v("prefix_layers", c.prefix_layers);
  v("fusion_layers_per_module", c.fusion_layers_per_module);
  v("graph_layers_per_module", c.graph_layers_per_module);
  v("bottleneck", c.bottleneck);
  v("hidden", c.hidden);
  v("ffn_hidden", c.ffn_hidden);
  v("heads_modality", c.heads_modality);
  v("heads_graph", c.heads_graph);
  v("window", c.window);
  v("attention_dropout", c.attention_dropout);
  v("activation_dropout", c.activation_dropout);
  v("graph_dropout", c.graph_dropout);
  v("max_degree_table", c.max_degree_table);
  v("max_depth", c.max_depth);
  v("root_parent_bonus", c.root_parent_bonus);
  v("vocab_size", c.vocab_size);
  v("max_len", c.max_len);
  v("image_size", c.image_size);
  v("patch_size", c.patch_size);
  v("head_mode", c.head_mode);
  v("freeze_prefix", c.freeze_prefix);
  v("freeze_embeddings", c.freeze_embeddings);
  v("use_images", c.use_images);
  v("graph_ablation", c.graph_ablation);
  v("init_seed", c.init_seed);
}

}  // namespace mdt
