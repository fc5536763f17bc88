#pragma once

// Text and image encoder stacks. Both share the hidden width; the first K
// layers of each form the frozen pre-fusion prefix.

#include <optional>
#include <string>
#include <vector>

#include "mdt/image.hpp"
#include "mdt/layers.hpp"
#include "mdt/model_config.hpp"
#include "mdt/tokenizer.hpp"

namespace mdt {

template <class T>
struct TextEncoder {
  Tensor<T> token_embedding;     // [vocab x d]
  Tensor<T> position_embedding;  // [max_len x d]
  std::vector<TransformerLayer<T>> layers;

  static TextEncoder make(ParamFactory<T>& f, const ModelConfig& c) {
    TextEncoder e;
    e.token_embedding = f.normal("text.token_embedding", {c.vocab_size, c.hidden}, 1.0);
    e.position_embedding = f.normal("text.position_embedding", {c.max_len, c.hidden}, 0.2);
    for (std::size_t l = 0; l < c.layers; ++l)
      e.layers.push_back(TransformerLayer<T>::make(f, "text.layer" + std::to_string(l), c.hidden, c.ffn_hidden,
                                                   c.heads_modality, 1000 + 10 * l));
    return e;
  }

  // Token plus learned position embedding, [rows * max_len x d].
  Tensor<T> embed(const TextBatch& batch) const {
    if (batch.max_len != position_embedding.rows())
      throw ShapeError("text batch max_len " + std::to_string(batch.max_len) + " does not match model max_len " +
                       std::to_string(position_embedding.rows()));
    std::vector<std::size_t> tok(batch.ids.size()), pos(batch.ids.size());
    const std::size_t vocab = token_embedding.rows();
    for (std::size_t i = 0; i < batch.ids.size(); ++i) {
      const auto id = static_cast<std::size_t>(batch.ids[i]);
      tok[i] = id < vocab ? id : static_cast<std::size_t>(Tokenizer::kUnk);
      pos[i] = i % batch.max_len;
    }
    return add(gather_rows(token_embedding, std::move(tok)), gather_rows(position_embedding, std::move(pos)));
  }
};

template <class T>
struct ImageEncoder {
  Linear<T> patch_projection;    // [patch_dim x d]
  Tensor<T> position_embedding;  // [num_patches x d]
  std::vector<TransformerLayer<T>> layers;

  static ImageEncoder make(ParamFactory<T>& f, const ModelConfig& c) {
    ImageEncoder e;
    e.patch_projection = Linear<T>::make(f, "image.patch_projection", c.patch_dim(), c.hidden);
    e.position_embedding = f.normal("image.position_embedding", {c.num_patches(), c.hidden}, 0.5);
    for (std::size_t l = 0; l < c.layers; ++l)
      e.layers.push_back(TransformerLayer<T>::make(f, "image.layer" + std::to_string(l), c.hidden, c.ffn_hidden,
                                                   c.heads_modality, 2000 + 10 * l));
    return e;
  }

  // Stacks the patch sequences of every given image, [count * patches x d].
  Tensor<T> embed(const std::vector<const ImagePatches*>& images) const {
    const std::size_t patches = position_embedding.rows();
    const std::size_t dim = patch_projection.weight.rows();
    std::vector<T> raw;
    raw.reserve(images.size() * patches * dim);
    for (const auto* img : images) {
      if (img->num_patches() != patches || img->patch_dim() != dim)
        throw ShapeError("image has " + std::to_string(img->num_patches()) + " patches of dim " +
                         std::to_string(img->patch_dim()) + ", model expects " + std::to_string(patches) + " of dim " +
                         std::to_string(dim));
      raw.insert(raw.end(), img->values.begin(), img->values.end());
    }
    Tensor<T> x({images.size() * patches, dim}, std::move(raw));
    std::vector<std::size_t> pos(images.size() * patches);
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i % patches;
    return add(patch_projection(x), gather_rows(position_embedding, std::move(pos)));
  }
};

inline SequenceLayout text_layout(const TextBatch& batch, std::size_t extra_tokens) {
  SequenceLayout l;
  l.blocks = batch.rows;
  l.seq = batch.max_len + extra_tokens;
  l.key_valid.reserve(l.blocks * l.seq);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    for (std::size_t p = 0; p < batch.max_len; ++p) l.key_valid.push_back(batch.valid[r * batch.max_len + p]);
    for (std::size_t e = 0; e < extra_tokens; ++e) l.key_valid.push_back(1);
  }
  return l;
}

inline SequenceLayout image_layout(std::size_t images, std::size_t patches, std::size_t extra_tokens) {
  SequenceLayout l;
  l.blocks = images;
  l.seq = patches + extra_tokens;
  l.key_valid.assign(images * l.seq, 1);
  return l;
}

template <class T>
struct PrefixOutput {
  Tensor<T> text;   // [n * max_len x d]
  Tensor<T> image;  // [m * patches x d]; undefined when no comment has an image
  std::vector<std::size_t> image_owner;  // comment index of each encoded image, ascending
};

// Runs the embeddings and layers [0, K) of both stacks. With a frozen
// prefix no gradient reaches these parameters.
template <class T>
PrefixOutput<T> pre_fusion(const TextEncoder<T>& text, const ImageEncoder<T>& image, const ModelConfig& cfg,
                           const TextBatch& batch, const std::vector<std::optional<ImagePatches>>& images,
                           DropoutStream* stream = nullptr) {
  if (cfg.prefix_layers >= cfg.layers) throw ConfigError("prefix_layers (K) must be < layers (N)");
  PrefixOutput<T> out;
  out.text = text.embed(batch);
  const auto tl = text_layout(batch, 0);
  for (std::size_t l = 0; l < cfg.prefix_layers; ++l)
    out.text = text.layers[l](out.text, tl, cfg.attention_dropout, cfg.activation_dropout, stream);

  std::vector<const ImagePatches*> present;
  if (cfg.use_images) {
    for (std::size_t c = 0; c < images.size(); ++c) {
      if (images[c]) {
        present.push_back(&*images[c]);
        out.image_owner.push_back(c);
      }
    }
  }
  if (!present.empty()) {
    out.image = image.embed(present);
    const auto il = image_layout(present.size(), cfg.num_patches(), 0);
    for (std::size_t l = 0; l < cfg.prefix_layers; ++l)
      out.image = image.layers[l](out.image, il, cfg.attention_dropout, cfg.activation_dropout, stream);
  }
  return out;
}

}  // namespace mdt
