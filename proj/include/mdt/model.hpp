#pragma once

// The discussion transformer: bottleneck fusion layers interleaved with
// graph transformer layers over the comments of one discussion.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "mdt/discussion.hpp"
#include "mdt/encoders.hpp"
#include "mdt/layers.hpp"
#include "mdt/model_config.hpp"

namespace mdt {

// Everything one forward pass needs for a discussion. Comment order is
// arbitrary but must agree across all fields.
struct DiscussionInput {
  std::string id;
  std::vector<std::string> comment_ids;
  TextBatch text;
  std::vector<std::optional<ImagePatches>> images;
  StructureEncodings structure;
  std::vector<int> targets;  // class index per comment, -1 when unlabeled

  std::size_t size() const { return text.rows; }
  std::size_t labeled() const {
    return static_cast<std::size_t>(std::count_if(targets.begin(), targets.end(), [](int t) { return t >= 0; }));
  }
};

// New comment k is old comment perm[k].
inline DiscussionInput permute(const DiscussionInput& in, const std::vector<std::size_t>& perm) {
  DiscussionInput out = in;
  out.structure = permute(in.structure, perm);
  const std::size_t L = in.text.max_len;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    const std::size_t o = perm[k];
    if (!in.comment_ids.empty()) out.comment_ids[k] = in.comment_ids[o];
    out.images[k] = in.images[o];
    if (!in.targets.empty()) out.targets[k] = in.targets[o];
    std::copy_n(in.text.ids.begin() + static_cast<std::ptrdiff_t>(o * L), L,
                out.text.ids.begin() + static_cast<std::ptrdiff_t>(k * L));
    std::copy_n(in.text.valid.begin() + static_cast<std::ptrdiff_t>(o * L), L,
                out.text.valid.begin() + static_cast<std::ptrdiff_t>(k * L));
  }
  return out;
}

// Token streams flowing through the fusion layers of one discussion.
template <class T>
struct FusionState {
  Tensor<T> text;        // [n * text_len x d]
  Tensor<T> image;       // [m * image_len x d], undefined when m = 0
  Tensor<T> bottleneck;  // [n * b x d]
};

struct FusionLayout {
  std::size_t comments = 0;
  std::size_t text_len = 0;
  std::size_t image_len = 0;
  std::size_t bottleneck = 0;
  std::vector<std::size_t> image_owner;  // ascending comment indices with an image
  std::vector<std::uint8_t> text_valid;  // comments * text_len
};

template <class T>
struct FusionStep {
  FusionState<T> out;
  Tensor<T> text_bottleneck;   // B_t after the text layer
  Tensor<T> image_bottleneck;  // B_i after the image layer (image comments only)
};

// Bottleneck merge: the average of both branches for comments with an image,
// the text branch verbatim otherwise.
template <class T>
Tensor<T> fuse_bottlenecks(const Tensor<T>& text_b, const Tensor<T>& image_b, const std::vector<std::size_t>& owner,
                           std::size_t b) {
  if (owner.empty()) return text_b;
  const std::size_t n = text_b.rows() / b;
  if (image_b.rows() != owner.size() * b || image_b.cols() != text_b.cols())
    throw ShapeError("fuse_bottlenecks: image bottleneck " + shape_str(image_b.shape()) + " does not match " +
                     std::to_string(owner.size()) + " images of " + std::to_string(b) + " tokens");
  std::vector<std::size_t> owner_rows;
  for (auto c : owner)
    for (std::size_t j = 0; j < b; ++j) owner_rows.push_back(c * b + j);
  auto avg = scale(add(gather_rows(text_b, owner_rows), image_b), T(0.5));
  std::vector<std::size_t> pick(n * b);
  for (std::size_t r = 0; r < n * b; ++r) pick[r] = r;
  for (std::size_t k = 0; k < owner.size(); ++k)
    for (std::size_t j = 0; j < b; ++j) pick[owner[k] * b + j] = n * b + k * b + j;
  return gather_rows(concat_rows<T>({text_b, avg}), std::move(pick));
}

// One modality fusion layer: append each comment's bottleneck tokens to its
// text (and image) sequence, run the modality layers, strip the bottleneck
// rows back off and merge them.
template <class T, class TextLayerFn, class ImageLayerFn>
FusionStep<T> fusion_layer(const FusionState<T>& in, const FusionLayout& lay, TextLayerFn&& text_layer,
                           ImageLayerFn&& image_layer) {
  const std::size_t n = lay.comments, L = lay.text_len, P = lay.image_len, b = lay.bottleneck;
  const std::size_t d = in.bottleneck.cols();
  if (in.text.cols() != d || in.text.rows() != n * L)
    throw ShapeError("fusion_layer: text stream " + shape_str(in.text.shape()) + " does not match layout");
  if (in.bottleneck.rows() != n * b)
    throw ShapeError("fusion_layer: bottleneck " + shape_str(in.bottleneck.shape()) + " does not have " +
                     std::to_string(b) + " rows per comment");

  FusionStep<T> step;
  {
    std::vector<std::size_t> join(n * (L + b));
    for (std::size_t c = 0; c < n; ++c) {
      for (std::size_t p = 0; p < L; ++p) join[c * (L + b) + p] = c * L + p;
      for (std::size_t j = 0; j < b; ++j) join[c * (L + b) + L + j] = n * L + c * b + j;
    }
    SequenceLayout layout{n, L + b, {}};
    layout.key_valid.reserve(n * (L + b));
    for (std::size_t c = 0; c < n; ++c) {
      for (std::size_t p = 0; p < L; ++p) layout.key_valid.push_back(lay.text_valid[c * L + p]);
      for (std::size_t j = 0; j < b; ++j) layout.key_valid.push_back(1);
    }
    auto out = text_layer(gather_rows(concat_rows<T>({in.text, in.bottleneck}), std::move(join)), layout);
    std::vector<std::size_t> tok_rows, b_rows;
    for (std::size_t c = 0; c < n; ++c) {
      for (std::size_t p = 0; p < L; ++p) tok_rows.push_back(c * (L + b) + p);
      for (std::size_t j = 0; j < b; ++j) b_rows.push_back(c * (L + b) + L + j);
    }
    step.out.text = gather_rows(out, std::move(tok_rows));
    step.text_bottleneck = gather_rows(out, std::move(b_rows));
  }

  const std::size_t m = lay.image_owner.size();
  if (m == 0) {
    step.out.bottleneck = step.text_bottleneck;
    return step;
  }
  if (!in.image.defined() || in.image.rows() != m * P || in.image.cols() != d)
    throw ShapeError("fusion_layer: image stream does not match layout");
  {
    std::vector<std::size_t> owner_rows;
    for (auto c : lay.image_owner)
      for (std::size_t j = 0; j < b; ++j) owner_rows.push_back(c * b + j);
    auto image_b_in = gather_rows(in.bottleneck, std::move(owner_rows));
    std::vector<std::size_t> join(m * (P + b));
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t p = 0; p < P; ++p) join[k * (P + b) + p] = k * P + p;
      for (std::size_t j = 0; j < b; ++j) join[k * (P + b) + P + j] = m * P + k * b + j;
    }
    SequenceLayout layout{m, P + b, std::vector<std::uint8_t>(m * (P + b), 1)};
    auto out = image_layer(gather_rows(concat_rows<T>({in.image, image_b_in}), std::move(join)), layout);
    std::vector<std::size_t> tok_rows, b_rows;
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t p = 0; p < P; ++p) tok_rows.push_back(k * (P + b) + p);
      for (std::size_t j = 0; j < b; ++j) b_rows.push_back(k * (P + b) + P + j);
    }
    step.out.image = gather_rows(out, std::move(tok_rows));
    step.image_bottleneck = gather_rows(out, std::move(b_rows));
  }
  step.out.bottleneck = fuse_bottlenecks(step.text_bottleneck, step.image_bottleneck, lay.image_owner, b);
  return step;
}

// h0_c = b0_c + z[min(deg(c), rows(z) - 1)]
template <class T>
Tensor<T> graph_input(const Tensor<T>& b0, const std::vector<std::size_t>& degrees, const Tensor<T>& centrality) {
  if (degrees.size() != b0.rows()) throw ShapeError("graph_input: one degree per node required");
  const std::size_t last = centrality.rows() - 1;
  std::vector<std::size_t> idx(degrees.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = std::min(degrees[i], last);
  return add(b0, gather_rows(centrality, std::move(idx)));
}

template <class T>
struct ClassifierHeads {
  Linear<T> graph;   // d -> 2, applied to the final b0
  Linear<T> text;    // d -> 2, applied to the final [CLS]
  Linear<T> joint;   // 2d -> 2, only used in "concat" mode
  bool concat = false;
};

// Average of the two heads' logits (or one head over the concatenation).
template <class T>
Tensor<T> classify(const Tensor<T>& b0_final, const Tensor<T>& cls_final, const ClassifierHeads<T>& heads) {
  if (b0_final.cols() != cls_final.cols() || b0_final.rows() != cls_final.rows())
    throw ShapeError("classify: node and [CLS] embeddings differ in shape");
  if (heads.concat) return heads.joint(concat_cols<T>({b0_final, cls_final}));
  return scale(add(heads.graph(b0_final), heads.text(cls_final)), T(0.5));
}

struct ForwardOptions {
  DropoutStream* dropout = nullptr;  // null or disabled: evaluation mode
  AttentionProbe* probe = nullptr;   // records graph attention weights
  Diagnostics* diagnostics = nullptr;
};

template <class T>
struct ForwardTrace {
  std::size_t fusion_modules = 0;
  std::size_t fusion_layers = 0;
  std::size_t graph_layers = 0;
  bool record_bottlenecks = false;
  struct FusionRecord {
    std::vector<T> text_bottleneck;
    std::vector<T> fused_bottleneck;
  };
  std::vector<FusionRecord> fusion;
};

template <class T>
class MdtModel {
 public:
  explicit MdtModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    ParamFactory<T> f(params_, cfg_.init_seed);
    text_ = TextEncoder<T>::make(f, cfg_);
    image_ = ImageEncoder<T>::make(f, cfg_);
    bottleneck_ = f.normal("bottleneck", {cfg_.bottleneck, cfg_.hidden}, 1.0);
    for (std::size_t m = 0; m < cfg_.modules(); ++m) {
      const std::string mod = "module" + std::to_string(m);
      centrality_.push_back(f.normal(mod + ".centrality", {cfg_.max_degree_table, cfg_.hidden}, 0.2));
      for (std::size_t g = 0; g < cfg_.graph_layers_per_module; ++g)
        graph_.push_back(GraphLayer<T>::make(f, mod + ".graph" + std::to_string(g), cfg_.hidden, cfg_.ffn_hidden,
                                             cfg_.heads_graph, cfg_.spatial_rows(),
                                             3000 + 10 * (m * cfg_.graph_layers_per_module + g)));
    }
    final_text_ = LayerNormParams<T>::make(f, "final.text_norm", cfg_.hidden);
    final_graph_ = LayerNormParams<T>::make(f, "final.graph_norm", cfg_.hidden);
    heads_.concat = cfg_.head_mode == "concat";
    if (heads_.concat) {
      heads_.joint = Linear<T>::make(f, "head.joint", 2 * cfg_.hidden, 2);
    } else {
      heads_.graph = Linear<T>::make(f, "head.graph", cfg_.hidden, 2);
      heads_.text = Linear<T>::make(f, "head.text", cfg_.hidden, 2);
    }
    for (auto& p : params_)
      if (is_frozen_name(p.name)) p.tensor.set_requires_grad(false);
  }

  MdtModel(const MdtModel&) = delete;
  MdtModel& operator=(const MdtModel&) = delete;
  MdtModel(MdtModel&&) noexcept = default;
  MdtModel& operator=(MdtModel&&) noexcept = default;

  const ModelConfig& config() const noexcept { return cfg_; }
  ParamList<T>& params() noexcept { return params_; }
  const ParamList<T>& params() const noexcept { return params_; }

  Tensor<T>& param(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p.tensor;
    throw std::out_of_range("no parameter named '" + name + "'");
  }

  // Parameters of the first K layers of both modality stacks.
  ParamList<T> prefix_params() const {
    ParamList<T> out;
    for (const auto& p : params_)
      if (prefix_layer_of(p.name)) out.push_back(p);
    return out;
  }

  ParamList<T> image_params() const {
    ParamList<T> out;
    for (const auto& p : params_)
      if (p.name.rfind("image.", 0) == 0) out.push_back(p);
    return out;
  }

  // Copies values by name from a model of possibly different scalar type.
  template <class U>
  void copy_values_from(const MdtModel<U>& other) {
    for (auto& p : params_) {
      bool found = false;
      for (const auto& q : other.params()) {
        if (q.name != p.name) continue;
        if (q.tensor.shape() != p.tensor.shape()) throw ShapeError("copy_values_from: shape mismatch for " + p.name);
        auto dst = p.tensor.mutable_data();
        const auto src = q.tensor.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
        found = true;
        break;
      }
      if (!found) throw std::out_of_range("copy_values_from: missing parameter " + p.name);
    }
  }

  std::vector<std::vector<T>> snapshot() const {
    std::vector<std::vector<T>> out;
    for (const auto& p : params_) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return out;
  }

  void restore(const std::vector<std::vector<T>>& values) {
    if (values.size() != params_.size()) throw ShapeError("restore: parameter count mismatch");
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto dst = params_[k].tensor.mutable_data();
      if (values[k].size() != dst.size()) throw ShapeError("restore: size mismatch for " + params_[k].name);
      std::copy(values[k].begin(), values[k].end(), dst.begin());
    }
  }

  const TextEncoder<T>& text_encoder() const noexcept { return text_; }
  const ImageEncoder<T>& image_encoder() const noexcept { return image_; }
  const std::vector<GraphLayer<T>>& graph_layers() const noexcept { return graph_; }
  const std::vector<Tensor<T>>& centrality() const noexcept { return centrality_; }
  const ClassifierHeads<T>& heads() const noexcept { return heads_; }

  // Per-comment logits [n x 2] for one discussion.
  Tensor<T> forward(const DiscussionInput& in, const ForwardOptions& opt = {}, ForwardTrace<T>* trace = nullptr) const {
    const std::size_t n = in.size();
    if (n == 0) throw ShapeError("forward: empty discussion");
    if (n > kMaxDiscussionSize)
      throw ShapeError("forward: discussion of " + std::to_string(n) + " comments exceeds the limit of " +
                       std::to_string(kMaxDiscussionSize));
    if (in.structure.n != n || in.images.size() != n)
      throw ShapeError("forward: structure/images do not match the number of comments");
    DropoutStream* stream = opt.dropout && opt.dropout->enabled ? opt.dropout : nullptr;
    const std::size_t b = cfg_.bottleneck, L = cfg_.max_len;

    auto prefix = pre_fusion(text_, image_, cfg_, in.text, in.images, stream);

    FusionLayout lay;
    lay.comments = n;
    lay.text_len = L;
    lay.image_len = cfg_.num_patches();
    lay.bottleneck = b;
    lay.image_owner = prefix.image_owner;
    lay.text_valid = in.text.valid;

    FusionState<T> state{prefix.text, prefix.image, {}};
    std::vector<std::size_t> tile(n * b);
    for (std::size_t r = 0; r < n * b; ++r) tile[r] = r % b;
    state.bottleneck = gather_rows(bottleneck_, std::move(tile));

    std::vector<std::size_t> b0_rows(n);
    for (std::size_t c = 0; c < n; ++c) b0_rows[c] = c * b;

    const std::size_t Z = cfg_.fusion_layers_per_module, G = cfg_.graph_layers_per_module;
    for (std::size_t m = 0; m < cfg_.modules(); ++m) {
      for (std::size_t z = 0; z < Z; ++z) {
        const std::size_t l = cfg_.prefix_layers + m * Z + z;
        auto text_fn = [&](const Tensor<T>& x, const SequenceLayout& sl) {
          return text_.layers[l](x, sl, cfg_.attention_dropout, cfg_.activation_dropout, stream);
        };
        auto image_fn = [&](const Tensor<T>& x, const SequenceLayout& sl) {
          return image_.layers[l](x, sl, cfg_.attention_dropout, cfg_.activation_dropout, stream);
        };
        auto step = fusion_layer(state, lay, text_fn, image_fn);
        if (trace) {
          ++trace->fusion_layers;
          if (trace->record_bottlenecks)
            trace->fusion.push_back({{step.text_bottleneck.data().begin(), step.text_bottleneck.data().end()},
                                     {step.out.bottleneck.data().begin(), step.out.bottleneck.data().end()}});
        }
        state = std::move(step.out);
      }

      auto h = graph_input(gather_rows(state.bottleneck, b0_rows), in.structure.degree, centrality_[m]);
      for (std::size_t g = 0; g < G; ++g) {
        h = graph_[m * G + g](h, in.structure, cfg_.graph_dropout, stream, opt.probe, opt.diagnostics);
        if (trace) ++trace->graph_layers;
      }
      if (cfg_.graph_ablation) h = Tensor<T>::zeros({n, cfg_.hidden});

      // h^G replaces row 0 of each comment's bottleneck block.
      std::vector<std::size_t> pick(n * b);
      for (std::size_t r = 0; r < n * b; ++r) pick[r] = r % b == 0 ? n * b + r / b : r;
      state.bottleneck = gather_rows(concat_rows<T>({state.bottleneck, h}), std::move(pick));
      if (trace) ++trace->fusion_modules;
    }

    std::vector<std::size_t> cls_rows(n);
    for (std::size_t c = 0; c < n; ++c) cls_rows[c] = c * L;
    auto cls = final_text_(gather_rows(state.text, std::move(cls_rows)));
    auto node = final_graph_(gather_rows(state.bottleneck, std::move(b0_rows)));
    return classify(node, cls, heads_);
  }

 private:
  std::optional<std::size_t> prefix_layer_of(const std::string& name) const {
    for (const char* stack : {"text.layer", "image.layer"}) {
      const std::string s(stack);
      if (name.rfind(s, 0) != 0) continue;
      const auto dot = name.find('.', s.size());
      const auto l = static_cast<std::size_t>(std::stoul(name.substr(s.size(), dot - s.size())));
      if (l < cfg_.prefix_layers) return l;
    }
    return std::nullopt;
  }

  bool is_frozen_name(const std::string& name) const {
    if (cfg_.freeze_prefix && prefix_layer_of(name)) return true;
    if (cfg_.freeze_embeddings && cfg_.freeze_prefix && cfg_.prefix_layers > 0) {
      for (const char* e : {"text.token_embedding", "text.position_embedding", "image.patch_projection",
                            "image.position_embedding"})
        if (name.rfind(e, 0) == 0) return true;
    }
    return false;
  }

  ModelConfig cfg_;
  ParamList<T> params_;
  TextEncoder<T> text_;
  ImageEncoder<T> image_;
  Tensor<T> bottleneck_;
  std::vector<Tensor<T>> centrality_;
  std::vector<GraphLayer<T>> graph_;
  LayerNormParams<T> final_text_, final_graph_;
  ClassifierHeads<T> heads_;
};

}  // namespace mdt
