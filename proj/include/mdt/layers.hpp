#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mdt/discussion.hpp"
#include "mdt/ops.hpp"
#include "mdt/optim.hpp"
#include "mdt/rng.hpp"

namespace mdt {

// Creates parameters and registers them by name. Values are drawn in double
// from a portable generator so float and double models built from the same
// seed hold identical (up to rounding) weights.
template <class T>
class ParamFactory {
 public:
  ParamFactory(ParamList<T>& registry, std::uint64_t seed) : registry_(registry), rng_(seed) {}

  Tensor<T> normal(const std::string& name, Shape shape, double stddev) {
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(rng_.normal(0.0, stddev));
    return add(name, std::move(shape), std::move(v));
  }

  Tensor<T> constant(const std::string& name, Shape shape, double value) {
    std::vector<T> v(numel(shape), static_cast<T>(value));
    return add(name, std::move(shape), std::move(v));
  }

 private:
  Tensor<T> add(const std::string& name, Shape shape, std::vector<T> v) {
    Tensor<T> t(std::move(shape), std::move(v), true);
    registry_.push_back({name, t});
    return t;
  }

  ParamList<T>& registry_;
  Rng rng_;
};

// Counter-based dropout keys: (seed, site, step, call) -> mask seed.
struct DropoutStream {
  bool enabled = false;
  std::uint64_t seed = 1;
  std::uint64_t step = 0;
  std::uint64_t calls = 0;

  std::uint64_t next_key(std::uint64_t site) {
    return hash_combine(hash_combine(hash_combine(seed, site), step), calls++);
  }
};

template <class T>
Tensor<T> maybe_dropout(const Tensor<T>& x, double p, DropoutStream* stream, std::uint64_t site) {
  if (!stream || !stream->enabled || p <= 0.0) return x;
  return dropout(x, p, stream->next_key(site));
}

// Post-softmax attention weights of one graph layer, per head (n x n each).
struct AttentionProbe {
  std::vector<std::vector<std::vector<double>>> layers;  // [layer][head][i*n+j]
  std::size_t n = 0;
};

template <class T>
struct Linear {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out], undefined when bias-free

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = matmul(x, weight);
    return bias.defined() ? add_row(y, bias) : y;
  }

  static Linear make(ParamFactory<T>& f, const std::string& name, std::size_t in, std::size_t out, bool with_bias = true,
                     double stddev = -1.0) {
    Linear l;
    l.weight = f.normal(name + ".w", {in, out}, stddev > 0 ? stddev : 1.0 / std::sqrt(static_cast<double>(in)));
    if (with_bias) l.bias = f.constant(name + ".b", {out}, 0.0);
    return l;
  }
};

template <class T>
struct LayerNormParams {
  Tensor<T> gain;
  Tensor<T> shift;

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, shift, T(1e-5)); }

  static LayerNormParams make(ParamFactory<T>& f, const std::string& name, std::size_t d) {
    return {f.constant(name + ".gain", {d}, 1.0), f.constant(name + ".shift", {d}, 0.0)};
  }
};

// Multi-head scaled dot-product attention over `blocks` independent
// sequences of length `seq` stacked row-wise in q/k/v. bias(block, head)
// supplies the additive [seq x seq] bias (with -inf for masked pairs).
template <class T, class BiasFn>
Tensor<T> blocked_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t blocks,
                            std::size_t seq, std::size_t heads, BiasFn&& bias, double attn_dropout,
                            DropoutStream* stream, std::uint64_t site, AttentionProbe* probe = nullptr,
                            Diagnostics* diag = nullptr) {
  const std::size_t d = q.cols();
  const std::size_t dh = d / heads;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  if (probe) {
    probe->layers.emplace_back(heads);
    probe->n = seq;
  }
  std::vector<Tensor<T>> block_out;
  block_out.reserve(blocks);
  for (std::size_t b = 0; b < blocks; ++b) {
    std::vector<Tensor<T>> head_out;
    head_out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      auto qh = slice(q, b * seq, seq, h * dh, dh);
      auto kh = slice(k, b * seq, seq, h * dh, dh);
      auto vh = slice(v, b * seq, seq, h * dh, dh);
      auto scores = scale(matmul_nt(qh, kh), inv_sqrt);
      auto weights = softmax_rows(scores, bias(b, h), diag);
      if (probe) {
        auto& dst = probe->layers.back()[h];
        dst.assign(weights.data().begin(), weights.data().end());
      }
      weights = maybe_dropout(weights, attn_dropout, stream, site);
      head_out.push_back(matmul(weights, vh));
    }
    block_out.push_back(heads == 1 ? head_out.front() : concat_cols(head_out));
  }
  return blocks == 1 ? block_out.front() : concat_rows(block_out);
}

// Row layout of a stack of equal-length sequences plus a per-position key
// mask. Masked keys are never attended to.
struct SequenceLayout {
  std::size_t blocks = 0;
  std::size_t seq = 0;
  std::vector<std::uint8_t> key_valid;  // blocks * seq
};

// Pre-norm transformer encoder layer used by both modality stacks.
template <class T>
struct TransformerLayer {
  LayerNormParams<T> ln_attn, ln_ffn;
  Linear<T> wq, wk, wv, wo, ffn_in, ffn_out;
  std::size_t heads = 1;
  std::uint64_t site = 0;

  static TransformerLayer make(ParamFactory<T>& f, const std::string& name, std::size_t d, std::size_t ffn,
                               std::size_t heads, std::uint64_t site) {
    TransformerLayer l;
    l.ln_attn = LayerNormParams<T>::make(f, name + ".ln_attn", d);
    l.wq = Linear<T>::make(f, name + ".wq", d, d);
    l.wk = Linear<T>::make(f, name + ".wk", d, d);
    l.wv = Linear<T>::make(f, name + ".wv", d, d);
    l.wo = Linear<T>::make(f, name + ".wo", d, d);
    l.ln_ffn = LayerNormParams<T>::make(f, name + ".ln_ffn", d);
    l.ffn_in = Linear<T>::make(f, name + ".ffn_in", d, ffn);
    l.ffn_out = Linear<T>::make(f, name + ".ffn_out", ffn, d);
    l.heads = heads;
    l.site = site;
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x, const SequenceLayout& layout, double attn_dropout, double act_dropout,
                       DropoutStream* stream) const {
    const std::size_t s = layout.seq;
    if (x.rows() != layout.blocks * s) throw ShapeError("transformer layer: rows do not match sequence layout");
    auto h = ln_attn(x);
    auto q = wq(h), k = wk(h), v = wv(h);
    auto bias = [&](std::size_t b, std::size_t) {
      std::vector<T> bv(s * s, T{0});
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j)
          if (!layout.key_valid[b * s + j]) bv[i * s + j] = masked_bias<T>();
      return Tensor<T>({s, s}, std::move(bv));
    };
    auto att = blocked_attention(q, k, v, layout.blocks, s, heads, bias, attn_dropout, stream, site);
    auto y = add(x, maybe_dropout(wo(att), act_dropout, stream, site + 1));
    auto f = maybe_dropout(gelu(ffn_in(ln_ffn(y))), act_dropout, stream, site + 2);
    return add(y, ffn_out(f));
  }
};

// Graph transformer layer: multi-head attention between comments with a
// learned per-head scalar bias indexed by the spatial (Cantor) index, and
// window masking. Pre-norm residual blocks.
template <class T>
struct GraphLayer {
  LayerNormParams<T> ln_attn, ln_ffn;
  Linear<T> wq, wk, wv, wo, ffn_in, ffn_out;
  Tensor<T> spatial;  // [spatial_rows x heads]
  std::size_t heads = 1;
  std::uint64_t site = 0;

  static GraphLayer make(ParamFactory<T>& f, const std::string& name, std::size_t d, std::size_t ffn,
                         std::size_t heads, std::size_t spatial_rows, std::uint64_t site) {
    GraphLayer l;
    l.ln_attn = LayerNormParams<T>::make(f, name + ".ln_attn", d);
    l.wq = Linear<T>::make(f, name + ".wq", d, d, false);
    l.wk = Linear<T>::make(f, name + ".wk", d, d, false);
    l.wv = Linear<T>::make(f, name + ".wv", d, d);
    l.wo = Linear<T>::make(f, name + ".wo", d, d);
    l.spatial = f.constant(name + ".spatial", {spatial_rows, heads}, 0.0);
    l.ln_ffn = LayerNormParams<T>::make(f, name + ".ln_ffn", d);
    l.ffn_in = Linear<T>::make(f, name + ".ffn_in", d, ffn);
    l.ffn_out = Linear<T>::make(f, name + ".ffn_out", ffn, d);
    l.heads = heads;
    l.site = site;
    return l;
  }

  // Spatial indices beyond the table map onto its last (sentinel) row.
  std::vector<std::size_t> clamped_index(const StructureEncodings& enc) const {
    const std::size_t last = spatial.rows() - 1;
    std::vector<std::size_t> idx(enc.spatial_index.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = std::min(enc.spatial_index[i], last);
    return idx;
  }

  // Pre-softmax attention bias for one head.
  Tensor<T> bias(const StructureEncodings& enc, std::size_t head) const {
    return gather_bias(spatial, clamped_index(enc), enc.attn_mask, enc.n, head);
  }

  // Pre-softmax scores of one head for already normalized input h.
  Tensor<T> scores(const Tensor<T>& h, const StructureEncodings& enc, std::size_t head) const {
    const std::size_t dh = h.cols() / heads;
    auto q = slice(wq(h), 0, enc.n, head * dh, dh);
    auto k = slice(wk(h), 0, enc.n, head * dh, dh);
    return add(scale(matmul_nt(q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)))), bias(enc, head));
  }

  Tensor<T> attention(const Tensor<T>& x, const StructureEncodings& enc, double dropout_p, DropoutStream* stream,
                      AttentionProbe* probe, Diagnostics* diag) const {
    const auto idx = clamped_index(enc);
    auto h = ln_attn(x);
    auto q = wq(h), k = wk(h), v = wv(h);
    auto bias_fn = [&](std::size_t, std::size_t head) { return gather_bias(spatial, idx, enc.attn_mask, enc.n, head); };
    return wo(blocked_attention(q, k, v, 1, enc.n, heads, bias_fn, dropout_p, stream, site, probe, diag));
  }

  Tensor<T> operator()(const Tensor<T>& x, const StructureEncodings& enc, double dropout_p, DropoutStream* stream,
                       AttentionProbe* probe = nullptr, Diagnostics* diag = nullptr) const {
    if (x.rows() != enc.n) throw ShapeError("graph layer: node count does not match structure encodings");
    auto y = add(x, maybe_dropout(attention(x, enc, dropout_p, stream, probe, diag), dropout_p, stream, site + 1));
    auto f = maybe_dropout(gelu(ffn_in(ln_ffn(y))), dropout_p, stream, site + 2);
    return add(y, ffn_out(f));
  }
};

}  // namespace mdt
