#pragma once

// Binary checkpoints. Layout (all integers little-endian, see
// docs/checkpoint_format.md):
//
//   magic "MDTCKPT\0" | u32 version
//   u32 meta count    | per entry: u32 key length, key, u64 value length, value
//   u32 param count   | per param: u32 name length, name, u32 rank, u64 extent * rank, f32 * numel
//   u8 has optimizer  | if 1: u64 step, f64 beta1, f64 beta2, f64 eps, then per param
//                     |       f32 * numel first moment, f32 * numel second moment

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mdt/errors.hpp"
#include "mdt/model.hpp"
#include "mdt/optim.hpp"

namespace mdt {

inline constexpr char kCheckpointMagic[8] = {'M', 'D', 'T', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct SavedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct SavedOptimizer {
  std::uint64_t step = 0;
  AdamConfig config;
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;
};

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<SavedTensor> params;
  std::optional<SavedOptimizer> optimizer;

  const std::string* find_meta(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return &v;
    return nullptr;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void str64(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { return need(1, "u8"), in_[pos_++]; }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::uint64_t n) {
    need(n, "string");
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
  }
  std::vector<float> floats(std::uint64_t n) {
    if (n > remaining() / 4) throw FormatError("checkpoint truncated reading float data", in_.size());
    std::vector<float> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = f32();
    return v;
  }
  std::size_t pos() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return in_.size() - pos_; }

 private:
  void need(std::uint64_t n, const char* what) const {
    if (n > remaining()) throw FormatError(std::string("checkpoint truncated reading ") + what, in_.size());
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    w.str32(k);
    w.str64(v);
  }
  w.u32(static_cast<std::uint32_t>(ck.params.size()));
  for (const auto& p : ck.params) {
    if (numel(p.shape) != p.values.size()) throw ShapeError("checkpoint: value count does not match shape of " + p.name);
    w.str32(p.name);
    w.u32(static_cast<std::uint32_t>(p.shape.size()));
    for (auto e : p.shape) w.u64(e);
    for (float v : p.values) w.f32(v);
  }
  w.u8(ck.optimizer ? 1 : 0);
  if (ck.optimizer) {
    const auto& o = *ck.optimizer;
    if (o.first_moment.size() != ck.params.size() || o.second_moment.size() != ck.params.size())
      throw ShapeError("checkpoint: optimizer state does not match parameter count");
    w.u64(o.step);
    w.f64(o.config.beta1);
    w.f64(o.config.beta2);
    w.f64(o.config.eps);
    for (std::size_t k = 0; k < ck.params.size(); ++k) {
      if (o.first_moment[k].size() != ck.params[k].values.size() ||
          o.second_moment[k].size() != ck.params[k].values.size())
        throw ShapeError("checkpoint: optimizer moments do not match " + ck.params[k].name);
      for (float v : o.first_moment[k]) w.f32(v);
      for (float v : o.second_moment[k]) w.f32(v);
    }
  }
  return w.take();
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kCheckpointMagic || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw FormatError("not a checkpoint (bad magic)", 0);
  detail::ByteReader r(bytes.subspan(sizeof kCheckpointMagic));
  const std::size_t base = sizeof kCheckpointMagic;
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), base);
  Checkpoint ck;
  const auto nmeta = r.u32();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    auto key = r.str(r.u32());
    auto value = r.str(r.u64());
    ck.meta.emplace_back(std::move(key), std::move(value));
  }
  const auto nparams = r.u32();
  for (std::uint32_t i = 0; i < nparams; ++i) {
    SavedTensor t;
    t.name = r.str(r.u32());
    const auto rank = r.u32();
    if (rank == 0 || rank > 8) throw FormatError("bad rank for " + t.name, base + r.pos());
    std::uint64_t count = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
      const auto e = r.u64();
      if (e == 0 || e > (std::uint64_t{1} << 32)) throw FormatError("bad extent for " + t.name, base + r.pos());
      t.shape.push_back(static_cast<std::size_t>(e));
      count *= e;
    }
    t.values = r.floats(count);
    ck.params.push_back(std::move(t));
  }
  if (r.u8()) {
    SavedOptimizer o;
    o.step = r.u64();
    o.config.beta1 = r.f64();
    o.config.beta2 = r.f64();
    o.config.eps = r.f64();
    for (const auto& p : ck.params) {
      o.first_moment.push_back(r.floats(p.values.size()));
      o.second_moment.push_back(r.floats(p.values.size()));
    }
    ck.optimizer = std::move(o);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", base + r.pos());
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw e.prefixed(path.string());
  }
}

template <class T>
Checkpoint make_checkpoint(const MdtModel<T>& model, std::vector<std::pair<std::string, std::string>> meta,
                           const OptimizerState<T>* opt = nullptr) {
  Checkpoint ck;
  ck.meta = std::move(meta);
  for (const auto& p : model.params())
    ck.params.push_back({p.name, p.tensor.shape(), std::vector<float>(p.tensor.data().begin(), p.tensor.data().end())});
  if (opt) {
    SavedOptimizer o;
    o.step = opt->step;
    o.config = opt->config;
    for (const auto& m : opt->first_moment) o.first_moment.emplace_back(m.begin(), m.end());
    for (const auto& m : opt->second_moment) o.second_moment.emplace_back(m.begin(), m.end());
    ck.optimizer = std::move(o);
  }
  return ck;
}

// Copies parameter values by name; every model parameter must be present
// with the same shape.
template <class T>
void apply_checkpoint(MdtModel<T>& model, const Checkpoint& ck) {
  for (auto& p : model.params()) {
    const SavedTensor* src = nullptr;
    for (const auto& s : ck.params)
      if (s.name == p.name) src = &s;
    if (!src) throw DataError("checkpoint lacks parameter " + p.name);
    if (src->shape != p.tensor.shape())
      throw DataError("checkpoint parameter " + p.name + " has shape " + shape_str(src->shape) + ", model expects " +
                      shape_str(p.tensor.shape()));
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src->values[i]);
  }
}

}  // namespace mdt
