#pragma once

// Differentiable operations on Tensor<T>. Matrices are 2-D row-major;
// "row vectors" may be given as shape [n] or [1 x n].

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mdt/rng.hpp"
#include "mdt/tensor.hpp"

namespace mdt {

// Counts events worth surfacing without aborting (e.g. a softmax row with
// every entry masked).
struct Diagnostics {
  std::size_t fully_masked_rows = 0;
};

template <class T>
constexpr T masked_bias() {
  return -std::numeric_limits<T>::infinity();
}

namespace detail {

template <class T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// out[m x n] += a[m x k] * b[k x n]
template <class T>
void gemm_nn(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* o = out + i * n;
    const T* ar = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ar[p];
      if (av == T{0}) continue;
      const T* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

// out[m x n] += a[m x k] * b[n x k]^T
template <class T>
void gemm_nt(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ar = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* br = b + j * k;
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
      out[i * n + j] += acc;
    }
  }
}

// out[k x n] += a[m x k]^T * b[m x n]
template <class T>
void gemm_tn(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ar = a + i * k;
    const T* br = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ar[p];
      if (av == T{0}) continue;
      T* o = out + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> out(m * n, T{0});
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto pa = a.node(), pb = b.node();
  return Tensor<T>::from_op({m, n}, std::move(out), {&a, &b}, [pa, pb, m, k, n](const std::vector<T>& g) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      detail::gemm_nt(g.data(), pb->value.data(), pa->grad.data(), m, n, k);
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      detail::gemm_tn(pa->value.data(), g.data(), pb->grad.data(), m, k, n);
    }
  });
}

// a * b^T, with a [m x k] and b [n x k].
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw ShapeError("matmul_nt: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                     "^T");
  std::vector<T> out(m * n, T{0});
  detail::gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto pa = a.node(), pb = b.node();
  return Tensor<T>::from_op({m, n}, std::move(out), {&a, &b}, [pa, pb, m, k, n](const std::vector<T>& g) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      detail::gemm_nn(g.data(), pb->value.data(), pa->grad.data(), m, n, k);
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      detail::gemm_tn(g.data(), pa->value.data(), pb->grad.data(), m, n, k);
    }
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(m * n);
  const auto x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  auto pa = a.node();
  return Tensor<T>::from_op({n, m}, std::move(out), {&a}, [pa, m, n](const std::vector<T>& g) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) pa->grad[i * n + j] += g[j * m + i];
  });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  auto pa = a.node(), pb = b.node();
  return Tensor<T>::from_op(a.shape(), std::move(out), {&a, &b}, [pa, pb](const std::vector<T>& g) {
    for (auto* p : {pa.get(), pb.get()}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  auto pa = a.node(), pb = b.node();
  return Tensor<T>::from_op(a.shape(), std::move(out), {&a, &b}, [pa, pb](const std::vector<T>& g) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) pa->grad[i] += g[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) pb->grad[i] -= g[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  auto pa = a.node(), pb = b.node();
  return Tensor<T>::from_op(a.shape(), std::move(out), {&a, &b}, [pa, pb](const std::vector<T>& g) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) pa->grad[i] += g[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) pb->grad[i] += g[i] * pa->value[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  auto pa = a.node();
  return Tensor<T>::from_op(a.shape(), std::move(out), {&a}, [pa, s](const std::vector<T>& g) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) pa->grad[i] += g[i] * s;
  });
}

// x [m x n] + r broadcast over rows; r has n entries.
template <class T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& r) {
  const std::size_t n = x.cols();
  if (r.size() != n)
    throw ShapeError("add_row: row of " + shape_str(r.shape()) + " cannot broadcast over " + shape_str(x.shape()));
  const std::size_t m = x.size() / n;
  std::vector<T> out(x.data().begin(), x.data().end());
  const auto rv = r.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rv[j];
  auto px = x.node(), pr = r.node();
  return Tensor<T>::from_op(x.shape(), std::move(out), {&x, &r}, [px, pr, m, n](const std::vector<T>& g) {
    if (px->requires_grad) {
      px->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) px->grad[i] += g[i];
    }
    if (pr->requires_grad) {
      pr->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) pr->grad[j] += g[i * n + j];
    }
  });
}

// Tanh approximation of GELU; smooth everywhere, so finite differences apply.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v))));
  }
  auto px = x.node();
  return Tensor<T>::from_op(x.shape(), std::move(out), {&x}, [px](const std::vector<T>& g) {
    px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = px->value[i];
      const double u = c * (v + 0.044715 * v * v * v);
      const double t = std::tanh(u);
      const double du = c * (1.0 + 3.0 * 0.044715 * v * v);
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      px->grad[i] += static_cast<T>(g[i] * d);
    }
  });
}

// Normalizes each length-d vector along the last extent, then applies the
// affine gain/shift.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift, T eps = T(1e-5)) {
  const std::size_t d = x.cols();
  if (gain.size() != d || shift.size() != d)
    throw ShapeError("layer_norm: gain/shift " + shape_str(gain.shape()) + "/" + shape_str(shift.shape()) +
                     " do not match last extent of " + shape_str(x.shape()));
  const std::size_t m = x.size() / d;
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto sv = shift.data();
  std::vector<T> out(xv.size());
  std::vector<T> xhat(xv.size());
  std::vector<T> rstd(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xv.data() + i * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(d);
    rstd[i] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mean) * rstd[i];
      out[i * d + j] = xhat[i * d + j] * gv[j] + sv[j];
    }
  }
  auto px = x.node(), pg = gain.node(), ps = shift.node();
  return Tensor<T>::from_op(
      x.shape(), std::move(out), {&x, &gain, &shift},
      [px, pg, ps, m, d, xhat = std::move(xhat), rstd = std::move(rstd)](const std::vector<T>& g) {
        if (pg->requires_grad) {
          pg->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) pg->grad[j] += g[i * d + j] * xhat[i * d + j];
        }
        if (ps->requires_grad) {
          ps->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) ps->grad[j] += g[i * d + j];
        }
        if (px->requires_grad) {
          px->ensure_grad();
          std::vector<T> dxhat(d);
          for (std::size_t i = 0; i < m; ++i) {
            T mean_dx{0}, mean_dx_xhat{0};
            for (std::size_t j = 0; j < d; ++j) {
              dxhat[j] = g[i * d + j] * pg->value[j];
              mean_dx += dxhat[j];
              mean_dx_xhat += dxhat[j] * xhat[i * d + j];
            }
            mean_dx /= static_cast<T>(d);
            mean_dx_xhat /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j)
              px->grad[i * d + j] += rstd[i] * (dxhat[j] - mean_dx - xhat[i * d + j] * mean_dx_xhat);
          }
        }
      });
}

// Row-wise softmax of (scores + bias). An entry whose bias is -inf is masked
// and comes out exactly 0. A row with every entry masked yields all zeros and
// is counted in `diag` when provided.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& scores, const Tensor<T>& bias, Diagnostics* diag = nullptr) {
  detail::require_matrix(scores, "softmax_rows");
  detail::require_same_shape(scores, bias, "softmax_rows");
  const std::size_t m = scores.rows(), n = scores.cols();
  const auto sv = scores.data();
  const auto bv = bias.data();
  std::vector<T> out(m * n, T{0});
  for (std::size_t i = 0; i < m; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      const T b = bv[i * n + j];
      if (b == masked_bias<T>()) continue;
      any = true;
      mx = std::max(mx, sv[i * n + j] + b);
    }
    if (!any) {
      if (diag) ++diag->fully_masked_rows;
      continue;
    }
    T total{0};
    for (std::size_t j = 0; j < n; ++j) {
      const T b = bv[i * n + j];
      if (b == masked_bias<T>()) continue;
      const T e = std::exp(sv[i * n + j] + b - mx);
      out[i * n + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  auto ps = scores.node(), pb = bias.node();
  auto y = out;
  return Tensor<T>::from_op({m, n}, std::move(out), {&scores, &bias},
                            [ps, pb, m, n, y = std::move(y)](const std::vector<T>& g) {
                              std::vector<T> dz(m * n);
                              for (std::size_t i = 0; i < m; ++i) {
                                T dot{0};
                                for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
                                for (std::size_t j = 0; j < n; ++j) dz[i * n + j] = y[i * n + j] * (g[i * n + j] - dot);
                              }
                              for (auto* p : {ps.get(), pb.get()}) {
                                if (!p->requires_grad) continue;
                                p->ensure_grad();
                                for (std::size_t i = 0; i < dz.size(); ++i)
                                  if (std::isfinite(dz[i])) p->grad[i] += dz[i];
                              }
                            });
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& scores) {
  return softmax_rows(scores, Tensor<T>::zeros(scores.shape()));
}

// Stacks matrices with equal column counts.
template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.cols() != n)
      throw ShapeError("concat_rows: column mismatch " + shape_str(parts.front().shape()) + " vs " +
                       shape_str(p.shape()));
    offsets.push_back(m * n);
    m += p.size() / n;
  }
  std::vector<T> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<typename Tensor<T>::NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return Tensor<T>::from_op({m, n}, std::move(out), parts,
                            [nodes = std::move(nodes), offsets = std::move(offsets)](const std::vector<T>& g) {
                              for (std::size_t k = 0; k < nodes.size(); ++k) {
                                auto& p = *nodes[k];
                                if (!p.requires_grad) continue;
                                p.ensure_grad();
                                for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g[offsets[k] + i];
                              }
                            });
}

// Side-by-side concatenation of matrices with equal row counts.
template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  std::vector<std::size_t> col0;
  for (const auto& p : parts) {
    if (p.rows() != m)
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts.front().shape()) + " vs " +
                       shape_str(p.shape()));
    col0.push_back(n);
    n += p.cols();
  }
  std::vector<T> out(m * n);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].data();
    const std::size_t w = parts[k].cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * n + col0[k] + j] = v[i * w + j];
  }
  std::vector<typename Tensor<T>::NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return Tensor<T>::from_op({m, n}, std::move(out), parts,
                            [nodes = std::move(nodes), col0 = std::move(col0), m, n](const std::vector<T>& g) {
                              for (std::size_t k = 0; k < nodes.size(); ++k) {
                                auto& p = *nodes[k];
                                if (!p.requires_grad) continue;
                                p.ensure_grad();
                                const std::size_t w = p.shape.back();
                                for (std::size_t i = 0; i < m; ++i)
                                  for (std::size_t j = 0; j < w; ++j) p.grad[i * w + j] += g[i * n + col0[k] + j];
                              }
                            });
}

// out row i = x row idx[i]. Gradients scatter-add, so repeated indices are
// fine (embedding lookups).
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::size_t> idx) {
  const std::size_t n = x.cols();
  const std::size_t m_in = x.size() / n;
  if (idx.empty()) throw ShapeError("gather_rows: empty index list");
  const auto xv = x.data();
  std::vector<T> out(idx.size() * n);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m_in)
      throw ShapeError("gather_rows: index " + std::to_string(idx[i]) + " out of range for " + shape_str(x.shape()));
    std::copy_n(xv.data() + idx[i] * n, n, out.data() + i * n);
  }
  auto px = x.node();
  const std::size_t m = idx.size();
  return Tensor<T>::from_op({m, n}, std::move(out), {&x}, [px, n, idx = std::move(idx)](const std::vector<T>& g) {
    px->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      T* dst = px->grad.data() + idx[i] * n;
      const T* src = g.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
    }
  });
}

// Sub-block [r0, r0+nr) x [c0, c0+nc) of a matrix.
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t r0, std::size_t nr, std::size_t c0, std::size_t nc) {
  detail::require_matrix(x, "slice");
  const std::size_t n = x.cols();
  if (r0 + nr > x.rows() || c0 + nc > n || nr == 0 || nc == 0)
    throw ShapeError("slice: block out of range for " + shape_str(x.shape()));
  const auto xv = x.data();
  std::vector<T> out(nr * nc);
  for (std::size_t i = 0; i < nr; ++i) std::copy_n(xv.data() + (r0 + i) * n + c0, nc, out.data() + i * nc);
  auto px = x.node();
  return Tensor<T>::from_op({nr, nc}, std::move(out), {&x}, [px, r0, nr, c0, nc, n](const std::vector<T>& g) {
    px->ensure_grad();
    for (std::size_t i = 0; i < nr; ++i)
      for (std::size_t j = 0; j < nc; ++j) px->grad[(r0 + i) * n + c0 + j] += g[i * nc + j];
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  auto px = x.node();
  return Tensor<T>::from_op(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()), {&x},
                            [px](const std::vector<T>& g) {
                              px->ensure_grad();
                              for (std::size_t i = 0; i < g.size(); ++i) px->grad[i] += g[i];
                            });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T total{0};
  for (T v : x.data()) total += v;
  auto px = x.node();
  return Tensor<T>::from_op({1}, {total}, {&x}, [px](const std::vector<T>& g) {
    px->ensure_grad();
    for (auto& v : px->grad) v += g[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.size()));
}

// Inverted dropout with a counter-based mask: element i is dropped iff
// hash(key, i) falls below p, so a given key reproduces the same mask.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, std::uint64_t key) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout probability must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double u = static_cast<double>(hash_combine(key, i) >> 11) * 0x1.0p-53;
    mask[i] = u < p ? T{0} : keep_scale;
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  auto px = x.node();
  return Tensor<T>::from_op(x.shape(), std::move(out), {&x}, [px, mask = std::move(mask)](const std::vector<T>& g) {
    px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) px->grad[i] += g[i] * mask[i];
  });
}

// Sum over rows of -w[t_i] * log softmax(logits_i)[t_i]. Rows with a
// negative target are skipped.
template <class T>
Tensor<T> weighted_cross_entropy_sum(const Tensor<T>& logits, const std::vector<int>& targets,
                                     const std::vector<T>& class_weights) {
  detail::require_matrix(logits, "weighted_cross_entropy");
  const std::size_t m = logits.rows(), c = logits.cols();
  if (targets.size() != m) throw ShapeError("weighted_cross_entropy: one target per logit row required");
  if (class_weights.size() != c) throw ShapeError("weighted_cross_entropy: one weight per class required");
  const auto lv = logits.data();
  for (T v : lv)
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("weighted_cross_entropy: non-finite logit");
  std::vector<T> probs(m * c, T{0});
  T loss{0};
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] < 0) continue;
    if (static_cast<std::size_t>(targets[i]) >= c) throw ShapeError("weighted_cross_entropy: target out of range");
    const T* row = lv.data() + i * c;
    const std::size_t top = static_cast<std::size_t>(std::max_element(row, row + c) - row);
    const T mx = row[top];
    // log-sum-exp as mx + log1p(rest) keeps confident rows accurate.
    T rest{0};
    for (std::size_t j = 0; j < c; ++j)
      if (j != top) rest += std::exp(row[j] - mx);
    const T log_z = mx + std::log1p(rest);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - log_z);
    loss += class_weights[static_cast<std::size_t>(targets[i])] * ((mx - row[targets[i]]) + std::log1p(rest));
  }
  auto pl = logits.node();
  return Tensor<T>::from_op({1}, {loss}, {&logits},
                            [pl, m, c, targets, class_weights, probs = std::move(probs)](const std::vector<T>& g) {
                              pl->ensure_grad();
                              for (std::size_t i = 0; i < m; ++i) {
                                if (targets[i] < 0) continue;
                                const T w = class_weights[static_cast<std::size_t>(targets[i])] * g[0];
                                for (std::size_t j = 0; j < c; ++j) {
                                  const T onehot = static_cast<int>(j) == targets[i] ? T{1} : T{0};
                                  pl->grad[i * c + j] += w * (probs[i * c + j] - onehot);
                                }
                              }
                            });
}

// Attention bias for one head: out[i][j] = table[index[i*n+j]][head], or the
// -inf sentinel where mask[i*n+j] is false. Masked entries carry no gradient.
template <class T>
Tensor<T> gather_bias(const Tensor<T>& table, const std::vector<std::size_t>& index, const std::vector<bool>& mask,
                      std::size_t n, std::size_t head) {
  detail::require_matrix(table, "gather_bias");
  const std::size_t h = table.cols();
  const std::size_t rows = table.rows();
  if (index.size() != n * n || mask.size() != n * n) throw ShapeError("gather_bias: index/mask must be n x n");
  if (head >= h) throw ShapeError("gather_bias: head out of range");
  const auto tv = table.data();
  std::vector<T> out(n * n);
  for (std::size_t i = 0; i < n * n; ++i) {
    if (!mask[i]) {
      out[i] = masked_bias<T>();
      continue;
    }
    if (index[i] >= rows) throw ShapeError("gather_bias: spatial index beyond table");
    out[i] = tv[index[i] * h + head];
  }
  auto pt = table.node();
  return Tensor<T>::from_op({n, n}, std::move(out), {&table}, [pt, index, mask, h, head](const std::vector<T>& g) {
    pt->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (mask[i]) pt->grad[index[i] * h + head] += g[i];
  });
}

// Converts a tensor between scalar types as a fresh leaf (no history).
template <class To, class From>
Tensor<To> cast(const Tensor<From>& x) {
  std::vector<To> v(x.data().begin(), x.data().end());
  return Tensor<To>(x.shape(), std::move(v));
}

}  // namespace mdt
