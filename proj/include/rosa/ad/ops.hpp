#pragma once

// Differentiable op catalogue. Layouts are row-major without a batch axis:
// 1D feature maps are [C, T], 2D maps are [C, H, W], matrices are [rows, cols].

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rosa/ad/tensor.hpp"

namespace rosa::ad {

namespace detail {

inline void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

inline void require_rank(const char* op, const Tensor& a, std::size_t r) {
  if (a.rank() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(a.shape()));
  }
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Applies f elementwise with derivative df(x, y) expressed via input and output.
template <typename F, typename DF>
Tensor unary(const Tensor& a, F f, DF df) {
  std::vector<double> out(a.numel());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return make_result(a.shape(), std::move(out), {a}, [df](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      const double sgn = k == 0 ? 1.0 : -1.0;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sgn * self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

/// scale * a + shift, elementwise.
inline Tensor affine(const Tensor& a, double scale, double shift = 0.0) {
  return detail::unary(
      a, [=](double x) { return scale * x + shift; }, [=](double, double) { return scale; });
}

inline Tensor scale(const Tensor& a, double s) { return affine(a, s, 0.0); }

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(a, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor square(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result({}, {s}, {a}, [](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

/// Mean over one axis; the axis is removed from the shape.
inline Tensor mean_axis(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw ShapeError("mean_axis: axis out of range for " + shape_str(a.shape()));
  const auto sp = detail::split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const double inv = 1.0 / static_cast<double>(sp.extent);
  auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t e = 0; e < sp.extent; ++e)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += av[(o * sp.extent + e) * sp.inner + i] * inv;
  return detail::make_result(std::move(out_shape), std::move(out), {a}, [sp, inv](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t e = 0; e < sp.extent; ++e)
        for (std::size_t i = 0; i < sp.inner; ++i)
          g[(o * sp.extent + e) * sp.inner + i] += self.grad[o * sp.inner + i] * inv;
  });
}

/// Max over one axis; the axis is removed. Ties route the gradient to the first maximum.
inline Tensor max_axis(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank() || a.dim(axis) == 0) throw ShapeError("max_axis: bad axis for " + shape_str(a.shape()));
  const auto sp = detail::split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(out.size());
  auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = o * sp.extent * sp.inner + i;
      for (std::size_t e = 1; e < sp.extent; ++e) {
        const std::size_t k = (o * sp.extent + e) * sp.inner + i;
        if (av[k] > av[best]) best = k;
      }
      out[o * sp.inner + i] = av[best];
      arg[o * sp.inner + i] = best;
    }
  return detail::make_result(std::move(out_shape), std::move(out), {a}, [arg](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t k = 0; k < arg.size(); ++k) g[arg[k]] += self.grad[k];
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

/// Flat gather: out[i] = a.flat[index[i]], shape [index.size()].
inline Tensor take(const Tensor& a, const std::vector<std::size_t>& index) {
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= a.numel()) throw ShapeError("take: index out of range for " + shape_str(a.shape()));
    out[i] = a[index[i]];
  }
  return detail::make_result({index.size()}, std::move(out), {a}, [index](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += self.grad[i];
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return detail::make_result(std::move(shape), std::move(out), {a}, [](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return detail::make_result({c, r}, std::move(out), {a}, [r, c](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

/// Half-open slice [begin, end) along `axis`.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= a.rank() || begin > end || end > a.dim(axis)) {
    throw ShapeError("slice: [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  const auto sp = detail::split_axis(a.shape(), axis);
  const std::size_t len = end - begin;
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  std::vector<double> out(sp.outer * len * sp.inner);
  auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>((o * sp.extent + begin) * sp.inner), len * sp.inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * len * sp.inner));
  return detail::make_result(std::move(out_shape), std::move(out), {a},
                             [sp, begin, len](detail::Node& self) {
                               auto& g = self.parents[0]->ensure_grad();
                               for (std::size_t o = 0; o < sp.outer; ++o)
                                 for (std::size_t k = 0; k < len * sp.inner; ++k)
                                   g[(o * sp.extent + begin) * sp.inner + k] += self.grad[o * len * sp.inner + k];
                             });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) throw ShapeError("concat: axis out of range for " + shape_str(out_shape));
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw ShapeError("concat: rank mismatch " + shape_str(s));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != parts[0].dim(d)) {
        throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(parts[0].shape()));
      }
    }
    out_shape[axis] += s[axis];
  }
  const auto sp = detail::split_axis(out_shape, axis);
  std::vector<double> out(numel_of(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.dim(axis);
    auto pv = p.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * len * sp.inner), len * sp.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * sp.extent + off) * sp.inner));
    off += len;
  }
  return detail::make_result(std::move(out_shape), std::move(out), parts,
                             [sp, offsets, axis](detail::Node& self) {
                               for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                 auto& p = *self.parents[k];
                                 if (!p.requires_grad) continue;
                                 const std::size_t len = p.shape[axis];
                                 auto& g = p.ensure_grad();
                                 for (std::size_t o = 0; o < sp.outer; ++o)
                                   for (std::size_t i = 0; i < len * sp.inner; ++i)
                                     g[o * len * sp.inner + i] +=
                                         self.grad[(o * sp.extent + offsets[k]) * sp.inner + i];
                               }
                             });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += x * bv[p * n + j];
    }
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& go = self.grad;
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += go[i * n + j] * pb.value[p * n + j];
          g[i * k + p] += s;
        }
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double x = pa.value[i * k + p];
          for (std::size_t j = 0; j < n; ++j) g[p * n + j] += x * go[i * n + j];
        }
    }
  });
}

/// x [n, in] times W^T [in, out] plus bias [out]. Bias may be undefined.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::require_rank("linear", x, 2);
  detail::require_rank("linear", w, 2);
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  }
  const bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != out_dim)) {
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " for " + std::to_string(out_dim) + " outputs");
  }
  std::vector<double> out(n * out_dim);
  auto xv = x.data();
  auto wv = w.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < out_dim; ++o) {
      double s = has_bias ? b[o] : 0.0;
      for (std::size_t p = 0; p < in; ++p) s += xv[i * in + p] * wv[o * in + p];
      out[i * out_dim + o] = s;
    }
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return detail::make_result({n, out_dim}, std::move(out), inputs, [n, in, out_dim](detail::Node& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    const auto& go = self.grad;
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double d = go[i * out_dim + o];
          if (d == 0.0) continue;
          for (std::size_t p = 0; p < in; ++p) g[i * in + p] += d * pw.value[o * in + p];
        }
    }
    if (pw.requires_grad) {
      auto& g = pw.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double d = go[i * out_dim + o];
          if (d == 0.0) continue;
          for (std::size_t p = 0; p < in; ++p) g[o * in + p] += d * px.value[i * in + p];
        }
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& g = self.parents[2]->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_dim; ++o) g[o] += go[i * out_dim + o];
    }
  });
}

/// Adds v [c] to every row of m [r, c].
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  detail::require_rank("add_rowvec", m, 2);
  if (v.rank() != 1 || v.dim(0) != m.dim(1)) {
    throw ShapeError("add_rowvec: " + shape_str(m.shape()) + " + " + shape_str(v.shape()));
  }
  const std::size_t r = m.dim(0), c = m.dim(1);
  std::vector<double> out(m.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m[i * c + j] + v[j];
  return detail::make_result(m.shape(), std::move(out), {m, v}, [r, c](detail::Node& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax family (over the last axis; rank-1 inputs are a single row)

namespace detail {
inline std::pair<std::size_t, std::size_t> rows_cols(const char* op, const Tensor& a) {
  if (a.rank() == 1) return {1, a.dim(0)};
  if (a.rank() == 2) return {a.dim(0), a.dim(1)};
  throw ShapeError(std::string(op) + ": expected rank 1 or 2, got " + shape_str(a.shape()));
}
}  // namespace detail

inline Tensor log_softmax(const Tensor& a) {
  const auto [r, c] = detail::rows_cols("log_softmax", a);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, a[i * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(a[i * c + j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a[i * c + j] - lse;
  }
  return detail::make_result(a.shape(), std::move(out), {a}, [r, c](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < c; ++j) gs += self.grad[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        g[i * c + j] += self.grad[i * c + j] - std::exp(self.value[i * c + j]) * gs;
    }
  });
}

inline Tensor softmax(const Tensor& a) {
  const auto [r, c] = detail::rows_cols("softmax", a);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, a[i * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (out[i * c + j] = std::exp(a[i * c + j] - mx));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= s;
  }
  return detail::make_result(a.shape(), std::move(out), {a}, [r, c](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        g[i * c + j] += self.value[i * c + j] * (self.grad[i * c + j] - dot);
    }
  });
}

/// Row-wise log-sum-exp; [r, c] -> [r], [c] -> scalar.
inline Tensor logsumexp(const Tensor& a) {
  const auto [r, c] = detail::rows_cols("logsumexp", a);
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, a[i * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(a[i * c + j] - mx);
    out[i] = mx + std::log(s);
  }
  Shape shape = a.rank() == 1 ? Shape{} : Shape{r};
  return detail::make_result(std::move(shape), std::move(out), {a}, [r, c](detail::Node& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        g[i * c + j] += self.grad[i] * std::exp(p.value[i * c + j] - self.value[i]);
  });
}

/// Picks m[i, index[i]] for every row.
inline Tensor gather_cols(const Tensor& m, const std::vector<std::size_t>& index) {
  detail::require_rank("gather_cols", m, 2);
  const std::size_t r = m.dim(0), c = m.dim(1);
  if (index.size() != r) throw ShapeError("gather_cols: index length differs from rows of " + shape_str(m.shape()));
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (index[i] >= c) throw ShapeError("gather_cols: column index out of range");
    out[i] = m[i * c + index[i]];
  }
  return detail::make_result({r}, std::move(out), {m}, [index, c](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < index.size(); ++i) g[i * c + index[i]] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling

struct Conv2dOptions {
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
};

namespace detail {

inline std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < k) return 0;
  return (in + 2 * pad - k) / stride + 1;
}

// Output positions o with 0 <= o*stride + k - pad < in, as a half-open range.
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t in, std::size_t out, std::size_t k,
                                                       std::size_t stride, std::size_t pad) {
  const long s = static_cast<long>(stride);
  const long off = static_cast<long>(k) - static_cast<long>(pad);
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long hi = (static_cast<long>(in) - 1 - off);
  hi = hi < 0 ? -1 : hi / s;
  hi = std::min(hi, static_cast<long>(out) - 1);
  if (hi < lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi) + 1};
}

}  // namespace detail

/// x [Ci, H, W], w [Co, Ci, KH, KW], b [Co] (may be undefined) -> [Co, H', W'].
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, Conv2dOptions opt = {}) {
  detail::require_rank("conv2d", x, 3);
  detail::require_rank("conv2d", w, 4);
  const std::size_t ci_n = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t co_n = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  if (w.dim(1) != ci_n) {
    throw ShapeError("conv2d: input channels " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  }
  const bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != co_n)) {
    throw ShapeError("conv2d: bias " + shape_str(b.shape()) + " for weight " + shape_str(w.shape()));
  }
  const std::size_t OH = detail::conv_out(H, KH, opt.stride_h, opt.pad_h);
  const std::size_t OW = detail::conv_out(W, KW, opt.stride_w, opt.pad_w);
  if (OH == 0 || OW == 0) {
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " + shape_str(x.shape()));
  }
  std::vector<double> out(co_n * OH * OW, 0.0);
  auto xv = x.data();
  auto wv = w.data();
  const auto sh = opt.stride_h, sw = opt.stride_w, ph = opt.pad_h, pw = opt.pad_w;

  for (std::size_t co = 0; co < co_n; ++co) {
    double* op = out.data() + co * OH * OW;
    if (has_bias) std::fill(op, op + OH * OW, b[co]);
    for (std::size_t ci = 0; ci < ci_n; ++ci) {
      const double* xp = xv.data() + ci * H * W;
      for (std::size_t kh = 0; kh < KH; ++kh) {
        const auto [oh_lo, oh_hi] = detail::valid_range(H, OH, kh, sh, ph);
        for (std::size_t kw = 0; kw < KW; ++kw) {
          const double wk = wv[((co * ci_n + ci) * KH + kh) * KW + kw];
          const auto [ow_lo, ow_hi] = detail::valid_range(W, OW, kw, sw, pw);
          if (ow_lo >= ow_hi) continue;
          const std::size_t col0 = ow_lo * sw + kw - pw;
          const std::size_t cnt = ow_hi - ow_lo;
          for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
            const double* xs = xp + (oh * sh + kh - ph) * W + col0;
            double* os = op + oh * OW + ow_lo;
            if (sw == 1) {
              for (std::size_t j = 0; j < cnt; ++j) os[j] += wk * xs[j];
            } else {
              for (std::size_t j = 0; j < cnt; ++j) os[j] += wk * xs[j * sw];
            }
          }
        }
      }
    }
  }

  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return detail::make_result(
      {co_n, OH, OW}, std::move(out), inputs,
      [=](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pwt = *self.parents[1];
        const auto& go = self.grad;
        double* gx = px.requires_grad ? px.ensure_grad().data() : nullptr;
        double* gw = pwt.requires_grad ? pwt.ensure_grad().data() : nullptr;
        for (std::size_t co = 0; co < co_n; ++co) {
          const double* gop = go.data() + co * OH * OW;
          for (std::size_t ci = 0; ci < ci_n; ++ci) {
            const double* xp = px.value.data() + ci * H * W;
            double* gxp = gx ? gx + ci * H * W : nullptr;
            for (std::size_t kh = 0; kh < KH; ++kh) {
              const auto [oh_lo, oh_hi] = detail::valid_range(H, OH, kh, sh, ph);
              for (std::size_t kw = 0; kw < KW; ++kw) {
                const std::size_t widx = ((co * ci_n + ci) * KH + kh) * KW + kw;
                const double wk = pwt.value[widx];
                const auto [ow_lo, ow_hi] = detail::valid_range(W, OW, kw, sw, pw);
                if (ow_lo >= ow_hi) continue;
                const std::size_t col0 = ow_lo * sw + kw - pw;
                const std::size_t cnt = ow_hi - ow_lo;
                double acc = 0.0;
                for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                  const std::size_t base = (oh * sh + kh - ph) * W + col0;
                  const double* grow = gop + oh * OW + ow_lo;
                  const double* xs = xp + base;
                  if (gxp) {
                    double* gxs = gxp + base;
                    for (std::size_t j = 0; j < cnt; ++j) gxs[j * sw] += wk * grow[j];
                  }
                  if (gw) {
                    for (std::size_t j = 0; j < cnt; ++j) acc += grow[j] * xs[j * sw];
                  }
                }
                if (gw) gw[widx] += acc;
              }
            }
          }
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
          auto& gb = self.parents[2]->ensure_grad();
          for (std::size_t co = 0; co < co_n; ++co) {
            double s = 0.0;
            for (std::size_t i = 0; i < OH * OW; ++i) s += go[co * OH * OW + i];
            gb[co] += s;
          }
        }
      });
}

/// x [Ci, T], w [Co, Ci, K], b [Co] -> [Co, T'].
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride = 1,
                     std::size_t pad = 0) {
  detail::require_rank("conv1d", x, 2);
  detail::require_rank("conv1d", w, 3);
  Tensor x2 = reshape(x, {x.dim(0), 1, x.dim(1)});
  Tensor w2 = reshape(w, {w.dim(0), w.dim(1), 1, w.dim(2)});
  Tensor y = conv2d(x2, w2, b, {1, stride, 0, pad});
  return reshape(y, {y.dim(0), y.dim(2)});
}

namespace detail {
inline Tensor pool1d(const Tensor& x, std::size_t k, std::size_t stride, bool is_max) {
  require_rank(is_max ? "max_pool1d" : "avg_pool1d", x, 2);
  const std::size_t C = x.dim(0), T = x.dim(1);
  if (k == 0 || stride == 0 || T < k) throw ShapeError("pool1d: window larger than input " + shape_str(x.shape()));
  const std::size_t OT = (T - k) / stride + 1;
  std::vector<double> out(C * OT);
  std::vector<std::size_t> arg(is_max ? C * OT : 0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t o = 0; o < OT; ++o) {
      const double* p = x.data().data() + c * T + o * stride;
      if (is_max) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
          if (p[j] > p[best]) best = j;
        out[c * OT + o] = p[best];
        arg[c * OT + o] = c * T + o * stride + best;
      } else {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += p[j];
        out[c * OT + o] = s / static_cast<double>(k);
      }
    }
  return make_result({C, OT}, std::move(out), {x}, [=](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t o = 0; o < OT; ++o) {
        const double d = self.grad[c * OT + o];
        if (is_max) {
          g[arg[c * OT + o]] += d;
        } else {
          for (std::size_t j = 0; j < k; ++j) g[c * T + o * stride + j] += d / static_cast<double>(k);
        }
      }
  });
}
}  // namespace detail

inline Tensor max_pool1d(const Tensor& x, std::size_t k, std::size_t stride) {
  return detail::pool1d(x, k, stride, true);
}

inline Tensor avg_pool1d(const Tensor& x, std::size_t k, std::size_t stride) {
  return detail::pool1d(x, k, stride, false);
}

/// Nearest-neighbour upsampling of [C, T] by `factor`, cropped or edge-padded to `out_len`.
inline Tensor upsample_nearest1d(const Tensor& x, std::size_t factor, std::size_t out_len) {
  detail::require_rank("upsample_nearest1d", x, 2);
  const std::size_t C = x.dim(0), T = x.dim(1);
  if (T == 0 || factor == 0) throw ShapeError("upsample_nearest1d: empty input");
  std::vector<std::size_t> src(out_len);
  for (std::size_t t = 0; t < out_len; ++t) src[t] = std::min(t / factor, T - 1);
  std::vector<double> out(C * out_len);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < out_len; ++t) out[c * out_len + t] = x[c * T + src[t]];
  return detail::make_result({C, out_len}, std::move(out), {x}, [=](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < out_len; ++t) g[c * T + src[t]] += self.grad[c * out_len + t];
  });
}

// ---------------------------------------------------------------------------
// Recurrent

/// One LSTM step. x [I]; state [2H] = (h, c); w_ih [4H, I]; w_hh [4H, H]; b [4H].
/// Gate order i, f, g, o. Returns the new state (h', c') as [2H].
inline Tensor lstm_cell(const Tensor& x, const Tensor& state, const Tensor& w_ih, const Tensor& w_hh,
                        const Tensor& b) {
  detail::require_rank("lstm_cell", x, 1);
  detail::require_rank("lstm_cell", state, 1);
  const std::size_t I = x.dim(0), H = state.dim(0) / 2;
  if (state.dim(0) != 2 * H || w_ih.shape() != Shape{4 * H, I} || w_hh.shape() != Shape{4 * H, H} ||
      b.shape() != Shape{4 * H}) {
    throw ShapeError("lstm_cell: x " + shape_str(x.shape()) + ", state " + shape_str(state.shape()) + ", w_ih " +
                     shape_str(w_ih.shape()) + ", w_hh " + shape_str(w_hh.shape()) + ", b " + shape_str(b.shape()));
  }
  // gates holds post-activation i, f, g, o; kept for the backward pass.
  std::vector<double> gates(4 * H);
  for (std::size_t r = 0; r < 4 * H; ++r) {
    double z = b[r];
    for (std::size_t p = 0; p < I; ++p) z += w_ih[r * I + p] * x[p];
    for (std::size_t p = 0; p < H; ++p) z += w_hh[r * H + p] * state[p];
    gates[r] = (r >= 2 * H && r < 3 * H) ? std::tanh(z) : detail::stable_sigmoid(z);
  }
  std::vector<double> out(2 * H);
  std::vector<double> tanh_c(H);
  for (std::size_t j = 0; j < H; ++j) {
    const double c = gates[H + j] * state[H + j] + gates[j] * gates[2 * H + j];
    tanh_c[j] = std::tanh(c);
    out[H + j] = c;
    out[j] = gates[3 * H + j] * tanh_c[j];
  }
  return detail::make_result({2 * H}, std::move(out), {x, state, w_ih, w_hh, b},
                             [I, H, gates, tanh_c](detail::Node& self) {
                               auto& px = *self.parents[0];
                               auto& ps = *self.parents[1];
                               auto& pih = *self.parents[2];
                               auto& phh = *self.parents[3];
                               auto& pb = *self.parents[4];
                               std::vector<double> dz(4 * H);
                               for (std::size_t j = 0; j < H; ++j) {
                                 const double i = gates[j], f = gates[H + j], g = gates[2 * H + j],
                                              o = gates[3 * H + j];
                                 const double dh = self.grad[j];
                                 const double dc = self.grad[H + j] + dh * o * (1.0 - tanh_c[j] * tanh_c[j]);
                                 dz[j] = dc * g * i * (1.0 - i);
                                 dz[H + j] = dc * ps.value[H + j] * f * (1.0 - f);
                                 dz[2 * H + j] = dc * i * (1.0 - g * g);
                                 dz[3 * H + j] = dh * tanh_c[j] * o * (1.0 - o);
                                 if (ps.requires_grad) ps.ensure_grad()[H + j] += dc * f;
                               }
                               if (px.requires_grad) {
                                 auto& g = px.ensure_grad();
                                 for (std::size_t r = 0; r < 4 * H; ++r)
                                   for (std::size_t p = 0; p < I; ++p) g[p] += pih.value[r * I + p] * dz[r];
                               }
                               if (ps.requires_grad) {
                                 auto& g = ps.ensure_grad();
                                 for (std::size_t r = 0; r < 4 * H; ++r)
                                   for (std::size_t p = 0; p < H; ++p) g[p] += phh.value[r * H + p] * dz[r];
                               }
                               if (pih.requires_grad) {
                                 auto& g = pih.ensure_grad();
                                 for (std::size_t r = 0; r < 4 * H; ++r)
                                   for (std::size_t p = 0; p < I; ++p) g[r * I + p] += dz[r] * px.value[p];
                               }
                               if (phh.requires_grad) {
                                 auto& g = phh.ensure_grad();
                                 for (std::size_t r = 0; r < 4 * H; ++r)
                                   for (std::size_t p = 0; p < H; ++p) g[r * H + p] += dz[r] * ps.value[p];
                               }
                               if (pb.requires_grad) {
                                 auto& g = pb.ensure_grad();
                                 for (std::size_t r = 0; r < 4 * H; ++r) g[r] += dz[r];
                               }
                             });
}

// ---------------------------------------------------------------------------
// Loss primitives

/// Mean binary cross-entropy of logits against constant 0/1 targets.
inline Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
  if (logits.numel() != targets.size()) throw ShapeError("bce_with_logits: target count mismatch");
  const std::size_t n = targets.size();
  if (n == 0) return Tensor::scalar(0.0);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits[i];
    s += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return detail::make_result({}, {s / static_cast<double>(n)}, {logits}, [targets, n](detail::Node& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      g[i] += self.grad[0] * (detail::stable_sigmoid(p.value[i]) - targets[i]) / static_cast<double>(n);
  });
}

/// Class-weighted cross-entropy: sum_i w[y_i] * nll_i / sum_i w[y_i].
/// Empty `class_weights` means uniform weights.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels,
                            const std::vector<double>& class_weights = {}) {
  detail::require_rank("cross_entropy", logits, 2);
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw ShapeError("cross_entropy: label count differs from rows");
  if (!class_weights.empty() && class_weights.size() != c) throw ShapeError("cross_entropy: weight count");
  if (n == 0) return Tensor::scalar(0.0);
  std::vector<double> prob(n * c);
  std::vector<double> w(n);
  double total = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) throw ShapeError("cross_entropy: label out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, logits[i * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (prob[i * c + j] = std::exp(logits[i * c + j] - mx));
    for (std::size_t j = 0; j < c; ++j) prob[i * c + j] /= s;
    w[i] = class_weights.empty() ? 1.0 : class_weights[labels[i]];
    total += w[i] * -(logits[i * c + labels[i]] - mx - std::log(s));
    wsum += w[i];
  }
  if (wsum <= 0.0) return Tensor::scalar(0.0);
  return detail::make_result({}, {total / wsum}, {logits}, [=](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double onehot = j == labels[i] ? 1.0 : 0.0;
        g[i * c + j] += self.grad[0] * w[i] * (prob[i * c + j] - onehot) / wsum;
      }
  });
}

/// Sum of smooth-L1 (beta = 1) over all elements: 0.5 d^2 if |d| < 1 else |d| - 0.5.
inline Tensor smooth_l1(const Tensor& pred, const std::vector<double>& target) {
  if (pred.numel() != target.size()) throw ShapeError("smooth_l1: target count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = std::abs(pred[i] - target[i]);
    s += d < 1.0 ? 0.5 * d * d : d - 0.5;
  }
  return detail::make_result({}, {s}, {pred}, [target](detail::Node& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double d = p.value[i] - target[i];
      g[i] += self.grad[0] * std::clamp(d, -1.0, 1.0);
    }
  });
}

}  // namespace rosa::ad
