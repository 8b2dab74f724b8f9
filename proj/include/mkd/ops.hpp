#pragma once

// Differentiable primitives. Every backward rule is expressed with these same
// primitives so that gradients can be differentiated again.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "mkd/tensor.hpp"

namespace mkd {

namespace detail {

inline void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

/// Shape two operands broadcast to, numpy style (trailing-aligned, size-1 stretch).
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                           shape_str(b) + " are not broadcast-compatible");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

/// For each flat index of `to`, the flat index of `from` it reads when `from`
/// is broadcast to `to`.
inline std::vector<std::size_t> broadcast_index(const Shape& from, const Shape& to,
                                                const char* op) {
  if (from.size() > to.size()) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(from) + " to " +
                         shape_str(to));
  }
  std::size_t r = to.size();
  std::size_t off = r - from.size();
  std::vector<std::size_t> src_stride(r, 0);
  std::size_t stride = 1;
  for (std::size_t i = r; i-- > off;) {
    std::size_t d = from[i - off];
    if (d != to[i] && d != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(from) + " to " +
                           shape_str(to));
    }
    src_stride[i] = d == 1 ? 0 : stride;
    stride *= d;
  }
  std::size_t n = shape_numel(to);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      src += src_stride[ax];
      if (idx[ax] < to[ax]) break;
      src -= src_stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return map;
}

struct AxisGeometry {
  std::size_t outer;
  std::size_t len;
  std::size_t inner;
};

inline std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  int r = static_cast<int>(rank);
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

inline AxisGeometry axis_geometry(const Shape& s, std::size_t axis) {
  AxisGeometry g{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) g.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) g.inner *= s[i];
  return g;
}

inline Shape keepdim_shape(const Shape& s, std::size_t axis) {
  Shape k = s;
  k[axis] = 1;
  return k;
}

inline Shape reduced_shape(const Shape& s, std::size_t axis) {
  Shape k = s;
  k.erase(k.begin() + static_cast<std::ptrdiff_t>(axis));
  return k;
}

inline void check_finite_input(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw DomainError(std::string(op) + ": non-finite input value");
  }
}

}  // namespace detail

Tensor broadcast_to(const Tensor& x, const Shape& shape);
Tensor sum_to(const Tensor& x, const Shape& shape);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor transpose(const Tensor& x);
Tensor scalar_mul(const Tensor& x, double c);
Tensor softmax_stable(const Tensor& x, int axis = -1);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);

inline Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  detail::require_defined(x, "broadcast");
  if (x.shape() == shape) return x;
  auto map = detail::broadcast_index(x.shape(), shape, "broadcast");
  std::vector<double> out(map.size());
  auto src = x.data();
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = src[map[i]];
  Shape from = x.shape();
  return make_result("broadcast", shape, std::move(out), {x},
                     [from](const Tensor& g) { return std::vector<Tensor>{sum_to(g, from)}; });
}

/// Sums `x` down to `shape`; the adjoint of broadcast_to.
inline Tensor sum_to(const Tensor& x, const Shape& shape) {
  detail::require_defined(x, "sum_to");
  if (x.shape() == shape) return x;
  auto map = detail::broadcast_index(shape, x.shape(), "sum_to");
  std::vector<double> out(shape_numel(shape), 0.0);
  auto src = x.data();
  for (std::size_t i = 0; i < map.size(); ++i) out[map[i]] += src[i];
  Shape from = x.shape();
  return make_result("sum_to", shape, std::move(out), {x}, [from](const Tensor& g) {
    return std::vector<Tensor>{broadcast_to(g, from)};
  });
}

inline Tensor reshape(const Tensor& x, const Shape& shape) {
  detail::require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot reshape " + shape_str(x.shape()) + " to " +
                         shape_str(shape));
  }
  if (x.shape() == shape) return x;
  Shape from = x.shape();
  return make_result("reshape", shape, x.values(), {x}, [from](const Tensor& g) {
    return std::vector<Tensor>{reshape(g, from)};
  });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_defined(x, "transpose");
  if (x.dim() != 2) throw DimensionError("transpose: expected a matrix, got " + shape_str(x.shape()));
  std::size_t r = x.size(0), c = x.size(1);
  std::vector<double> out(r * c);
  auto src = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
  return make_result("transpose", {c, r}, std::move(out), {x},
                     [](const Tensor& g) { return std::vector<Tensor>{transpose(g)}; });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_defined(a, "matmul");
  detail::require_defined(b, "matmul");
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::size_t n = a.size(0), k = a.size(1), m = b.size(1);
  std::vector<double> out(n * m, 0.0);
  auto pa = a.data();
  auto pb = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += av * brow[j];
    }
  }
  return make_result("matmul", {n, m}, std::move(out), {a, b}, [a, b](const Tensor& g) {
    std::vector<Tensor> r(2);
    if (a.requires_grad()) r[0] = matmul(g, transpose(b));
    if (b.requires_grad()) r[1] = matmul(transpose(a), g);
    return r;
  });
}


Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

namespace detail {

/// Broadcasts both operands to their common shape.
inline std::pair<Tensor, Tensor> align(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  Shape s = broadcast_shape(a.shape(), b.shape(), op);
  return {broadcast_to(a, s), broadcast_to(b, s)};
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  auto [x, y] = detail::align(a, b, "add");
  auto pa = x.data();
  auto pb = y.data();
  std::vector<double> out(pa.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  return make_result("add", x.shape(), std::move(out), {x, y},
                     [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  auto [x, y] = detail::align(a, b, "sub");
  auto pa = x.data();
  auto pb = y.data();
  std::vector<double> out(pa.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] - pb[i];
  return make_result("sub", x.shape(), std::move(out), {x, y}, [](const Tensor& g) {
    return std::vector<Tensor>{g, scalar_mul(g, -1.0)};
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  auto [x, y] = detail::align(a, b, "mul");
  auto pa = x.data();
  auto pb = y.data();
  std::vector<double> out(pa.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
  return make_result("mul", x.shape(), std::move(out), {x, y}, [x, y](const Tensor& g) {
    std::vector<Tensor> r(2);
    if (x.requires_grad()) r[0] = mul(g, y);
    if (y.requires_grad()) r[1] = mul(g, x);
    return r;
  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  auto [x, y] = detail::align(a, b, "div");
  auto pa = x.data();
  auto pb = y.data();
  std::vector<double> out(pa.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (pb[i] == 0.0) throw DomainError("div: division by zero");
    out[i] = pa[i] / pb[i];
  }
  return make_result("div", x.shape(), std::move(out), {x, y}, [x, y](const Tensor& g) {
    std::vector<Tensor> r(2);
    if (x.requires_grad()) r[0] = div(g, y);
    if (y.requires_grad()) r[1] = scalar_mul(div(mul(g, x), mul(y, y)), -1.0);
    return r;
  });
}

inline Tensor scalar_mul(const Tensor& x, double c) {
  detail::require_defined(x, "scalar_mul");
  std::vector<double> out(x.values());
  for (double& v : out) v *= c;
  return make_result("scalar_mul", x.shape(), std::move(out), {x},
                     [c](const Tensor& g) { return std::vector<Tensor>{scalar_mul(g, c)}; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  detail::require_defined(x, "add_scalar");
  std::vector<double> out(x.values());
  for (double& v : out) v += c;
  return make_result("add_scalar", x.shape(), std::move(out), {x},
                     [](const Tensor& g) { return std::vector<Tensor>{g}; });
}

inline Tensor relu(const Tensor& x) {
  detail::require_defined(x, "relu");
  std::vector<double> out(x.values());
  std::vector<double> mask(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = out[i] > 0.0 ? 1.0 : 0.0;
    out[i] *= mask[i];
    if (out[i] == 0.0) out[i] = 0.0;  // no negative zeros
  }
  Tensor m(x.shape(), std::move(mask));
  return make_result("relu", x.shape(), std::move(out), {x},
                     [m](const Tensor& g) { return std::vector<Tensor>{mul(g, m)}; });
}

inline Tensor sigmoid(const Tensor& x) {
  detail::require_defined(x, "sigmoid");
  std::vector<double> out(x.values());
  for (double& v : out) {
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return make_result_with_output("sigmoid", x.shape(), std::move(out), {x}, [](Tensor s) {
    return [s](const Tensor& g) {
      return std::vector<Tensor>{mul(g, mul(s, add_scalar(scalar_mul(s, -1.0), 1.0)))};
    };
  });
}

inline Tensor exp(const Tensor& x) {
  detail::require_defined(x, "exp");
  std::vector<double> out(x.values());
  for (double& v : out) v = std::exp(v);
  return make_result_with_output("exp", x.shape(), std::move(out), {x}, [](Tensor y) {
    return [y](const Tensor& g) { return std::vector<Tensor>{mul(g, y)}; };
  });
}

inline Tensor log(const Tensor& x) {
  detail::require_defined(x, "log");
  std::vector<double> out(x.values());
  for (double& v : out) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
    v = std::log(v);
  }
  return make_result("log", x.shape(), std::move(out), {x},
                     [x](const Tensor& g) { return std::vector<Tensor>{div(g, x)}; });
}

/// Clamps into [lo, hi]; the gradient is passed through only where no
/// clamping happened.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
  detail::require_defined(x, "clamp");
  std::vector<double> out(x.values());
  std::vector<double> mask(out.size(), 1.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] < lo) {
      out[i] = lo;
      mask[i] = 0.0;
    } else if (out[i] > hi) {
      out[i] = hi;
      mask[i] = 0.0;
    }
  }
  Tensor m(x.shape(), std::move(mask));
  return make_result("clamp", x.shape(), std::move(out), {x},
                     [m](const Tensor& g) { return std::vector<Tensor>{mul(g, m)}; });
}

/// Sum of every element, as a scalar.
inline Tensor sum(const Tensor& x) {
  detail::require_defined(x, "sum");
  double s = 0.0;
  for (double v : x.data()) s += v;
  Shape from = x.shape();
  return make_result("sum", {}, {s}, {x}, [from](const Tensor& g) {
    return std::vector<Tensor>{broadcast_to(g, from)};
  });
}

inline Tensor sum(const Tensor& x, int axis, bool keepdim) {
  detail::require_defined(x, "sum");
  std::size_t ax = detail::normalize_axis(axis, x.dim(), "sum");
  auto geo = detail::axis_geometry(x.shape(), ax);
  std::vector<double> out(geo.outer * geo.inner, 0.0);
  auto src = x.data();
  for (std::size_t o = 0; o < geo.outer; ++o)
    for (std::size_t l = 0; l < geo.len; ++l)
      for (std::size_t i = 0; i < geo.inner; ++i)
        out[o * geo.inner + i] += src[(o * geo.len + l) * geo.inner + i];
  Shape from = x.shape();
  Shape kd = detail::keepdim_shape(from, ax);
  Shape s = keepdim ? kd : detail::reduced_shape(from, ax);
  return make_result("sum_axis", s, std::move(out), {x}, [from, kd](const Tensor& g) {
    return std::vector<Tensor>{broadcast_to(reshape(g, kd), from)};
  });
}

inline Tensor mean(const Tensor& x) {
  return scalar_mul(sum(x), 1.0 / static_cast<double>(x.numel()));
}

inline Tensor mean(const Tensor& x, int axis, bool keepdim = false) {
  std::size_t ax = detail::normalize_axis(axis, x.dim(), "mean");
  return scalar_mul(sum(x, axis, keepdim), 1.0 / static_cast<double>(x.size(ax)));
}

/// Maximum along `axis`. Ties route the gradient to the lowest index.
inline Tensor max_along_axis(const Tensor& x, int axis, bool keepdim = false) {
  detail::require_defined(x, "max_along_axis");
  std::size_t ax = detail::normalize_axis(axis, x.dim(), "max_along_axis");
  auto geo = detail::axis_geometry(x.shape(), ax);
  if (geo.len == 0) throw DimensionError("max_along_axis: empty axis");
  std::vector<double> out(geo.outer * geo.inner);
  std::vector<double> mask(x.numel(), 0.0);
  auto src = x.data();
  for (std::size_t o = 0; o < geo.outer; ++o)
    for (std::size_t i = 0; i < geo.inner; ++i) {
      std::size_t best = 0;
      for (std::size_t l = 1; l < geo.len; ++l)
        if (src[(o * geo.len + l) * geo.inner + i] > src[(o * geo.len + best) * geo.inner + i])
          best = l;
      out[o * geo.inner + i] = src[(o * geo.len + best) * geo.inner + i];
      mask[(o * geo.len + best) * geo.inner + i] = 1.0;
    }
  Shape from = x.shape();
  Shape kd = detail::keepdim_shape(from, ax);
  Shape s = keepdim ? kd : detail::reduced_shape(from, ax);
  Tensor m(from, std::move(mask));
  return make_result("max_along_axis", s, std::move(out), {x}, [from, kd, m](const Tensor& g) {
    return std::vector<Tensor>{mul(broadcast_to(reshape(g, kd), from), m)};
  });
}

/// Copies x[begin:end) along `axis`.
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);

/// Embeds x into zeros of length `total` along `axis`, starting at `offset`.
inline Tensor pad(const Tensor& x, int axis, std::size_t offset, std::size_t total) {
  detail::require_defined(x, "pad");
  std::size_t ax = detail::normalize_axis(axis, x.dim(), "pad");
  auto geo = detail::axis_geometry(x.shape(), ax);
  if (offset + geo.len > total) throw DimensionError("pad: slice does not fit");
  Shape s = x.shape();
  s[ax] = total;
  std::vector<double> out(shape_numel(s), 0.0);
  auto src = x.data();
  for (std::size_t o = 0; o < geo.outer; ++o)
    for (std::size_t l = 0; l < geo.len; ++l)
      for (std::size_t i = 0; i < geo.inner; ++i)
        out[(o * total + offset + l) * geo.inner + i] = src[(o * geo.len + l) * geo.inner + i];
  std::size_t len = geo.len;
  return make_result("pad", s, std::move(out), {x}, [axis, offset, len](const Tensor& g) {
    return std::vector<Tensor>{slice(g, axis, offset, offset + len)};
  });
}

inline Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  detail::require_defined(x, "slice");
  std::size_t ax = detail::normalize_axis(axis, x.dim(), "slice");
  auto geo = detail::axis_geometry(x.shape(), ax);
  if (begin > end || end > geo.len) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of bounds for " + shape_str(x.shape()));
  }
  std::size_t len = end - begin;
  Shape s = x.shape();
  s[ax] = len;
  std::vector<double> out(shape_numel(s));
  auto src = x.data();
  for (std::size_t o = 0; o < geo.outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < geo.inner; ++i)
        out[(o * len + l) * geo.inner + i] = src[(o * geo.len + begin + l) * geo.inner + i];
  std::size_t total = geo.len;
  return make_result("slice", s, std::move(out), {x}, [axis, begin, total](const Tensor& g) {
    return std::vector<Tensor>{pad(g, axis, begin, total)};
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis = 0) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  for (const auto& p : parts) detail::require_defined(p, "concat");
  std::size_t ax = detail::normalize_axis(axis, parts[0].dim(), "concat");
  Shape s = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = s;
    if (a.size() != b.size()) throw DimensionError("concat: rank mismatch");
    a[ax] = b[ax] = 0;
    if (a != b) {
      throw DimensionError("concat: incompatible shapes " + shape_str(parts[0].shape()) + " and " +
                           shape_str(p.shape()));
    }
    total += p.size(ax);
  }
  s[ax] = total;
  auto geo = detail::axis_geometry(s, ax);
  std::vector<double> out(shape_numel(s));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    std::size_t len = p.size(ax);
    auto src = p.data();
    for (std::size_t o = 0; o < geo.outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < geo.inner; ++i)
          out[(o * total + off + l) * geo.inner + i] = src[(o * len + l) * geo.inner + i];
    off += len;
  }
  std::vector<std::size_t> lens;
  for (const auto& p : parts) lens.push_back(p.size(ax));
  return make_result("concat", s, std::move(out), parts, [axis, offsets, lens](const Tensor& g) {
    std::vector<Tensor> r;
    for (std::size_t k = 0; k < offsets.size(); ++k)
      r.push_back(slice(g, axis, offsets[k], offsets[k] + lens[k]));
    return r;
  });
}

/// Softmax along `axis`, shifting by the per-slice maximum before exponentiating.
inline Tensor softmax_stable(const Tensor& x, int axis) {
  detail::require_defined(x, "softmax_stable");
  std::size_t ax = detail::normalize_axis(axis, x.dim(), "softmax_stable");
  detail::check_finite_input(x, "softmax_stable");
  auto geo = detail::axis_geometry(x.shape(), ax);
  std::vector<double> out(x.values());
  for (std::size_t o = 0; o < geo.outer; ++o)
    for (std::size_t i = 0; i < geo.inner; ++i) {
      auto at = [&](std::size_t l) -> double& { return out[(o * geo.len + l) * geo.inner + i]; };
      double m = at(0);
      for (std::size_t l = 1; l < geo.len; ++l) m = std::max(m, at(l));
      double z = 0.0;
      for (std::size_t l = 0; l < geo.len; ++l) z += (at(l) = std::exp(at(l) - m));
      for (std::size_t l = 0; l < geo.len; ++l) at(l) /= z;
    }
  return make_result_with_output("softmax_stable", x.shape(), std::move(out), {x},
                                 [axis](Tensor p) {
                                   return [p, axis](const Tensor& g) {
                                     Tensor dot = sum(mul(g, p), axis, true);
                                     return std::vector<Tensor>{mul(p, sub(g, dot))};
                                   };
                                 });
}

/// log(softmax(x)) along `axis`, computed as x - max - log(sum(exp(x - max))).
inline Tensor log_softmax(const Tensor& x, int axis = -1) {
  detail::require_defined(x, "log_softmax");
  std::size_t ax = detail::normalize_axis(axis, x.dim(), "log_softmax");
  detail::check_finite_input(x, "log_softmax");
  auto geo = detail::axis_geometry(x.shape(), ax);
  std::vector<double> out(x.values());
  for (std::size_t o = 0; o < geo.outer; ++o)
    for (std::size_t i = 0; i < geo.inner; ++i) {
      auto at = [&](std::size_t l) -> double& { return out[(o * geo.len + l) * geo.inner + i]; };
      double m = at(0);
      for (std::size_t l = 1; l < geo.len; ++l) m = std::max(m, at(l));
      double z = 0.0;
      for (std::size_t l = 0; l < geo.len; ++l) z += std::exp(at(l) - m);
      double lz = m + std::log(z);
      for (std::size_t l = 0; l < geo.len; ++l) at(l) -= lz;
    }
  return make_result_with_output("log_softmax", x.shape(), std::move(out), {x},
                                 [axis](Tensor y) {
                                   return [y, axis](const Tensor& g) {
                                     Tensor total = sum(g, axis, true);
                                     return std::vector<Tensor>{sub(g, mul(exp(y), total))};
                                   };
                                 });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return scalar_mul(a, -1.0); }
inline Tensor operator*(const Tensor& a, double c) { return scalar_mul(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scalar_mul(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }

}  // namespace mkd
