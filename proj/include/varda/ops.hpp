#pragma once

#include <cmath>
#include <limits>

#include "varda/tensor.hpp"

// Differentiable elementwise, reduction, and linear-algebra ops.
//
// Broadcasting is limited to two cases: one operand has a single element, or
// one operand's shape equals the trailing axes of the other (its values are
// tiled along the leading axes).

namespace varda {

namespace detail {

enum class Broadcast { none, rhs, lhs };

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline Broadcast resolve_broadcast(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::none;
  const Index na = shape_numel(a), nb = shape_numel(b);
  if (nb == 1 || (is_suffix(b, a) && nb <= na)) return Broadcast::rhs;
  if (na == 1 || is_suffix(a, b)) return Broadcast::lhs;
  throw ContractViolation(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                          shape_str(b));
}

// Sum a full-size gradient down to the tiled operand's size.
template <typename Scalar>
ArrayX<Scalar> reduce_tiled(const ArrayX<Scalar>& g, Index small) {
  const Index reps = g.size() / small;
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> m(g.data(), small, reps);
  return m.rowwise().sum().array();
}

template <typename Scalar>
ArrayX<Scalar> tile(const ArrayX<Scalar>& v, Index total) {
  return v.replicate(total / v.size(), 1);
}

struct AxisView {
  Index outer, len, inner;
};

inline AxisView axis_view(const Shape& shape, Index axis) {
  const Index rank = static_cast<Index>(shape.size());
  if (axis < 0) axis += rank;
  VARDA_REQUIRE(axis >= 0 && axis < rank,
                "axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  AxisView v{1, shape[std::size_t(axis)], 1};
  for (Index i = 0; i < axis; ++i) v.outer *= shape[std::size_t(i)];
  for (Index i = axis + 1; i < rank; ++i) v.inner *= shape[std::size_t(i)];
  return v;
}

inline Index normalize_axis(Index axis, Index rank) {
  if (axis < 0) axis += rank;
  VARDA_REQUIRE(axis >= 0 && axis < rank, "axis out of range");
  return axis;
}

// Shared driver for binary elementwise ops. `fwd(A, B)` computes the result
// on equally sized arrays; `bwd(A, B, out, g, ga, gb)` fills full-size grads.
template <typename Scalar, typename Fwd, typename Bwd>
Tensor<Scalar> binary(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* name,
                      Fwd fwd, Bwd bwd) {
  const Broadcast mode = resolve_broadcast(a.shape(), b.shape(), name);
  const Shape shape = mode == Broadcast::lhs ? b.shape() : a.shape();
  const Index total = shape_numel(shape);
  ArrayX<Scalar> av = mode == Broadcast::lhs ? tile(a.data(), total) : a.data();
  ArrayX<Scalar> bv = mode == Broadcast::rhs ? tile(b.data(), total) : b.data();
  ArrayX<Scalar> out = fwd(av, bv);
  auto an = a.node(), bn = b.node();
  return emit<Scalar>(shape, std::move(out), {&a, &b},
                      [an, bn, av = std::move(av), bv = std::move(bv), mode,
                       bwd](const Node<Scalar>& o) {
                        ArrayX<Scalar> ga, gb;
                        bwd(av, bv, o.data, o.grad, an->requires_grad ? &ga : nullptr,
                            bn->requires_grad ? &gb : nullptr);
                        if (an->requires_grad)
                          an->accumulate(mode == Broadcast::lhs ? reduce_tiled(ga, an->data.size())
                                                                : ga);
                        if (bn->requires_grad)
                          bn->accumulate(mode == Broadcast::rhs ? reduce_tiled(gb, bn->data.size())
                                                                : gb);
                      });
}

template <typename Scalar, typename Fwd, typename Bwd>
Tensor<Scalar> unary(const Tensor<Scalar>& a, Fwd fwd, Bwd bwd) {
  ArrayX<Scalar> out = fwd(a.data());
  auto an = a.node();
  return emit<Scalar>(a.shape(), std::move(out), {&a}, [an, bwd](const Node<Scalar>& o) {
    an->accumulate(bwd(an->data, o.data, o.grad));
  });
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(
      a, b, "add", [](const auto& x, const auto& y) -> ArrayX<Scalar> { return x + y; },
      [](const auto&, const auto&, const auto&, const auto& g, auto* ga, auto* gb) {
        if (ga) *ga = g;
        if (gb) *gb = g;
      });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(
      a, b, "sub", [](const auto& x, const auto& y) -> ArrayX<Scalar> { return x - y; },
      [](const auto&, const auto&, const auto&, const auto& g, auto* ga, auto* gb) {
        if (ga) *ga = g;
        if (gb) *gb = -g;
      });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(
      a, b, "mul", [](const auto& x, const auto& y) -> ArrayX<Scalar> { return x * y; },
      [](const auto& x, const auto& y, const auto&, const auto& g, auto* ga, auto* gb) {
        if (ga) *ga = g * y;
        if (gb) *gb = g * x;
      });
}

template <typename Scalar>
Tensor<Scalar> div(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if ((b.data() == Scalar(0)).any()) throw DomainError("div: division by zero");
  return detail::binary(
      a, b, "div", [](const auto& x, const auto& y) -> ArrayX<Scalar> { return x / y; },
      [](const auto& x, const auto& y, const auto&, const auto& g, auto* ga, auto* gb) {
        if (ga) *ga = g / y;
        if (gb) *gb = -g * x / y.square();
      });
}

template <typename Scalar>
Tensor<Scalar> neg(const Tensor<Scalar>& a) {
  return detail::unary(
      a, [](const auto& x) -> ArrayX<Scalar> { return -x; },
      [](const auto&, const auto&, const auto& g) -> ArrayX<Scalar> { return -g; });
}

template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& a) {
  return detail::unary(
      a, [](const auto& x) -> ArrayX<Scalar> { return x.exp(); },
      [](const auto&, const auto& y, const auto& g) -> ArrayX<Scalar> { return g * y; });
}

template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& a) {
  if ((a.data() <= Scalar(0)).any()) throw DomainError("log: nonpositive input");
  return detail::unary(
      a, [](const auto& x) -> ArrayX<Scalar> { return x.log(); },
      [](const auto& x, const auto&, const auto& g) -> ArrayX<Scalar> { return g / x; });
}

template <typename Scalar>
Tensor<Scalar> square(const Tensor<Scalar>& a) {
  return detail::unary(
      a, [](const auto& x) -> ArrayX<Scalar> { return x.square(); },
      [](const auto& x, const auto&, const auto& g) -> ArrayX<Scalar> {
        return Scalar(2) * x * g;
      });
}

template <typename Scalar>
Tensor<Scalar> sqrt(const Tensor<Scalar>& a) {
  if ((a.data() <= Scalar(0)).any()) throw DomainError("sqrt: nonpositive input");
  return detail::unary(
      a, [](const auto& x) -> ArrayX<Scalar> { return x.sqrt(); },
      [](const auto&, const auto& y, const auto& g) -> ArrayX<Scalar> {
        return g / (Scalar(2) * y);
      });
}

template <typename Scalar>
Tensor<Scalar> clamp(const Tensor<Scalar>& a, Scalar lo, Scalar hi) {
  VARDA_REQUIRE(lo <= hi, "clamp: lo > hi");
  return detail::unary(
      a, [lo, hi](const auto& x) -> ArrayX<Scalar> { return x.max(lo).min(hi); },
      [lo, hi](const auto& x, const auto&, const auto& g) -> ArrayX<Scalar> {
        return ((x >= lo) && (x <= hi)).select(g, Scalar(0));
      });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
  return detail::unary(
      a, [](const auto& x) -> ArrayX<Scalar> { return x.max(Scalar(0)); },
      [](const auto& x, const auto&, const auto& g) -> ArrayX<Scalar> {
        return (x > Scalar(0)).select(g, Scalar(0));
      });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
  return detail::unary(
      a, [s](const auto& x) -> ArrayX<Scalar> { return x * s; },
      [s](const auto&, const auto&, const auto& g) -> ArrayX<Scalar> { return g * s; });
}

template <typename Scalar>
Tensor<Scalar> shift(const Tensor<Scalar>& a, Scalar s) {
  return detail::unary(
      a, [s](const auto& x) -> ArrayX<Scalar> { return x + s; },
      [](const auto&, const auto&, const auto& g) -> ArrayX<Scalar> { return g; });
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }
template <typename Scalar>
Tensor<Scalar> operator/(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return div(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a) { return neg(a); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, Scalar s) { return scale(a, s); }
template <typename Scalar>
Tensor<Scalar> operator*(Scalar s, const Tensor<Scalar>& a) { return scale(a, s); }
template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, Scalar s) { return shift(a, s); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, Scalar s) { return shift(a, -s); }

// ---- shape ---------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  VARDA_REQUIRE(shape_numel(shape) == a.numel(),
                "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  auto an = a.node();
  return detail::emit<Scalar>(std::move(shape), a.data(), {&a},
                              [an](const detail::Node<Scalar>& o) { an->accumulate(o.grad); });
}

// Repeat singleton axes up to `shape` (same rank; each extent 1 or equal).
template <typename Scalar>
Tensor<Scalar> expand(const Tensor<Scalar>& a, Shape shape) {
  const Shape& src = a.shape();
  VARDA_REQUIRE(src.size() == shape.size(), "expand: rank mismatch");
  const std::size_t rank = shape.size();
  std::vector<Index> stride(rank, 0);
  Index s = 1;
  for (std::size_t i = rank; i-- > 0;) {
    VARDA_REQUIRE(src[i] == shape[i] || src[i] == 1,
                  "expand: cannot expand " + shape_str(src) + " to " + shape_str(shape));
    stride[i] = src[i] == 1 ? 0 : s;
    s *= src[i];
  }
  const Index total = shape_numel(shape);
  std::vector<Index> map(static_cast<std::size_t>(total));
  std::vector<Index> counter(rank, 0);
  for (Index flat = 0; flat < total; ++flat) {
    Index off = 0;
    for (std::size_t i = 0; i < rank; ++i) off += counter[i] * stride[i];
    map[std::size_t(flat)] = off;
    for (std::size_t i = rank; i-- > 0;) {
      if (++counter[i] < shape[i]) break;
      counter[i] = 0;
    }
  }
  ArrayX<Scalar> out(total);
  for (Index i = 0; i < total; ++i) out[i] = a.data()[map[std::size_t(i)]];
  auto an = a.node();
  return detail::emit<Scalar>(std::move(shape), std::move(out), {&a},
                              [an, map = std::move(map)](const detail::Node<Scalar>& o) {
                                ArrayX<Scalar> g = ArrayX<Scalar>::Zero(an->data.size());
                                for (Index i = 0; i < o.grad.size(); ++i)
                                  g[map[std::size_t(i)]] += o.grad[i];
                                an->accumulate(g);
                              });
}

// ---- reductions ----------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  ArrayX<Scalar> out(1);
  out[0] = a.data().sum();
  auto an = a.node();
  return detail::emit<Scalar>(Shape{}, std::move(out), {&a}, [an](const detail::Node<Scalar>& o) {
    an->accumulate(ArrayX<Scalar>::Constant(an->data.size(), o.grad[0]));
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  return scale(sum(a), Scalar(1) / Scalar(a.numel()));
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a, Index axis) {
  const auto v = detail::axis_view(a.shape(), axis);
  axis = detail::normalize_axis(axis, a.rank());
  Shape shape = a.shape();
  shape.erase(shape.begin() + axis);
  ArrayX<Scalar> out(v.outer * v.inner);
  for (Index o = 0; o < v.outer; ++o) {
    Eigen::Map<const RowMatrix<Scalar>> blk(a.data().data() + o * v.len * v.inner, v.len, v.inner);
    out.segment(o * v.inner, v.inner) = blk.colwise().sum().transpose().array();
  }
  auto an = a.node();
  return detail::emit<Scalar>(std::move(shape), std::move(out), {&a},
                              [an, v](const detail::Node<Scalar>& o) {
                                ArrayX<Scalar> g(an->data.size());
                                for (Index b = 0; b < v.outer; ++b)
                                  for (Index l = 0; l < v.len; ++l)
                                    g.segment((b * v.len + l) * v.inner, v.inner) =
                                        o.grad.segment(b * v.inner, v.inner);
                                an->accumulate(g);
                              });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a, Index axis) {
  return scale(sum(a, axis), Scalar(1) / Scalar(a.dim(axis)));
}

// ---- softmax family --------------------------------------------------------

/// Log-softmax along `axis`, max-subtracted. This is the overflow-safe form;
/// softmax is derived from it.
template <typename Scalar>
Tensor<Scalar> log_softmax(const Tensor<Scalar>& a, Index axis) {
  const auto v = detail::axis_view(a.shape(), axis);
  ArrayX<Scalar> out(a.numel());
  for (Index o = 0; o < v.outer; ++o) {
    const Index off = o * v.len * v.inner;
    Eigen::Map<const RowMatrix<Scalar>> x(a.data().data() + off, v.len, v.inner);
    Eigen::Map<RowMatrix<Scalar>> y(out.data() + off, v.len, v.inner);
    const auto mx = x.colwise().maxCoeff().eval();
    y = x.rowwise() - mx;
    const auto lse = y.array().exp().colwise().sum().log().matrix().eval();
    y.rowwise() -= lse;
  }
  auto an = a.node();
  return detail::emit<Scalar>(a.shape(), std::move(out), {&a},
                              [an, v](const detail::Node<Scalar>& o) {
                                ArrayX<Scalar> g(o.grad.size());
                                for (Index b = 0; b < v.outer; ++b) {
                                  const Index off = b * v.len * v.inner;
                                  Eigen::Map<const RowMatrix<Scalar>> y(o.data.data() + off, v.len,
                                                                        v.inner);
                                  Eigen::Map<const RowMatrix<Scalar>> go(o.grad.data() + off,
                                                                         v.len, v.inner);
                                  Eigen::Map<RowMatrix<Scalar>> gi(g.data() + off, v.len, v.inner);
                                  const auto gsum = go.colwise().sum().eval();
                                  gi = go - (y.array().exp().rowwise() * gsum.array()).matrix();
                                }
                                an->accumulate(g);
                              });
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& a, Index axis) {
  const auto v = detail::axis_view(a.shape(), axis);
  ArrayX<Scalar> out(a.numel());
  for (Index o = 0; o < v.outer; ++o) {
    const Index off = o * v.len * v.inner;
    Eigen::Map<const RowMatrix<Scalar>> x(a.data().data() + off, v.len, v.inner);
    Eigen::Map<RowMatrix<Scalar>> y(out.data() + off, v.len, v.inner);
    const auto mx = x.colwise().maxCoeff().eval();
    y = (x.rowwise() - mx).array().exp().matrix();
    const auto total = y.colwise().sum().eval();
    y.array().rowwise() /= total.array();
  }
  auto an = a.node();
  return detail::emit<Scalar>(a.shape(), std::move(out), {&a},
                              [an, v](const detail::Node<Scalar>& o) {
                                ArrayX<Scalar> g(o.grad.size());
                                for (Index b = 0; b < v.outer; ++b) {
                                  const Index off = b * v.len * v.inner;
                                  Eigen::Map<const RowMatrix<Scalar>> y(o.data.data() + off, v.len,
                                                                        v.inner);
                                  Eigen::Map<const RowMatrix<Scalar>> go(o.grad.data() + off,
                                                                         v.len, v.inner);
                                  Eigen::Map<RowMatrix<Scalar>> gi(g.data() + off, v.len, v.inner);
                                  const auto dot = (go.array() * y.array()).colwise().sum().eval();
                                  gi = (y.array() * (go.array().rowwise() - dot)).matrix();
                                }
                                an->accumulate(g);
                              });
}

// ---- linear algebra ------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  VARDA_REQUIRE(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  ArrayX<Scalar> out(m * n);
  {
    Eigen::Map<const RowMatrix<Scalar>> A(a.data().data(), m, k);
    Eigen::Map<const RowMatrix<Scalar>> B(b.data().data(), k, n);
    Eigen::Map<RowMatrix<Scalar>> C(out.data(), m, n);
    C.noalias() = A * B;
  }
  auto an = a.node(), bn = b.node();
  return detail::emit<Scalar>(Shape{m, n}, std::move(out), {&a, &b},
                              [an, bn, m, k, n](const detail::Node<Scalar>& o) {
                                Eigen::Map<const RowMatrix<Scalar>> G(o.grad.data(), m, n);
                                if (an->requires_grad) {
                                  Eigen::Map<const RowMatrix<Scalar>> B(bn->data.data(), k, n);
                                  ArrayX<Scalar> ga(m * k);
                                  Eigen::Map<RowMatrix<Scalar>>(ga.data(), m, k).noalias() =
                                      G * B.transpose();
                                  an->accumulate(ga);
                                }
                                if (bn->requires_grad) {
                                  Eigen::Map<const RowMatrix<Scalar>> A(an->data.data(), m, k);
                                  ArrayX<Scalar> gb(k * n);
                                  Eigen::Map<RowMatrix<Scalar>>(gb.data(), k, n).noalias() =
                                      A.transpose() * G;
                                  bn->accumulate(gb);
                                }
                              });
}

// Index of the maximum along `axis`; ties go to the lowest index. Not differentiable.
template <typename Scalar>
std::vector<Index> argmax(const Tensor<Scalar>& a, Index axis) {
  const auto v = detail::axis_view(a.shape(), axis);
  std::vector<Index> out(static_cast<std::size_t>(v.outer * v.inner));
  for (Index o = 0; o < v.outer; ++o)
    for (Index i = 0; i < v.inner; ++i) {
      Index best = 0;
      Scalar best_v = a.data()[o * v.len * v.inner + i];
      for (Index l = 1; l < v.len; ++l) {
        const Scalar x = a.data()[(o * v.len + l) * v.inner + i];
        if (x > best_v) {
          best_v = x;
          best = l;
        }
      }
      out[std::size_t(o * v.inner + i)] = best;
    }
  return out;
}

}  // namespace varda
