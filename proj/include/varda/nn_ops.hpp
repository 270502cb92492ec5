#pragma once

#include "varda/ops.hpp"

// Image ops on B x C x H x W tensors.

namespace varda {

struct Conv2dGeometry {
  Index batch, in_ch, height, width;
  Index out_ch, kh, kw;
  Index stride, pad;
  Index out_h, out_w;

  Index patch() const { return in_ch * kh * kw; }
  Index positions() const { return out_h * out_w; }
};

namespace detail {

template <typename Scalar>
void im2col(const Scalar* x, const Conv2dGeometry& g, Scalar* cols) {
  const Index P = g.positions(), BP = g.batch * P;
  for (Index c = 0; c < g.in_ch; ++c)
    for (Index i = 0; i < g.kh; ++i)
      for (Index j = 0; j < g.kw; ++j) {
        Scalar* row = cols + ((c * g.kh + i) * g.kw + j) * BP;
        for (Index b = 0; b < g.batch; ++b) {
          const Scalar* plane = x + (b * g.in_ch + c) * g.height * g.width;
          Scalar* dst = row + b * P;
          for (Index oy = 0; oy < g.out_h; ++oy) {
            const Index y = oy * g.stride - g.pad + i;
            if (y < 0 || y >= g.height) {
              std::fill(dst + oy * g.out_w, dst + (oy + 1) * g.out_w, Scalar(0));
              continue;
            }
            for (Index ox = 0; ox < g.out_w; ++ox) {
              const Index xx = ox * g.stride - g.pad + j;
              dst[oy * g.out_w + ox] = (xx < 0 || xx >= g.width) ? Scalar(0) : plane[y * g.width + xx];
            }
          }
        }
      }
}

template <typename Scalar>
void col2im(const Scalar* cols, const Conv2dGeometry& g, Scalar* x) {
  const Index P = g.positions(), BP = g.batch * P;
  for (Index c = 0; c < g.in_ch; ++c)
    for (Index i = 0; i < g.kh; ++i)
      for (Index j = 0; j < g.kw; ++j) {
        const Scalar* row = cols + ((c * g.kh + i) * g.kw + j) * BP;
        for (Index b = 0; b < g.batch; ++b) {
          Scalar* plane = x + (b * g.in_ch + c) * g.height * g.width;
          const Scalar* src = row + b * P;
          for (Index oy = 0; oy < g.out_h; ++oy) {
            const Index y = oy * g.stride - g.pad + i;
            if (y < 0 || y >= g.height) continue;
            for (Index ox = 0; ox < g.out_w; ++ox) {
              const Index xx = ox * g.stride - g.pad + j;
              if (xx >= 0 && xx < g.width) plane[y * g.width + xx] += src[oy * g.out_w + ox];
            }
          }
        }
      }
}

}  // namespace detail

/// 2-D cross-correlation. x: B x C x H x W, w: F x C x kh x kw, bias: F or undefined.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias,
                      Index stride, Index pad) {
  VARDA_REQUIRE(x.rank() == 4 && w.rank() == 4, "conv2d: expects 4-D input and weight");
  VARDA_REQUIRE(stride >= 1 && pad >= 0, "conv2d: invalid stride/pad");
  VARDA_REQUIRE(x.dim(1) == w.dim(1), "conv2d: channel mismatch " + shape_str(x.shape()) +
                                          " vs " + shape_str(w.shape()));
  Conv2dGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3),
                   stride, pad, 0, 0};
  VARDA_REQUIRE(g.height + 2 * pad >= g.kh && g.width + 2 * pad >= g.kw,
                "conv2d: kernel larger than padded input");
  g.out_h = (g.height + 2 * pad - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * pad - g.kw) / stride + 1;
  const bool has_bias = bias.defined();
  if (has_bias) VARDA_REQUIRE(bias.numel() == g.out_ch, "conv2d: bias size mismatch");

  const Index P = g.positions(), BP = g.batch * P, K = g.patch();
  ArrayX<Scalar> cols(K * BP);
  detail::im2col(x.data().data(), g, cols.data());

  RowMatrix<Scalar> prod(g.out_ch, BP);
  {
    Eigen::Map<const RowMatrix<Scalar>> W(w.data().data(), g.out_ch, K);
    Eigen::Map<const RowMatrix<Scalar>> C(cols.data(), K, BP);
    prod.noalias() = W * C;
  }
  ArrayX<Scalar> out(g.batch * g.out_ch * P);
  for (Index b = 0; b < g.batch; ++b)
    for (Index f = 0; f < g.out_ch; ++f) {
      auto dst = out.segment((b * g.out_ch + f) * P, P);
      dst = prod.row(f).segment(b * P, P).transpose().array();
      if (has_bias) dst += bias.data()[f];
    }

  const Tensor<Scalar>& bref = has_bias ? bias : x;  // placeholder keeps the input list uniform
  auto xn = x.node(), wn = w.node();
  auto bn = has_bias ? bias.node() : nullptr;
  return detail::emit<Scalar>(
      Shape{g.batch, g.out_ch, g.out_h, g.out_w}, std::move(out), {&x, &w, &bref},
      [xn, wn, bn, g, cols = std::move(cols)](const detail::Node<Scalar>& o) {
        const Index P = g.positions(), BP = g.batch * P, K = g.patch();
        RowMatrix<Scalar> G(g.out_ch, BP);
        for (Index b = 0; b < g.batch; ++b)
          for (Index f = 0; f < g.out_ch; ++f)
            G.row(f).segment(b * P, P) =
                o.grad.segment((b * g.out_ch + f) * P, P).transpose().matrix();
        if (wn->requires_grad) {
          Eigen::Map<const RowMatrix<Scalar>> C(cols.data(), K, BP);
          ArrayX<Scalar> gw(g.out_ch * K);
          Eigen::Map<RowMatrix<Scalar>>(gw.data(), g.out_ch, K).noalias() = G * C.transpose();
          wn->accumulate(gw);
        }
        if (bn && bn->requires_grad) bn->accumulate(G.rowwise().sum().array());
        if (xn->requires_grad) {
          Eigen::Map<const RowMatrix<Scalar>> W(wn->data.data(), g.out_ch, K);
          RowMatrix<Scalar> gcols(K, BP);
          gcols.noalias() = W.transpose() * G;
          ArrayX<Scalar> gx = ArrayX<Scalar>::Zero(xn->data.size());
          detail::col2im(gcols.data(), g, gx.data());
          xn->accumulate(gx);
        }
      });
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, Index stride, Index pad) {
  return conv2d(x, w, Tensor<Scalar>{}, stride, pad);
}

template <typename Scalar>
Tensor<Scalar> upsample_nearest(const Tensor<Scalar>& x, Index factor) {
  VARDA_REQUIRE(x.rank() == 4 && factor >= 1, "upsample_nearest: expects 4-D input, factor >= 1");
  const Index planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index Ho = H * factor, Wo = W * factor;
  ArrayX<Scalar> out(planes * Ho * Wo);
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < Ho; ++y)
      for (Index xx = 0; xx < Wo; ++xx)
        out[(p * Ho + y) * Wo + xx] = x.data()[(p * H + y / factor) * W + xx / factor];
  auto xn = x.node();
  return detail::emit<Scalar>(Shape{x.dim(0), x.dim(1), Ho, Wo}, std::move(out), {&x},
                              [xn, planes, H, W, factor](const detail::Node<Scalar>& o) {
                                const Index Ho = H * factor, Wo = W * factor;
                                ArrayX<Scalar> g = ArrayX<Scalar>::Zero(xn->data.size());
                                for (Index p = 0; p < planes; ++p)
                                  for (Index y = 0; y < Ho; ++y)
                                    for (Index xx = 0; xx < Wo; ++xx)
                                      g[(p * H + y / factor) * W + xx / factor] +=
                                          o.grad[(p * Ho + y) * Wo + xx];
                                xn->accumulate(g);
                              });
}

template <typename Scalar>
Tensor<Scalar> avg_pool(const Tensor<Scalar>& x, Index factor) {
  VARDA_REQUIRE(x.rank() == 4 && factor >= 1, "avg_pool: expects 4-D input, factor >= 1");
  const Index planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  VARDA_REQUIRE(H % factor == 0 && W % factor == 0, "avg_pool: extent not divisible by factor");
  const Index Ho = H / factor, Wo = W / factor;
  const Scalar inv = Scalar(1) / Scalar(factor * factor);
  ArrayX<Scalar> out = ArrayX<Scalar>::Zero(planes * Ho * Wo);
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < H; ++y)
      for (Index xx = 0; xx < W; ++xx)
        out[(p * Ho + y / factor) * Wo + xx / factor] += x.data()[(p * H + y) * W + xx] * inv;
  auto xn = x.node();
  return detail::emit<Scalar>(Shape{x.dim(0), x.dim(1), Ho, Wo}, std::move(out), {&x},
                              [xn, planes, H, W, factor, inv](const detail::Node<Scalar>& o) {
                                const Index Ho = H / factor, Wo = W / factor;
                                ArrayX<Scalar> g(xn->data.size());
                                for (Index p = 0; p < planes; ++p)
                                  for (Index y = 0; y < H; ++y)
                                    for (Index xx = 0; xx < W; ++xx)
                                      g[(p * H + y) * W + xx] =
                                          o.grad[(p * Ho + y / factor) * Wo + xx / factor] * inv;
                                xn->accumulate(g);
                              });
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, Index axis) {
  VARDA_REQUIRE(!parts.empty(), "concat: no inputs");
  const Index rank = parts.front().rank();
  axis = detail::normalize_axis(axis, rank);
  Shape shape = parts.front().shape();
  shape[std::size_t(axis)] = 0;
  for (const auto& p : parts) {
    VARDA_REQUIRE(p.rank() == rank, "concat: rank mismatch");
    for (Index i = 0; i < rank; ++i)
      if (i != axis)
        VARDA_REQUIRE(p.dim(i) == parts.front().dim(i),
                      "concat: extent mismatch " + shape_str(p.shape()));
    shape[std::size_t(axis)] += p.dim(axis);
  }
  const auto v = detail::axis_view(shape, axis);
  ArrayX<Scalar> out(shape_numel(shape));
  std::vector<Index> offsets;
  Index start = 0;
  for (const auto& p : parts) {
    const Index len = p.dim(axis);
    offsets.push_back(start);
    for (Index o = 0; o < v.outer; ++o)
      out.segment((o * v.len + start) * v.inner, len * v.inner) =
          p.data().segment(o * len * v.inner, len * v.inner);
    start += len;
  }

  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  Tensor<Scalar> result(shape, std::move(out));
  if (any && GradMode::enabled()) {
    std::vector<std::shared_ptr<detail::Node<Scalar>>> nodes;
    std::vector<Index> lens;
    for (const auto& p : parts) {
      nodes.push_back(p.node());
      lens.push_back(p.dim(axis));
    }
    result.node()->requires_grad = true;
    result.node()->leaf = false;
    Tape<Scalar>::active().record(result, [nodes, lens, offsets, v](const detail::Node<Scalar>& o) {
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (!nodes[k]->requires_grad) continue;
        const Index len = lens[k];
        ArrayX<Scalar> g(v.outer * len * v.inner);
        for (Index b = 0; b < v.outer; ++b)
          g.segment(b * len * v.inner, len * v.inner) =
              o.grad.segment((b * v.len + offsets[k]) * v.inner, len * v.inner);
        nodes[k]->accumulate(g);
      }
    });
  }
  return result;
}

}  // namespace varda
