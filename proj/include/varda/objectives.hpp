#pragma once

#include <cstdio>
#include <string>

#include "varda/networks.hpp"

namespace varda {

struct LossWeights {
  double alpha1 = 1.0;   // source ELBO
  double alpha2 = 1.0;   // target ELBO
  double alpha3 = 1e-2;  // discrepancy
};

enum class DiscMode { sliced, full };

const char* disc_mode_name(DiscMode m);
DiscMode parse_disc_mode(const std::string& s);

struct LossBreakdown {
  double seg_loss = 0.0;
  double recon_loss_S = 0.0;
  double kl_S = 0.0;
  double recon_loss_T = 0.0;
  double cond_entropy_T = 0.0;
  double kl_T = 0.0;
  double discrepancy = 0.0;
  double total = 0.0;

  double remainder_S() const { return recon_loss_S + kl_S; }
  double source_loss() const { return seg_loss + recon_loss_S + kl_S; }
  double target_loss() const { return recon_loss_T + cond_entropy_T + kl_T; }
  /// Sets `total` from the parts.
  void recompute_total(const LossWeights& w);
};

template <typename Scalar>
struct SourceTerms {
  Tensor<Scalar> seg, recon, kl;  // scalars, each already a batch mean
  DiagGaussianBatch<Scalar> posterior;
};

template <typename Scalar>
struct TargetTerms {
  Tensor<Scalar> recon, entropy, kl;
  DiagGaussianBatch<Scalar> posterior;
};

template <typename Scalar>
struct TotalLoss {
  Tensor<Scalar> total;  // differentiable
  LossBreakdown parts;   // double bookkeeping, total recomputed from the parts
};

namespace detail {

// B x rest -> (B*L) x rest by repeating each sample L times.
template <typename Scalar>
Tensor<Scalar> repeat_samples(const Tensor<Scalar>& x, Index l) {
  if (l == 1) return x;
  const Index b = x.dim(0), rest = x.numel() / b;
  Shape out = x.shape();
  out[0] = b * l;
  return reshape(expand(reshape(x, {b, 1, rest}), {b, l, rest}), out);
}

template <typename Scalar>
void check_one_hot(const Tensor<Scalar>& y, int classes) {
  VARDA_REQUIRE(y.rank() == 4 && y.dim(1) == classes, "label must be B x K x H x W one-hot");
  const Index b = y.dim(0), hw = y.dim(2) * y.dim(3);
  const auto& d = y.data();
  for (Index i = 0; i < b; ++i)
    for (Index p = 0; p < hw; ++p) {
      Scalar total = 0;
      for (Index k = 0; k < classes; ++k) {
        const Scalar v = d[(i * classes + k) * hw + p];
        VARDA_REQUIRE(v == Scalar(0) || v == Scalar(1), "label is not one-hot");
        total += v;
      }
      VARDA_REQUIRE(total == Scalar(1), "label is not one-hot");
    }
}

template <typename Scalar>
Tensor<Scalar> mse(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return mean(square(a - b));
}

// Batch mean of KL(q || N(0, I)) divided by the latent dimension.
template <typename Scalar>
Tensor<Scalar> kl_per_coordinate(const DiagGaussianBatch<Scalar>& g) {
  return scale(mean(kl_to_standard_normal(g)), Scalar(1) / Scalar(g.dim()));
}

// Flattened latent draws: eps B x L x n -> z (B*L) x n.
template <typename Scalar>
Tensor<Scalar> draw(const DiagGaussianBatch<Scalar>& g, const Tensor<Scalar>& eps) {
  const Tensor<Scalar> z = reparameterize(g, eps);
  return reshape(z, {z.dim(0) * z.dim(1), z.dim(2)});
}

}  // namespace detail

/// Negative source ELBO estimate. Every term is an element mean: the KL to
/// N(0, I) per latent coordinate, the MSE of the reconstruction and the
/// cross-entropy of the prediction per pixel; all averaged over the batch and
/// the L noise draws.
template <typename Scalar>
SourceTerms<Scalar> source_elbo_loss(const VardaNet<Scalar>& net, const Tensor<Scalar>& x,
                                     const Tensor<Scalar>& y, const Tensor<Scalar>& eps) {
  detail::check_one_hot(y, net.config().classes);
  VARDA_REQUIRE(y.dim(0) == x.dim(0), "source batch: image/label count mismatch");
  auto g = net.encode(Domain::source, x);
  const Index l = eps.dim(1);
  const Tensor<Scalar> z = detail::draw(g, eps);
  const Tensor<Scalar> yl = detail::repeat_samples(y, l);
  const Tensor<Scalar> logp = log_softmax(net.segment_logits(z), 1);
  const Scalar pixels = Scalar(z.dim(0) * y.dim(2) * y.dim(3));
  SourceTerms<Scalar> t{scale(sum(yl * logp), Scalar(-1) / pixels), Tensor<Scalar>::scalar(0),
                        detail::kl_per_coordinate(g), g};
  if (net.has_decoder()) t.recon = detail::mse(net.decode(Domain::source, z, yl), detail::repeat_samples(x, l));
  return t;
}

/// Negative target ELBO estimate. The prediction term is the conditional
/// entropy of the segmentor output, and the decoder is conditioned on the
/// soft prediction, so gradients flow through both.
template <typename Scalar>
TargetTerms<Scalar> target_elbo_loss(const VardaNet<Scalar>& net, const Tensor<Scalar>& x,
                                     const Tensor<Scalar>& eps) {
  auto g = net.encode(Domain::target, x);
  const Index l = eps.dim(1);
  const Tensor<Scalar> z = detail::draw(g, eps);
  const Tensor<Scalar> logp = log_softmax(net.segment_logits(z), 1);
  const Tensor<Scalar> p = exp(logp);
  const Scalar pixels = Scalar(z.dim(0) * x.dim(2) * x.dim(3));
  TargetTerms<Scalar> t{Tensor<Scalar>::scalar(0), scale(sum(p * logp), Scalar(-1) / pixels),
                        detail::kl_per_coordinate(g), g};
  if (net.has_decoder()) t.recon = detail::mse(net.decode(Domain::target, z, p), detail::repeat_samples(x, l));
  return t;
}

template <typename Scalar>
Tensor<Scalar> discrepancy_loss(const DiagGaussianBatch<Scalar>& s, const DiagGaussianBatch<Scalar>& t,
                                DiscMode mode = DiscMode::sliced) {
  return mode == DiscMode::sliced ? sliced_l2_distance(s, t) : mixture_l2_distance(s, t);
}

/// alpha1 * source ELBO loss + alpha2 * target ELBO loss + alpha3 * discrepancy.
/// Terms whose weight is zero (and which nothing else needs) are skipped and
/// reported as 0.
template <typename Scalar>
TotalLoss<Scalar> total_loss(const VardaNet<Scalar>& net, const Tensor<Scalar>& xs, const Tensor<Scalar>& ys,
                             const Tensor<Scalar>& xt, const LossWeights& w, const Tensor<Scalar>& eps_s,
                             const Tensor<Scalar>& eps_t, DiscMode mode = DiscMode::sliced) {
  VARDA_REQUIRE(w.alpha1 >= 0 && w.alpha2 >= 0 && w.alpha3 >= 0, "loss weights must be nonnegative");
  VARDA_REQUIRE(xs.dim(0) == xt.dim(0), "source and target batches must have equal size");
  const auto src = source_elbo_loss(net, xs, ys, eps_s);
  TotalLoss<Scalar> out;
  LossBreakdown& b = out.parts;
  b.seg_loss = double(src.seg.item());
  b.recon_loss_S = double(src.recon.item());
  b.kl_S = double(src.kl.item());
  out.total = scale(src.seg + src.recon + src.kl, Scalar(w.alpha1));
  if (w.alpha2 > 0) {
    const auto tgt = target_elbo_loss(net, xt, eps_t);
    b.recon_loss_T = double(tgt.recon.item());
    b.cond_entropy_T = double(tgt.entropy.item());
    b.kl_T = double(tgt.kl.item());
    out.total = out.total + scale(tgt.recon + tgt.entropy + tgt.kl, Scalar(w.alpha2));
    if (w.alpha3 > 0) {
      const Tensor<Scalar> d = discrepancy_loss(src.posterior, tgt.posterior, mode);
      b.discrepancy = double(d.item());
      out.total = out.total + scale(d, Scalar(w.alpha3));
    }
  } else if (w.alpha3 > 0) {
    const Tensor<Scalar> d = discrepancy_loss(src.posterior, net.encode(Domain::target, xt), mode);
    b.discrepancy = double(d.item());
    out.total = out.total + scale(d, Scalar(w.alpha3));
  }
  b.recompute_total(w);
  return out;
}

/// Append-only per-iteration loss log.
///   # manifest <id>
///   iter,seg_loss,remainder_S,target_loss,discrepancy,total
class LossCsv {
 public:
  LossCsv(const std::string& path, const std::string& manifest_id, bool append = false);
  ~LossCsv();
  LossCsv(const LossCsv&) = delete;
  LossCsv& operator=(const LossCsv&) = delete;

  void write(long iter, const LossBreakdown& b);
  void flush();

 private:
  std::FILE* f_ = nullptr;
};

std::string loss_csv_line(long iter, const LossBreakdown& b);

}  // namespace varda
