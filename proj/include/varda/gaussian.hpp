#pragma once

#include <numbers>

#include "varda/ops.hpp"

namespace varda {

/// M diagonal Gaussians over an n-dimensional latent space.
///
/// Stored as means and log-variances (both M x n) so variances stay positive
/// under any parameter update.
template <typename Scalar>
class DiagGaussianBatch {
 public:
  DiagGaussianBatch(Tensor<Scalar> means, Tensor<Scalar> log_variances)
      : means_(std::move(means)), log_variances_(std::move(log_variances)) {
    VARDA_REQUIRE(means_.rank() == 2, "DiagGaussianBatch: means must be M x n, got " +
                                          shape_str(means_.shape()));
    VARDA_REQUIRE(means_.shape() == log_variances_.shape(),
                  "DiagGaussianBatch: means/log-variance shape mismatch");
  }

  static DiagGaussianBatch from_variances(Tensor<Scalar> means, const Tensor<Scalar>& variances) {
    return DiagGaussianBatch(std::move(means), log(variances));
  }

  const Tensor<Scalar>& means() const { return means_; }
  const Tensor<Scalar>& log_variances() const { return log_variances_; }
  Tensor<Scalar> variances() const { return exp(log_variances_); }

  Index size() const { return means_.dim(0); }
  Index dim() const { return means_.dim(1); }

 private:
  Tensor<Scalar> means_;
  Tensor<Scalar> log_variances_;
};

/// Per-sample KL(N(u, diag(lambda)) || N(0, I)) = 1/2 sum_j (lambda + u^2 - log lambda - 1).
template <typename Scalar>
Tensor<Scalar> kl_to_standard_normal(const DiagGaussianBatch<Scalar>& g) {
  const auto& lv = g.log_variances();
  return scale(sum(exp(lv) + square(g.means()) - lv - Scalar(1), 1), Scalar(0.5));
}

namespace detail {

// Pairwise per-coordinate pieces for components i of `a` and j of `b`, shaped
// M x P x n: the scaled squared mean gap (u_i - u_j)^2 / s and log s, with
// s = lambda_i + lambda_j.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> pairwise_terms(const DiagGaussianBatch<Scalar>& a,
                                                         const DiagGaussianBatch<Scalar>& b) {
  VARDA_REQUIRE(a.dim() == b.dim(), "Gaussian dimension mismatch: " + std::to_string(a.dim()) +
                                        " vs " + std::to_string(b.dim()));
  const Index m = a.size(), p = b.size(), n = a.dim();
  const Shape grid{m, p, n};
  auto rows = [&](const Tensor<Scalar>& t) { return expand(reshape(t, {m, 1, n}), grid); };
  auto cols = [&](const Tensor<Scalar>& t) { return expand(reshape(t, {1, p, n}), grid); };
  const Tensor<Scalar> gap = rows(a.means()) - cols(b.means());
  const Tensor<Scalar> s = rows(a.variances()) + cols(b.variances());
  return {square(gap) / s, log(s)};
}

template <typename Scalar>
inline Scalar log_two_pi() {
  return Scalar(std::numbers::ln2_v<double> + std::log(std::numbers::pi_v<double>));
}

// Full-dimensional log kernel matrix, M x P.
template <typename Scalar>
Tensor<Scalar> log_kernel_matrix(const DiagGaussianBatch<Scalar>& a,
                                 const DiagGaussianBatch<Scalar>& b) {
  auto [scaled_gap, log_s] = pairwise_terms(a, b);
  const Scalar norm = Scalar(0.5) * Scalar(a.dim()) * log_two_pi<Scalar>();
  return scale(sum(scaled_gap + log_s, 2), Scalar(-0.5)) - norm;
}

// Per-coordinate 1-D log kernels, M x P x n.
template <typename Scalar>
Tensor<Scalar> log_marginal_kernels(const DiagGaussianBatch<Scalar>& a,
                                    const DiagGaussianBatch<Scalar>& b) {
  auto [scaled_gap, log_s] = pairwise_terms(a, b);
  return scale(scaled_gap + log_s, Scalar(-0.5)) - Scalar(0.5) * log_two_pi<Scalar>();
}

// (1/M^2) [sum k(S,S) + sum k(T,T) - 2 sum k(S,T)]. The cross term averages
// the (S,T) and (T,S) evaluations so swapping the arguments reproduces
// exactly the same floating-point operations.
template <typename Scalar, typename LogKernel>
Tensor<Scalar> l2_from_kernels(const DiagGaussianBatch<Scalar>& s, const DiagGaussianBatch<Scalar>& t,
                               LogKernel log_kernel) {
  VARDA_REQUIRE(s.size() == t.size(), "mixture distance needs equal batch sizes, got " +
                                          std::to_string(s.size()) + " and " +
                                          std::to_string(t.size()));
  VARDA_REQUIRE(s.dim() == t.dim(), "mixture distance needs equal latent dimension");
  const Tensor<Scalar> self_s = sum(exp(log_kernel(s, s)));
  const Tensor<Scalar> self_t = sum(exp(log_kernel(t, t)));
  const Tensor<Scalar> cross = sum(exp(log_kernel(s, t))) + sum(exp(log_kernel(t, s)));
  const Scalar inv_m2 = Scalar(1) / Scalar(s.size() * s.size());
  return scale(self_s + self_t - cross, inv_m2);
}

}  // namespace detail

/// log of the integral of N(z; a) N(z; b) over R^n, for single Gaussians (M = 1).
template <typename Scalar>
Tensor<Scalar> log_pair_kernel(const DiagGaussianBatch<Scalar>& a, const DiagGaussianBatch<Scalar>& b) {
  VARDA_REQUIRE(a.size() == 1 && b.size() == 1, "pair_kernel takes single Gaussians");
  return reshape(detail::log_kernel_matrix(a, b), Shape{});
}

/// Integral of the product of two diagonal Gaussian densities, evaluated in
/// log space and exponentiated once, so large n does not lose the value to
/// a long chain of products.
template <typename Scalar>
Tensor<Scalar> pair_kernel(const DiagGaussianBatch<Scalar>& a, const DiagGaussianBatch<Scalar>& b) {
  return exp(log_pair_kernel(a, b));
}

/// Squared L2 distance between the two equally weighted mixtures
/// (1/M) sum_i N(u_S^i, diag(lambda_S^i)) and its target counterpart.
template <typename Scalar>
Tensor<Scalar> mixture_l2_distance(const DiagGaussianBatch<Scalar>& s,
                                   const DiagGaussianBatch<Scalar>& t) {
  return detail::l2_from_kernels(s, t, [](const auto& a, const auto& b) {
    return detail::log_kernel_matrix(a, b);
  });
}

/// Sum over latent coordinates of the 1-D L2 distances between the mixtures'
/// marginals. This is the regularizer used in training.
template <typename Scalar>
Tensor<Scalar> sliced_l2_distance(const DiagGaussianBatch<Scalar>& s,
                                  const DiagGaussianBatch<Scalar>& t) {
  return detail::l2_from_kernels(s, t, [](const auto& a, const auto& b) {
    return detail::log_marginal_kernels(a, b);
  });
}

}  // namespace varda
