#pragma once

// Independent reference computations used by the test and verification
// suites. Nothing here touches Tensor or the autodiff tape.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "varda/metrics.hpp"

namespace varda::oracle {

/// Single diagonal Gaussian: per-coordinate means and variances.
struct Gauss {
  std::vector<double> mean;
  std::vector<double> var;
  std::size_t dim() const { return mean.size(); }
};

using Mixture = std::vector<Gauss>;  // equally weighted components

double normal_pdf(double z, double mean, double var);

/// Composite Simpson rule on [a, b] with `nodes` (odd, >= 3) equispaced points.
double simpson(const std::function<double(double)>& f, double a, double b, int nodes);
std::vector<double> simpson_weights(double a, double b, int nodes);

/// Integration window [min mean - 10 sd_max, max mean + 10 sd_max] over the
/// given coordinate of every component.
std::pair<double, double> window(const Mixture& parts, std::size_t coord);

/// Quadrature of the product of two densities, n = 1 or 2 (full tensor grid).
double kernel_quadrature(const Gauss& a, const Gauss& b, int nodes = 4001);

/// Quadrature of the squared difference of two mixture densities, n = 1 or 2.
double mixture_l2_quadrature(const Mixture& s, const Mixture& t, int nodes = 4001);

/// Sum over coordinates of the 1-D quadratures of the marginal differences.
double sliced_l2_quadrature(const Mixture& s, const Mixture& t, int nodes = 4001);

/// Monte Carlo estimate of KL(q || N(0, I)) = E_q[log q(z) - log p(z)].
double kl_monte_carlo(const Gauss& q, std::uint64_t seed, int samples = 1000000);

/// Direct product-of-factors kernel evaluated in the given precision.
template <typename Scalar>
Scalar naive_product_kernel(const Gauss& a, const Gauss& b);

/// Dice by explicit set intersection of pixel coordinates.
double dice_brute(const Mask& pred, const Mask& truth);

/// ASSD by all-pairs boundary distances; nullopt when either mask is empty.
std::optional<double> assd_brute(const Mask& pred, const Mask& truth);

}  // namespace varda::oracle
