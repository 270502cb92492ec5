#pragma once

#include <random>

#include "varda/gaussian.hpp"
#include "varda/verify/oracles.hpp"

namespace varda::oracle {

inline DiagGaussianBatch<double> to_batch(const Mixture& parts) {
  const Index m = Index(parts.size()), n = Index(parts.front().dim());
  std::vector<double> u, lv;
  for (const auto& g : parts)
    for (Index j = 0; j < n; ++j) {
      u.push_back(g.mean[std::size_t(j)]);
      lv.push_back(std::log(g.var[std::size_t(j)]));
    }
  return {Tensor<double>::from({m, n}, u), Tensor<double>::from({m, n}, lv)};
}

inline DiagGaussianBatch<double> to_batch(const Gauss& g) { return to_batch(Mixture{g}); }

/// Means in [-mean_range, mean_range], variances log-uniform in [var_lo, var_hi].
inline Gauss random_gauss(std::mt19937_64& rng, std::size_t n, double mean_range = 2.0,
                          double var_lo = 0.25, double var_hi = 3.0) {
  std::uniform_real_distribution<double> um(-mean_range, mean_range);
  std::uniform_real_distribution<double> ul(std::log(var_lo), std::log(var_hi));
  Gauss g;
  for (std::size_t j = 0; j < n; ++j) {
    g.mean.push_back(um(rng));
    g.var.push_back(std::exp(ul(rng)));
  }
  return g;
}

inline Mixture random_mixture(std::mt19937_64& rng, std::size_t m, std::size_t n) {
  Mixture out;
  for (std::size_t i = 0; i < m; ++i) out.push_back(random_gauss(rng, n));
  return out;
}

}  // namespace varda::oracle
