#include "varda/verify/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

namespace varda::oracle {

double normal_pdf(double z, double mean, double var) {
  const double d = z - mean;
  return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

std::vector<double> simpson_weights(double a, double b, int nodes) {
  if (nodes < 3 || nodes % 2 == 0) throw std::invalid_argument("simpson: nodes must be odd and >= 3");
  const double h = (b - a) / double(nodes - 1);
  std::vector<double> w(static_cast<std::size_t>(nodes));
  for (int i = 0; i < nodes; ++i) w[std::size_t(i)] = (i == 0 || i == nodes - 1) ? 1.0 : (i % 2 ? 4.0 : 2.0);
  for (double& x : w) x *= h / 3.0;
  return w;
}

double simpson(const std::function<double(double)>& f, double a, double b, int nodes) {
  const auto w = simpson_weights(a, b, nodes);
  const double h = (b - a) / double(nodes - 1);
  double total = 0.0;
  for (int i = 0; i < nodes; ++i) total += w[std::size_t(i)] * f(a + h * double(i));
  return total;
}

std::pair<double, double> window(const Mixture& parts, std::size_t coord) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo, sd = 0.0;
  for (const auto& g : parts) {
    lo = std::min(lo, g.mean[coord]);
    hi = std::max(hi, g.mean[coord]);
    sd = std::max(sd, std::sqrt(g.var[coord]));
  }
  return {lo - 10.0 * sd, hi + 10.0 * sd};
}

namespace {

struct Axis {
  std::vector<double> z, w;
};

Axis axis(const Mixture& parts, std::size_t coord, int nodes) {
  auto [a, b] = window(parts, coord);
  Axis ax{std::vector<double>(std::size_t(nodes)), simpson_weights(a, b, nodes)};
  const double h = (b - a) / double(nodes - 1);
  for (int i = 0; i < nodes; ++i) ax.z[std::size_t(i)] = a + h * double(i);
  return ax;
}

// density table of every component along one axis: [component][node]
std::vector<std::vector<double>> tables(const Mixture& parts, std::size_t coord, const Axis& ax) {
  std::vector<std::vector<double>> out;
  for (const auto& g : parts) {
    std::vector<double> row(ax.z.size());
    for (std::size_t i = 0; i < ax.z.size(); ++i) row[i] = normal_pdf(ax.z[i], g.mean[coord], g.var[coord]);
    out.push_back(std::move(row));
  }
  return out;
}

void check_dims(const Mixture& m) {
  if (m.empty()) throw std::invalid_argument("oracle: empty mixture");
  const std::size_t n = m.front().dim();
  if (n < 1 || n > 2) throw std::invalid_argument("oracle: quadrature supports n = 1 or 2");
  for (const auto& g : m)
    if (g.dim() != n || g.var.size() != n) throw std::invalid_argument("oracle: dimension mismatch");
}

// Integral of f(z) over the tensor grid, where f is given per grid point
// through the component density tables.
template <typename F>
double grid_integral(const Mixture& all, int nodes, F&& f) {
  const std::size_t n = all.front().dim();
  std::vector<Axis> axes;
  std::vector<std::vector<std::vector<double>>> tab;
  for (std::size_t c = 0; c < n; ++c) {
    axes.push_back(axis(all, c, nodes));
    tab.push_back(tables(all, c, axes.back()));
  }
  const std::size_t k = all.size();
  std::vector<double> dens(k);
  double total = 0.0;
  if (n == 1) {
    for (std::size_t i = 0; i < axes[0].z.size(); ++i) {
      for (std::size_t j = 0; j < k; ++j) dens[j] = tab[0][j][i];
      total += axes[0].w[i] * f(dens);
    }
    return total;
  }
  for (std::size_t i = 0; i < axes[0].z.size(); ++i) {
    double row = 0.0;
    for (std::size_t i2 = 0; i2 < axes[1].z.size(); ++i2) {
      for (std::size_t j = 0; j < k; ++j) dens[j] = tab[0][j][i] * tab[1][j][i2];
      row += axes[1].w[i2] * f(dens);
    }
    total += axes[0].w[i] * row;
  }
  return total;
}

}  // namespace

double kernel_quadrature(const Gauss& a, const Gauss& b, int nodes) {
  const Mixture both{a, b};
  check_dims(both);
  return grid_integral(both, nodes, [](const std::vector<double>& d) { return d[0] * d[1]; });
}

double mixture_l2_quadrature(const Mixture& s, const Mixture& t, int nodes) {
  if (s.size() != t.size()) throw std::invalid_argument("oracle: mixtures differ in size");
  Mixture all = s;
  all.insert(all.end(), t.begin(), t.end());
  check_dims(all);
  const std::size_t m = s.size();
  return grid_integral(all, nodes, [m](const std::vector<double>& d) {
    double qs = 0.0, qt = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      qs += d[j];
      qt += d[m + j];
    }
    const double diff = (qs - qt) / double(m);
    return diff * diff;
  });
}

double sliced_l2_quadrature(const Mixture& s, const Mixture& t, int nodes) {
  double total = 0.0;
  const std::size_t n = s.front().dim();
  for (std::size_t c = 0; c < n; ++c) {
    Mixture ms, mt;
    for (const auto& g : s) ms.push_back({{g.mean[c]}, {g.var[c]}});
    for (const auto& g : t) mt.push_back({{g.mean[c]}, {g.var[c]}});
    total += mixture_l2_quadrature(ms, mt, nodes);
  }
  return total;
}

double kl_monte_carlo(const Gauss& q, std::uint64_t seed, int samples) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> eps(0.0, 1.0);
  double total = 0.0;
  for (int s = 0; s < samples; ++s) {
    double log_ratio = 0.0;
    for (std::size_t j = 0; j < q.dim(); ++j) {
      const double e = eps(rng);
      const double z = q.mean[j] + std::sqrt(q.var[j]) * e;
      log_ratio += std::log(normal_pdf(z, q.mean[j], q.var[j])) - std::log(normal_pdf(z, 0.0, 1.0));
    }
    total += log_ratio;
  }
  return total / double(samples);
}

template <typename Scalar>
Scalar naive_product_kernel(const Gauss& a, const Gauss& b) {
  const Scalar two_pi = Scalar(2.0 * std::numbers::pi);
  Scalar k = Scalar(1);
  for (std::size_t l = 0; l < a.dim(); ++l) {
    const Scalar s = Scalar(a.var[l]) + Scalar(b.var[l]);
    const Scalar d = Scalar(a.mean[l]) - Scalar(b.mean[l]);
    k *= std::exp(Scalar(-0.5) * d * d / s) / std::sqrt(two_pi * s);
  }
  return k;
}

template float naive_product_kernel<float>(const Gauss&, const Gauss&);
template double naive_product_kernel<double>(const Gauss&, const Gauss&);
template long double naive_product_kernel<long double>(const Gauss&, const Gauss&);

namespace {

using Pixel = std::pair<Index, Index>;

std::set<Pixel> pixel_set(const Mask& m) {
  std::set<Pixel> s;
  for (Index y = 0; y < m.height; ++y)
    for (Index x = 0; x < m.width; ++x)
      if (m.on[std::size_t(y * m.width + x)]) s.insert({y, x});
  return s;
}

std::set<Pixel> boundary_set(const Mask& m) {
  const auto in = pixel_set(m);
  std::set<Pixel> out;
  for (const auto& [y, x] : in) {
    const Pixel nb[4] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
    for (const auto& [ny, nx] : nb) {
      const bool outside = ny < 0 || nx < 0 || ny >= m.height || nx >= m.width;
      if (outside || !in.count({ny, nx})) {
        out.insert({y, x});
        break;
      }
    }
  }
  return out;
}

}  // namespace

double dice_brute(const Mask& pred, const Mask& truth) {
  const auto p = pixel_set(pred), t = pixel_set(truth);
  if (p.empty() && t.empty()) return 1.0;
  std::vector<Pixel> both;
  std::set_intersection(p.begin(), p.end(), t.begin(), t.end(), std::back_inserter(both));
  return 2.0 * double(both.size()) / double(p.size() + t.size());
}

std::optional<double> assd_brute(const Mask& pred, const Mask& truth) {
  if (pixel_set(pred).empty() || pixel_set(truth).empty()) return std::nullopt;
  const auto bp = boundary_set(pred), bt = boundary_set(truth);
  auto nearest = [](const Pixel& a, const std::set<Pixel>& other) {
    Index best = std::numeric_limits<Index>::max();
    for (const auto& b : other) {
      const Index dy = a.first - b.first, dx = a.second - b.second;
      best = std::min(best, dy * dy + dx * dx);
    }
    return std::sqrt(double(best));
  };
  double from_pred = 0.0, from_truth = 0.0;
  for (const auto& a : bp) from_pred += nearest(a, bt);
  for (const auto& b : bt) from_truth += nearest(b, bp);
  return (from_pred + from_truth) / double(bp.size() + bt.size());
}

}  // namespace varda::oracle
