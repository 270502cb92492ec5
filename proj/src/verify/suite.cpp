#include "varda/verify/suite.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "json.hpp"
#include "varda/dataset_io.hpp"
#include "varda/grad_check.hpp"
#include "varda/objectives.hpp"
#include "varda/trainer.hpp"
#include "varda/verify/bridge.hpp"

namespace varda::verify {

namespace {

using B = DiagGaussianBatch<double>;
using T = Tensor<double>;
using oracle::Gauss;
using oracle::Mixture;
using oracle::to_batch;

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

Check finish(Check c, const Timer& t) {
  c.seconds = t.seconds();
  return c;
}

// The exponent of the Gaussian product integral with its sign flipped:
// exp(+gap^2 / 2s) instead of exp(-gap^2 / 2s).
template <typename Scalar>
Tensor<Scalar> flipped_log_kernel_matrix(const DiagGaussianBatch<Scalar>& a, const DiagGaussianBatch<Scalar>& b) {
  auto [scaled_gap, log_s] = detail::pairwise_terms(a, b);
  const Scalar norm = Scalar(0.5) * Scalar(a.dim()) * detail::log_two_pi<Scalar>();
  return scale(sum(log_s - scaled_gap, 2), Scalar(-0.5)) - norm;
}

template <typename Scalar>
Tensor<Scalar> flipped_log_marginal_kernels(const DiagGaussianBatch<Scalar>& a,
                                            const DiagGaussianBatch<Scalar>& b) {
  auto [scaled_gap, log_s] = detail::pairwise_terms(a, b);
  return scale(log_s - scaled_gap, Scalar(-0.5)) - Scalar(0.5) * detail::log_two_pi<Scalar>();
}

double kernel_under_test(const Gauss& a, const Gauss& b, bool mutate) {
  if (!mutate) return pair_kernel(to_batch(a), to_batch(b)).item();
  return std::exp(flipped_log_kernel_matrix(to_batch(a), to_batch(b)).item());
}

double full_under_test(const Mixture& s, const Mixture& t, bool mutate) {
  if (!mutate) return mixture_l2_distance(to_batch(s), to_batch(t)).item();
  return detail::l2_from_kernels(to_batch(s), to_batch(t),
                                 [](const B& a, const B& b) { return flipped_log_kernel_matrix(a, b); })
      .item();
}

double sliced_under_test(const Mixture& s, const Mixture& t, bool mutate) {
  if (!mutate) return sliced_l2_distance(to_batch(s), to_batch(t)).item();
  return detail::l2_from_kernels(to_batch(s), to_batch(t),
                                 [](const B& a, const B& b) { return flipped_log_marginal_kernels(a, b); })
      .item();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int quad_nodes(std::size_t n) { return n == 1 ? 4001 : 2001; }

Mask random_mask(std::mt19937_64& rng, Index h, Index w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mask m(h, w);
  const double mode = u(rng);
  if (mode < 0.1) return m;  // empty
  // a random disk plus scattered pixels
  const double cy = u(rng) * double(h), cx = u(rng) * double(w), r = 1.0 + 5.0 * u(rng);
  const double sprinkle = mode < 0.5 ? 0.0 : 0.1 * u(rng);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const double dy = double(y) - cy, dx = double(x) - cx;
      if (dy * dy + dx * dx <= r * r || u(rng) < sprinkle) m.set(y, x);
    }
  return m;
}

NetConfig grad_config() {
  NetConfig c;
  c.height = c.width = 8;
  c.latent_channels = 8;
  c.enc_width1 = 4;
  c.enc_width2 = 6;
  c.enc_width3 = 8;
  c.segmentor_width = 6;
  c.decoder_width = 4;
  return c;
}

T uniform(std::mt19937_64& rng, const Shape& s, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  ArrayX<double> d(shape_numel(s));
  for (Index i = 0; i < d.size(); ++i) d[i] = u(rng);
  return T(s, std::move(d));
}

T normal(std::mt19937_64& rng, const Shape& s) {
  std::normal_distribution<double> n(0.0, 1.0);
  ArrayX<double> d(shape_numel(s));
  for (Index i = 0; i < d.size(); ++i) d[i] = n(rng);
  return T(s, std::move(d));
}

T one_hot_batch(std::mt19937_64& rng, Index b, int k, Index h, Index w) {
  std::uniform_int_distribution<int> u(0, k - 1);
  ArrayX<double> d = ArrayX<double>::Zero(b * k * h * w);
  for (Index i = 0; i < b; ++i)
    for (Index p = 0; p < h * w; ++p) d[(i * k + u(rng)) * h * w + p] = 1.0;
  return T({b, Index(k), h, w}, std::move(d));
}

Check grad_result(const std::string& term, const std::function<T()>& f, const std::vector<T>& leaves) {
  Timer t;
  const GradCheckReport r = grad_check_leaves<double>(f, leaves, 1e-6);
  Check c{"gradient " + term, r.max_rel_err < 1e-4, r.max_rel_err, 1e-4,
          std::to_string(r.coords_checked) + " coordinates"};
  return finish(c, t);
}

}  // namespace

Check kernel_oracle(const SuiteOptions& o) {
  Timer t;
  std::mt19937_64 rng(o.seed);
  double worst = 0.0;
  for (int i = 0; i < o.kernel_instances; ++i) {
    const std::size_t n = i % 2 ? 2 : 1;
    const Gauss a = oracle::random_gauss(rng, n), b = oracle::random_gauss(rng, n);
    const double err = std::abs(kernel_under_test(a, b, o.mutate_kernel) - oracle::kernel_quadrature(a, b, quad_nodes(n)));
    worst = std::max(worst, err);
  }
  Check c{"kernel vs quadrature", worst < 1e-8, worst, 1e-8,
          std::to_string(o.kernel_instances) + " instances, n in {1,2}"};
  c = finish(c, t);
  if (c.seconds >= 30.0) {
    c.pass = false;
    c.detail += ", over the 30 s budget";
  }
  return c;
}

Check mixture_oracle(const SuiteOptions& o) {
  Timer t;
  std::mt19937_64 rng(o.seed + 1);
  double worst = 0.0;
  for (int i = 0; i < o.mixture_instances; ++i) {
    const std::size_t n = 1 + std::size_t(i % 2), m = 1 + std::size_t((i / 2) % 4);
    const Mixture s = oracle::random_mixture(rng, m, n), q = oracle::random_mixture(rng, m, n);
    const int nodes = quad_nodes(n);
    worst = std::max(worst, std::abs(full_under_test(s, q, o.mutate_kernel) - oracle::mixture_l2_quadrature(s, q, nodes)));
    worst = std::max(worst, std::abs(sliced_under_test(s, q, o.mutate_kernel) - oracle::sliced_l2_quadrature(s, q, 4001)));
  }
  Check c{"mixture distances vs quadrature", worst < 1e-6, worst, 1e-6,
          std::to_string(o.mixture_instances) + " instances, n <= 2, M <= 4, full and sliced"};
  return finish(c, t);
}

Check spot_values(const SuiteOptions& o) {
  Timer t;
  const Gauss z{{0.0}, {1.0}}, two{{2.0}, {1.0}};
  const double k = kernel_under_test(z, z, o.mutate_kernel);
  const double d = full_under_test({z}, {two}, o.mutate_kernel);
  const double ds = sliced_under_test({z}, {two}, o.mutate_kernel);
  const double err = std::max({std::abs(k - 0.2820948), std::abs(d - 0.3566358), std::abs(ds - 0.3566358)});
  Check c{"spot values", err < 5e-8, err, 5e-8,
          "k(N(0,1),N(0,1)) = " + fmt("%.9f", k) + ", D(N(0,1),N(2,1)) = " + fmt("%.9f", d)};
  return finish(c, t);
}

Check kl_oracle(const SuiteOptions& o) {
  Timer t;
  std::mt19937_64 rng(o.seed + 2);
  double worst = 0.0;
  for (int i = 0; i < o.kl_gaussians; ++i) {
    const std::size_t n = 1 + std::size_t(i % 4);
    const Gauss g = oracle::random_gauss(rng, n, 1.5, 0.3, 2.5);
    const double closed = kl_to_standard_normal(to_batch(g)).item();
    const double mc = oracle::kl_monte_carlo(g, o.seed + 100 + std::uint64_t(i), o.kl_samples);
    worst = std::max(worst, std::abs(closed - mc) / closed);
  }
  Check c{"KL closed form vs Monte Carlo", worst < 0.01, worst, 0.01,
          std::to_string(o.kl_gaussians) + " Gaussians, " + std::to_string(o.kl_samples) + " samples each, relative"};
  return finish(c, t);
}

std::vector<Check> gradient_checks(const SuiteOptions& o) {
  std::mt19937_64 rng(o.seed + 3);
  const NetConfig cfg = grad_config();
  const Index m = 2, n = cfg.latent_dim();
  std::vector<Check> out;

  T u = uniform(rng, {m, n}, -1.5, 1.5), lv = uniform(rng, {m, n}, -1, 1);
  T u2 = uniform(rng, {m, n}, -1.5, 1.5), lv2 = uniform(rng, {m, n}, -1, 1);
  out.push_back(grad_result("kl", [&] { return sum(kl_to_standard_normal(B(u, lv))); }, {u, lv}));
  out.push_back(grad_result("D", [&] { return mixture_l2_distance(B(u, lv), B(u2, lv2)); }, {u, lv, u2, lv2}));
  out.push_back(grad_result("D~", [&] { return sliced_l2_distance(B(u, lv), B(u2, lv2)); }, {u, lv, u2, lv2}));

  VardaNet<double> net(cfg);
  // Zero biases would sit ReLU inputs on the kink for dead patches.
  std::uniform_real_distribution<double> ub(-0.1, 0.1);
  std::vector<T> leaves;
  for (auto& e : net.params().entries()) {
    if (e.name.size() > 2 && e.name.compare(e.name.size() - 2, 2, ".b") == 0)
      for (Index i = 0; i < e.value.numel(); ++i) e.value.mutable_data()[i] = ub(rng);
    leaves.push_back(e.value);
  }
  const T xs = uniform(rng, {m, 1, cfg.height, cfg.width}, 0, 1);
  const T xt = uniform(rng, {m, 1, cfg.height, cfg.width}, 0, 1);
  const T ys = one_hot_batch(rng, m, cfg.classes, cfg.height, cfg.width);
  const T es = normal(rng, {m, 1, n}), et = normal(rng, {m, 1, n});
  out.push_back(grad_result("source ELBO", [&] {
    const auto s = source_elbo_loss(net, xs, ys, es);
    return s.seg + s.recon + s.kl;
  }, leaves));
  out.push_back(grad_result("target ELBO", [&] {
    const auto s = target_elbo_loss(net, xt, et);
    return s.recon + s.entropy + s.kl;
  }, leaves));
  out.push_back(grad_result("total", [&] { return total_loss(net, xs, ys, xt, LossWeights{}, es, et).total; },
                            leaves));
  return out;
}

Check zero_iff(const SuiteOptions& o) {
  Timer t;
  std::mt19937_64 rng(o.seed + 4);
  std::uniform_real_distribution<double> mag(-3.0, 0.0);
  double zero_worst = 0.0, nonzero_least = 1e300;
  bool agree = true;
  for (int i = 0; i < o.zero_iff_instances; ++i) {
    const std::size_t n = 1 + std::size_t(i % 4);
    const Gauss a = oracle::random_gauss(rng, n);
    Gauss b = a;
    const std::size_t l = std::size_t(i) % n;
    const double step = std::pow(10.0, mag(rng));
    if (i % 2) b.mean[l] += step;
    else b.var[l] *= 1.0 + step;
    const double d0 = full_under_test({a}, {a}, o.mutate_kernel), s0 = sliced_under_test({a}, {a}, o.mutate_kernel);
    const double d1 = full_under_test({a}, {b}, o.mutate_kernel), s1 = sliced_under_test({a}, {b}, o.mutate_kernel);
    zero_worst = std::max({zero_worst, std::abs(d0), std::abs(s0)});
    nonzero_least = std::min({nonzero_least, d1, s1});
    agree = agree && ((d1 > 1e-12) == (s1 > 1e-12));
  }
  const bool pass = zero_worst <= 1e-12 && nonzero_least > 1e-12 && agree;
  Check c{"zero iff identical (M = 1)", pass, zero_worst, 1e-12,
          "smallest distance between distinct Gaussians " + fmt("%.3g", nonzero_least) + ", " +
              std::to_string(o.zero_iff_instances) + " instances"};
  return finish(c, t);
}

Check stability(const SuiteOptions& o) {
  Timer t;
  std::mt19937_64 rng(o.seed + 5);
  int underflows = 0, ok = 0;
  double worst = 0.0;
  const int trials = 20;
  for (int i = 0; i < trials; ++i) {
    const Gauss a = oracle::random_gauss(rng, 256, 0.5, 0.8, 1.25), b = oracle::random_gauss(rng, 256, 0.5, 0.8, 1.25);
    if (oracle::naive_product_kernel<float>(a, b) == 0.0f) ++underflows;
    const auto ba = to_batch(a), bb = to_batch(b);
    const DiagGaussianBatch<float> fa(ba.means().cast<float>(), ba.log_variances().cast<float>());
    const DiagGaussianBatch<float> fb(bb.means().cast<float>(), bb.log_variances().cast<float>());
    const double lk = double(log_pair_kernel(fa, fb).item());
    const double ref = std::log(oracle::naive_product_kernel<long double>(a, b));
    const double k = pair_kernel(ba, bb).item();
    if (std::isfinite(lk) && std::isfinite(k) && k > 0.0) ++ok;
    worst = std::max(worst, std::abs(lk - ref) / std::abs(ref));
  }
  const bool pass = underflows == trials && ok == trials && worst < 1e-4;
  Check c{"log kernel stable at n = 256", pass, worst, 1e-4,
          std::to_string(underflows) + "/" + std::to_string(trials) + " naive float products underflow, " +
              std::to_string(ok) + " log-space kernels finite and positive; measured = relative error of the float log kernel"};
  return finish(c, t);
}

Check metric_oracles(const SuiteOptions& o) {
  Timer t;
  std::mt19937_64 rng(o.seed + 6);
  double worst = 0.0;
  int undefined = 0;
  bool consistent = true;
  for (int i = 0; i < o.metric_masks; ++i) {
    const Mask p = random_mask(rng, 16, 16), q = random_mask(rng, 16, 16);
    worst = std::max(worst, std::abs(dice(p, q).value - oracle::dice_brute(p, q)));
    const auto fast = assd(p, q), slow = oracle::assd_brute(p, q);
    if (fast.has_value() != slow.has_value()) consistent = false;
    else if (fast) worst = std::max(worst, std::abs(*fast - *slow));
    else {
      ++undefined;
      consistent = consistent && (p.empty() || q.empty());
    }
  }
  const Mask empty(16, 16);
  consistent = consistent && !assd(empty, random_mask(rng, 16, 16)).has_value() && !assd(empty, empty).has_value();
  Check c{"Dice and ASSD vs brute force", worst == 0.0 && consistent, worst, 0.0,
          std::to_string(o.metric_masks) + " mask pairs, " + std::to_string(undefined) + " undefined ASSD"};
  return finish(c, t);
}

Check training_determinism(long iterations, std::uint64_t seed) {
  Timer t;
  SynthSpec spec;
  spec.n_source = 20;
  spec.n_target_train = 20;
  spec.n_target_test = 0;
  spec.seed = seed;
  const Splits s = generate(spec);
  const DomainData src = stack(s.source, true), tgt = stack(s.target_train, false);
  auto run = [&] {
    NetConfig nc;
    nc.init_seed = seed;
    VardaNet<double> net(nc);
    TrainConfig tc;
    tc.iterations = iterations;
    tc.seed = seed;
    Trainer<double> tr(tc, net, src, tgt);
    std::string csv;
    tr.run([&](long it, const LossBreakdown& b) { csv += loss_csv_line(it, b); });
    return csv;
  };
  const std::string a = run(), b = run();
  Check c{"determinism (64-bit)", a == b && !a.empty(), a == b ? 0.0 : 1.0, 0.0,
          std::to_string(iterations) + " iterations twice, loss CSV hash " + sha1_hex(a).substr(0, 12) +
              (a == b ? " == " : " != ") + sha1_hex(b).substr(0, 12)};
  return finish(c, t);
}

std::string format_check(const Check& c) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s %-34s measured=%-11.4g tol=%-9.3g", c.pass ? "PASS" : "FAIL", c.name.c_str(),
                c.measured, c.tolerance);
  return std::string(buf) + " (" + c.detail + ") [" + fmt("%.1f", c.seconds) + " s]";
}

std::string json_line(const Check& c) {
  nlohmann::json j{{"check", c.name},   {"pass", c.pass},     {"measured", c.measured},
                   {"tolerance", c.tolerance}, {"detail", c.detail}, {"seconds", c.seconds}};
  return j.dump();
}

}  // namespace varda::verify
