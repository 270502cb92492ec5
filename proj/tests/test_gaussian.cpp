#include <cmath>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "varda/gaussian.hpp"
#include "varda/grad_check.hpp"
#include "varda/verify/bridge.hpp"

using namespace varda;
using varda::oracle::Gauss;
using varda::oracle::Mixture;
using varda::oracle::to_batch;
using B = DiagGaussianBatch<double>;
using T = Tensor<double>;

TEST_CASE("KL closed form") {
  CHECK(kl_to_standard_normal(to_batch(Gauss{{0.0}, {1.0}})).item() == 0.0);

  const double one = kl_to_standard_normal(to_batch(Gauss{{1.0}, {1.0}})).item();
  CHECK(one == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::abs(oracle::kl_monte_carlo(Gauss{{1.0}, {1.0}}, 11) - 0.5) < 0.005);

  const double two = kl_to_standard_normal(to_batch(Gauss{{0.0, 0.0}, {2.0, 2.0}})).item();
  CHECK(two == doctest::Approx(0.30685281944005466).epsilon(1e-14));
  // 1-D quadrature of q log(q/p), doubled for the two identical coordinates
  const double per_axis = oracle::simpson(
      [](double z) {
        const double q = oracle::normal_pdf(z, 0.0, 2.0);
        return q * (std::log(q) - std::log(oracle::normal_pdf(z, 0.0, 1.0)));
      },
      -30.0, 30.0, 4001);
  CHECK(std::abs(2.0 * per_axis - two) < 1e-10);
}

TEST_CASE("KL is per sample and nonnegative") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const B g(varda::testing::random_tensor(rng, {4, 5}, -3, 3),
              varda::testing::random_tensor(rng, {4, 5}, -4, 4));
    const T kl = kl_to_standard_normal(g);
    REQUIRE(kl.shape() == Shape{4});
    for (Index i = 0; i < 4; ++i) CHECK(kl.data()[i] >= 0.0);
  }
}

TEST_CASE("pair kernel spot values and quadrature") {
  const Gauss std0{{0.0}, {1.0}}, shifted{{2.0}, {1.0}};
  const double k00 = pair_kernel(to_batch(std0), to_batch(std0)).item();
  const double k02 = pair_kernel(to_batch(std0), to_batch(shifted)).item();
  CHECK(k00 == doctest::Approx(0.28209479177387814).epsilon(1e-15));
  CHECK(k02 == doctest::Approx(0.10377687435514868).epsilon(1e-15));
  CHECK(std::abs(k00 - oracle::kernel_quadrature(std0, std0)) < 1e-12);
  CHECK(std::abs(k02 - oracle::kernel_quadrature(std0, shifted)) < 1e-12);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = trial % 2 ? 2 : 1;
    const Gauss a = oracle::random_gauss(rng, n), b = oracle::random_gauss(rng, n);
    const double k = pair_kernel(to_batch(a), to_batch(b)).item();
    CHECK(std::abs(k - oracle::kernel_quadrature(a, b, n == 1 ? 4001 : 1001)) < 1e-8);
  }
}

TEST_CASE("pair kernel factorizes over coordinates") {
  std::mt19937_64 rng(6);
  const Gauss a = oracle::random_gauss(rng, 2), b = oracle::random_gauss(rng, 2);
  const double k2 = pair_kernel(to_batch(a), to_batch(b)).item();
  double k1 = 1.0;
  for (std::size_t l = 0; l < 2; ++l)
    k1 *= pair_kernel(to_batch(Gauss{{a.mean[l]}, {a.var[l]}}), to_batch(Gauss{{b.mean[l]}, {b.var[l]}})).item();
  CHECK(k2 == doctest::Approx(k1).epsilon(1e-14));
  CHECK_THROWS_AS(pair_kernel(to_batch(a), to_batch(Gauss{{0.0}, {1.0}})), ContractViolation);
  CHECK_THROWS_AS(pair_kernel(to_batch(Mixture{a, a}), to_batch(b)), ContractViolation);
}

TEST_CASE("mixture distance spot value and quadrature") {
  const B s = to_batch(Gauss{{0.0}, {1.0}}), t = to_batch(Gauss{{2.0}, {1.0}});
  const double d = mixture_l2_distance(s, t).item();
  CHECK(d == doctest::Approx(0.35663583483745893).epsilon(1e-14));
  CHECK(sliced_l2_distance(s, t).item() == doctest::Approx(d).epsilon(1e-14));
  CHECK(std::abs(d - oracle::mixture_l2_quadrature({{{0.0}, {1.0}}}, {{{2.0}, {1.0}}})) < 1e-10);

  std::mt19937_64 rng(7);
  const Mixture ms = oracle::random_mixture(rng, 3, 2), mt = oracle::random_mixture(rng, 3, 2);
  const double full = mixture_l2_distance(to_batch(ms), to_batch(mt)).item();
  CHECK(std::abs(full - oracle::mixture_l2_quadrature(ms, mt, 2001)) < 1e-6);

  const Mixture a = oracle::random_mixture(rng, 2, 3), b = oracle::random_mixture(rng, 2, 3);
  const double sliced = sliced_l2_distance(to_batch(a), to_batch(b)).item();
  CHECK(std::abs(sliced - oracle::sliced_l2_quadrature(a, b)) < 1e-8);
}

TEST_CASE("sliced distance at M = 1 is the sum of per-coordinate distances") {
  std::mt19937_64 rng(8);
  const Gauss a = oracle::random_gauss(rng, 4), b = oracle::random_gauss(rng, 4);
  double total = 0.0;
  for (std::size_t l = 0; l < 4; ++l)
    total += mixture_l2_distance(to_batch(Gauss{{a.mean[l]}, {a.var[l]}}),
                                 to_batch(Gauss{{b.mean[l]}, {b.var[l]}})).item();
  CHECK(sliced_l2_distance(to_batch(a), to_batch(b)).item() == doctest::Approx(total).epsilon(1e-13));
}

TEST_CASE("distances: identity, nonnegativity, exact symmetry") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index m = 1 + trial % 4, n = 1 + trial % 5;
    const B s(varda::testing::random_tensor(rng, {m, n}, -2, 2), varda::testing::random_tensor(rng, {m, n}, -2, 2));
    const B t(varda::testing::random_tensor(rng, {m, n}, -2, 2), varda::testing::random_tensor(rng, {m, n}, -2, 2));
    const double d = mixture_l2_distance(s, t).item(), ds = sliced_l2_distance(s, t).item();
    CHECK(d >= -1e-12);
    CHECK(ds >= -1e-12);
    CHECK(d == mixture_l2_distance(t, s).item());
    CHECK(ds == sliced_l2_distance(t, s).item());
    if (trial < 50) {
      CHECK(std::abs(mixture_l2_distance(s, s).item()) < 1e-12);
      CHECK(std::abs(sliced_l2_distance(t, t).item()) < 1e-12);
    }
  }
  const B a(T::zeros({2, 3}), T::zeros({2, 3}));
  const B b(T::zeros({3, 3}), T::zeros({3, 3}));
  CHECK_THROWS_AS(mixture_l2_distance(a, b), ContractViolation);
  CHECK_THROWS_AS(sliced_l2_distance(a, b), ContractViolation);
}

TEST_CASE("zero iff identical at M = 1") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const Gauss a = oracle::random_gauss(rng, 3);
    Gauss b = a;
    CHECK(std::abs(mixture_l2_distance(to_batch(a), to_batch(b)).item()) < 1e-12);
    CHECK(std::abs(sliced_l2_distance(to_batch(a), to_batch(b)).item()) < 1e-12);
    // perturb one coordinate's mean or variance
    const std::size_t l = std::size_t(trial % 3);
    if (trial % 2)
      b.mean[l] += 0.05;
    else
      b.var[l] *= 1.2;
    CHECK(mixture_l2_distance(to_batch(a), to_batch(b)).item() > 1e-8);
    CHECK(sliced_l2_distance(to_batch(a), to_batch(b)).item() > 1e-8);
  }
}

TEST_CASE("gradients of KL and both distances") {
  std::mt19937_64 rng(12);
  T u = varda::testing::random_tensor(rng, {3, 4}, -1.5, 1.5);
  T lv = varda::testing::random_tensor(rng, {3, 4}, -1, 1);
  T u2 = varda::testing::random_tensor(rng, {3, 4}, -1.5, 1.5);
  T lv2 = varda::testing::random_tensor(rng, {3, 4}, -1, 1);
  auto kl = [&] { return sum(kl_to_standard_normal(B(u, lv))); };
  auto full = [&] { return mixture_l2_distance(B(u, lv), B(u2, lv2)); };
  auto sliced = [&] { return sliced_l2_distance(B(u, lv), B(u2, lv2)); };
  CHECK(grad_check_leaves<double>(kl, {u, lv}, 1e-5).max_rel_err < 1e-6);
  CHECK(grad_check_leaves<double>(full, {u, lv, u2, lv2}, 1e-5).max_rel_err < 1e-5);
  CHECK(grad_check_leaves<double>(sliced, {u, lv, u2, lv2}, 1e-5).max_rel_err < 1e-5);
}

TEST_CASE("log-space kernel survives n = 256") {
  std::mt19937_64 rng(13);
  const Gauss a = oracle::random_gauss(rng, 256, 0.5, 0.8, 1.25);
  const Gauss b = oracle::random_gauss(rng, 256, 0.5, 0.8, 1.25);
  const double k = pair_kernel(to_batch(a), to_batch(b)).item();
  CHECK(std::isfinite(k));
  CHECK(k > 0.0);
  CHECK(oracle::naive_product_kernel<float>(a, b) == 0.0f);

  const DiagGaussianBatch<float> af(to_batch(a).means().cast<float>(), to_batch(a).log_variances().cast<float>());
  const DiagGaussianBatch<float> bf(to_batch(b).means().cast<float>(), to_batch(b).log_variances().cast<float>());
  const float lk = log_pair_kernel(af, bf).item();
  CHECK(std::isfinite(lk));
  CHECK(std::abs(double(lk) - std::log(k)) < 1e-3 * std::abs(std::log(k)));
}
