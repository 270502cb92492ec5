#include <sstream>

#include "doctest.h"
#include "test_util.hpp"
#include "varda/grad_check.hpp"
#include "varda/nn_ops.hpp"
#include "varda/serialize.hpp"

using namespace varda;
using T = Tensor<double>;
using varda::testing::random_tensor;

namespace {

// Central difference of a scalar function of one coordinate, used as the oracle.
double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace

TEST_CASE("elementwise forward") {
  const T a = T::from({2}, {1, 2});
  const T b = T::from({2}, {3, 4});
  const T c = a + b;
  CHECK(c.at({0}) == 4.0);
  CHECK(c.at({1}) == 6.0);
  CHECK(log(exp(T::from({1}, {0.5}))).item() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(clamp(T::from({3}, {-2, 0.5, 3}), 0.0, 1.0).data().isApprox(ArrayX<double>{{0, 0.5, 1}}));
  CHECK(sqrt(T::from({1}, {9.0})).item() == 3.0);
}

TEST_CASE("broadcasting: scalar and trailing axes") {
  const T a = T::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const T row = T::from({3}, {10, 20, 30});
  const T s = T::scalar(2.0);
  const T r = a + row;
  CHECK(r.shape() == Shape{2, 3});
  CHECK(r.at({1, 2}) == 36.0);
  CHECK((s * a).at({1, 0}) == 8.0);
  CHECK((row - a).at({0, 0}) == 9.0);
  CHECK_THROWS_AS(a + T::from({2}, {1, 2}), ContractViolation);
}

TEST_CASE("domain errors") {
  CHECK_THROWS_AS(log(T::from({2}, {1.0, 0.0})), DomainError);
  CHECK_THROWS_AS(log(T::from({1}, {-1.0})), DomainError);
  CHECK_THROWS_AS(div(T::from({1}, {1.0}), T::from({1}, {0.0})), DomainError);
  CHECK_THROWS_AS(sqrt(T::from({1}, {-4.0})), DomainError);
  // clamping first makes log legal
  CHECK(std::isfinite(log(clamp(T::from({1}, {0.0}), 1e-12, 1.0)).item()));
}

TEST_CASE("square backward at 3 matches finite difference") {
  T x = T::from({1}, {3.0}, true);
  backward(sum(square(x)));
  const double fd = central_diff([](double v) { return v * v; }, 3.0, 1e-6);
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-14));
  CHECK(std::abs(fd - 6.0) < 1e-8);
}

TEST_CASE("matmul") {
  const T eye = T::from({2, 2}, {1, 0, 0, 1});
  const T m = T::from({2, 2}, {1, 2, 3, 4});
  CHECK(matmul(eye, m).data().isApprox(m.data()));
  CHECK(matmul(T::from({1, 2}, {1, 2}), T::from({2, 1}, {3, 4})).item() == 11.0);
  CHECK_THROWS_AS(matmul(m, T::from({3, 1}, {1, 2, 3})), ContractViolation);

  std::mt19937_64 rng(11);
  T a = random_tensor(rng, {3, 4});
  T b = random_tensor(rng, {4, 2});
  const auto rep = grad_check_leaves<double>([&] { return sum(square(matmul(a, b))); }, {a, b}, 1e-6);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("conv2d forward") {
  const T ones = T::ones({1, 1, 3, 3});
  const T k = T::ones({1, 1, 3, 3});
  const T y = conv2d(ones, k, 1, 1);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.at({0, 0, 1, 1}) == 9.0);
  CHECK(y.at({0, 0, 0, 0}) == 4.0);

  std::mt19937_64 rng(3);
  const T x = random_tensor(rng, {2, 1, 5, 5});
  T delta = T::zeros({1, 1, 3, 3});
  delta.mutable_data()[4] = 1.0;
  CHECK(conv2d(x, delta, 1, 1).data().isApprox(x.data()));

  const T s2 = conv2d(random_tensor(rng, {1, 2, 8, 8}), random_tensor(rng, {4, 2, 3, 3}), 2, 1);
  CHECK(s2.shape() == Shape{1, 4, 4, 4});
  CHECK_THROWS_AS(conv2d(x, delta, 0, 1), ContractViolation);
  CHECK_THROWS_AS(conv2d(x, delta, 1, -1), ContractViolation);
  CHECK_THROWS_AS(conv2d(T::ones({1, 1, 1, 1}), delta, 1, 0), ContractViolation);
}

TEST_CASE("conv2d gradient matches finite difference") {
  std::mt19937_64 rng(5);
  T x = random_tensor(rng, {2, 2, 6, 6});
  T w = random_tensor(rng, {3, 2, 3, 3});
  T b = random_tensor(rng, {3});
  const T target = random_tensor(rng, {2, 3, 3, 3});
  for (Index stride : {1, 2}) {
    const auto rep = grad_check_leaves<double>(
        [&] {
          T y = conv2d(x, w, b, stride, 1);
          if (stride == 2) return sum(square(y - target));
          return sum(square(y));
        },
        {x, w, b}, 1e-6);
    CHECK(rep.max_rel_err < 1e-5);
  }
}

TEST_CASE("reductions and activations") {
  const T sm = softmax(T::from({3}, {0, 0, 0}), 0);
  for (Index i = 0; i < 3; ++i) CHECK(sm.data()[i] == doctest::Approx(1.0 / 3.0));
  const T r = relu(T::from({2}, {-1, 2}));
  CHECK(r.at({0}) == 0.0);
  CHECK(r.at({1}) == 2.0);

  T x = T::from({4}, {1, 2, 3, 4}, true);
  backward(mean(x));
  for (Index i = 0; i < 4; ++i) CHECK(x.grad()[i] == doctest::Approx(0.25));

  const T m = T::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(sum(m, 0).data().isApprox(ArrayX<double>{{5, 7, 9}}));
  CHECK(mean(m, 1).data().isApprox(ArrayX<double>{{2, 5}}));
  CHECK(sum(m, -1).shape() == Shape{2});
  CHECK_THROWS_AS(sum(m, 2), ContractViolation);
  CHECK_THROWS_AS(softmax(m, 5), ContractViolation);
}

TEST_CASE("softmax stability and normalization") {
  std::mt19937_64 rng(9);
  const T x = random_tensor(rng, {3, 5, 4, 4}, -50, 50);
  const T big = T::from({3}, {1000, 1001, 1002});
  CHECK(softmax(big, 0).data().allFinite());
  CHECK(log_softmax(big, 0).data().allFinite());
  const T p = softmax(x, 1);
  CHECK((p.data() >= 0.0).all());
  const T totals = sum(p, 1);
  CHECK((totals.data() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK((exp(log_softmax(x, 1)).data() - p.data()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("backward semantics") {
  std::mt19937_64 rng(2);
  T x = random_tensor(rng, {2, 3});
  x.set_requires_grad(true);
  backward(sum(x));
  CHECK((x.grad() == 1.0).all());

  // product rule on a composite
  T a = T::from({1}, {1.5}, true);
  T b = T::from({1}, {-0.75}, true);
  backward(sum(a * b * a));
  const double fd_a = central_diff([](double v) { return v * -0.75 * v; }, 1.5, 1e-6);
  const double fd_b = central_diff([](double v) { return 1.5 * v * 1.5; }, -0.75, 1e-6);
  CHECK(a.grad()[0] == doctest::Approx(fd_a).epsilon(1e-8));
  CHECK(b.grad()[0] == doctest::Approx(fd_b).epsilon(1e-8));

  // tape consumed
  T c = T::from({2}, {1, 2}, true);
  const T loss = sum(square(c));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), ContractViolation);
  CHECK_THROWS_AS(backward(square(c)), ContractViolation);  // non-scalar
}

TEST_CASE("gradients accumulate across backward passes and shared uses") {
  T x = T::from({1}, {2.0}, true);
  backward(sum(x * x + x));  // d/dx = 2x + 1 = 5 (x used three times)
  CHECK(x.grad()[0] == doctest::Approx(5.0));
  backward(sum(scale(x, 3.0)));
  CHECK(x.grad()[0] == doctest::Approx(8.0));
  x.zero_grad();
  CHECK(!x.has_grad());
}

TEST_CASE("no-grad mode records nothing") {
  T x = T::from({2}, {1, 2}, true);
  Tape<double>::active().clear();
  {
    NoGradGuard guard;
    const T y = sum(square(x));
    CHECK(!y.requires_grad());
  }
  CHECK(Tape<double>::active().empty());
}

TEST_CASE("grad_check harness") {
  std::mt19937_64 rng(4);
  const T p = random_tensor(rng, {7});
  const double err = grad_check<double>([](const T& x) { return scale(sum(square(x)), 0.5); }, p, 1e-5);
  CHECK(err < 1e-8);
  const double flat = grad_check<double>([](const T&) { return T::scalar(3.0); }, p, 1e-5);
  CHECK(flat == 0.0);
}

TEST_CASE("every differentiable op passes grad_check on random inputs") {
  std::mt19937_64 rng(21);
  using Fn = std::function<T(const T&)>;
  const T other = random_tensor(rng, {2, 3, 4}, 0.5, 1.5);
  const T row = random_tensor(rng, {4}, 0.5, 1.5);
  const T w = random_tensor(rng, {4, 3});
  const T weights = random_tensor(rng, {2, 3, 4});
  const std::vector<std::pair<const char*, Fn>> cases = {
      {"add", [&](const T& x) { return sum(weights * (x + other)); }},
      {"sub", [&](const T& x) { return sum(weights * (other - x)); }},
      {"mul", [&](const T& x) { return sum(x * other * x); }},
      {"div", [&](const T& x) { return sum(x / other) + sum(other / (x + 3.0)); }},
      {"broadcast", [&](const T& x) { return sum(weights * (x * row)); }},
      {"exp", [&](const T& x) { return sum(weights * exp(x)); }},
      {"log", [&](const T& x) { return sum(weights * log(x + 2.0)); }},
      {"neg", [&](const T& x) { return sum(weights * -x); }},
      {"sqrt", [&](const T& x) { return sum(weights * sqrt(x + 2.0)); }},
      {"clamp", [&](const T& x) { return sum(weights * clamp(x, -0.7, 0.7)); }},
      {"relu", [&](const T& x) { return sum(weights * relu(x)); }},
      {"sum_axis", [&](const T& x) { return sum(square(sum(x, 1))); }},
      {"mean_axis", [&](const T& x) { return sum(square(mean(x, 2))); }},
      {"softmax", [&](const T& x) { return sum(weights * softmax(x, 1)); }},
      {"log_softmax", [&](const T& x) { return sum(weights * log_softmax(x, 2)); }},
      {"reshape", [&](const T& x) { return sum(square(matmul(reshape(x, {6, 4}), w))); }},
      {"expand", [&](const T& x) { return sum(weights * expand(reshape(sum(x, 1), {2, 1, 4}), {2, 3, 4})); }},
      {"concat", [&](const T& x) { return sum(square(concat<double>({x, other, x}, 1))); }},
  };
  for (const auto& [name, f] : cases) {
    CAPTURE(name);
    const T p = random_tensor(rng, {2, 3, 4});
    CHECK(grad_check<double>(f, p, 1e-6) < 1e-5);
  }
  const T img_w = random_tensor(rng, {2, 3, 8, 8});
  CHECK(grad_check<double>([&](const T& x) { return sum(img_w * upsample_nearest(x, 2)); },
                           random_tensor(rng, {2, 3, 4, 4}), 1e-6) < 1e-5);
  CHECK(grad_check<double>([&](const T& x) { return sum(square(avg_pool(x, 2))); },
                           random_tensor(rng, {2, 3, 8, 8}), 1e-6) < 1e-5);
}

TEST_CASE("forward results are bit-identical across runs") {
  auto run = [] {
    std::mt19937_64 rng(77);
    const T x = random_tensor(rng, {2, 3, 8, 8});
    const T w = random_tensor(rng, {4, 3, 3, 3});
    return softmax(conv2d(x, w, 1, 1), 1).data();
  };
  const ArrayX<double> a = run(), b = run();
  CHECK(std::memcmp(a.data(), b.data(), std::size_t(a.size()) * sizeof(double)) == 0);
}

TEST_CASE("VTEN round-trip is lossless for random shapes") {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> rank_d(0, 4), ext_d(1, 5);
  for (int trial = 0; trial < 25; ++trial) {
    Shape shape;
    const int rank = rank_d(rng);
    for (int i = 0; i < rank; ++i) shape.push_back(ext_d(rng));
    const T t = random_tensor(rng, shape, -1e6, 1e6);
    std::stringstream ss;
    write_tensor(ss, t);
    CHECK(ss.str().size() == 6 + 4 * std::size_t(rank) + 8 * std::size_t(t.numel()));
    const T back = read_tensor<double>(ss);
    CHECK(back.shape() == t.shape());
    CHECK(std::memcmp(back.data().data(), t.data().data(), std::size_t(t.numel()) * 8) == 0);
  }
}

TEST_CASE("VTEN header layout and malformed input") {
  std::stringstream ss;
  write_tensor(ss, Tensor<float>::from({2, 1}, {1.0f, -2.0f}));
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "VTEN");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 2);
  CHECK(static_cast<unsigned char>(bytes[6]) == 2);
  CHECK(static_cast<unsigned char>(bytes[10]) == 1);
  CHECK(bytes.size() == 4 + 1 + 1 + 8 + 8);

  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  try {
    (void)read_tensor<float>(truncated);
    CHECK(false);
  } catch (const FormatError& e) {
    CHECK(e.offset() == bytes.size() - 3);
  }
  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream bad_ss(bad);
  CHECK_THROWS_AS(read_tensor<float>(bad_ss), FormatError);

  // float32 file read as float64 converts values
  std::stringstream again(bytes);
  const T widened = read_tensor<double>(again);
  CHECK(widened.at({1, 0}) == -2.0);
}
