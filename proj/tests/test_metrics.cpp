#include <random>

#include "doctest.h"
#include "varda/metrics.hpp"
#include "varda/verify/oracles.hpp"

using namespace varda;

namespace {

Mask from_points(Index h, Index w, std::initializer_list<std::pair<Index, Index>> pts) {
  Mask m(h, w);
  for (auto [y, x] : pts) m.set(y, x);
  return m;
}

Mask random_mask(std::mt19937_64& rng, Index h, Index w) {
  // a mix of sparse noise, dense noise, blobs and the occasional empty mask
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mask m(h, w);
  const double kind = u(rng);
  if (kind < 0.05) return m;
  if (kind < 0.55) {
    const double p = 0.02 + 0.6 * u(rng);
    for (auto& v : m.on) v = u(rng) < p;
    return m;
  }
  const double cy = u(rng) * double(h), cx = u(rng) * double(w), r = 1.0 + u(rng) * 6.0;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      if ((double(y) - cy) * (double(y) - cy) + (double(x) - cx) * (double(x) - cx) < r * r) m.set(y, x);
  return m;
}

}  // namespace

TEST_CASE("dice hand values") {
  const Mask p = from_points(3, 3, {{0, 0}, {0, 1}});
  const Mask t = from_points(3, 3, {{0, 1}, {0, 2}});
  CHECK(dice(p, t).value == 0.5);
  CHECK(dice(p, p).value == 1.0);
  CHECK(dice(p, from_points(3, 3, {{2, 2}})).value == 0.0);
  const DiceResult empty = dice(Mask(3, 3), Mask(3, 3));
  CHECK(empty.value == 1.0);
  CHECK(empty.vacuous);
  CHECK_FALSE(dice(p, t).vacuous);
  CHECK_THROWS_AS(dice(Mask(3, 3), Mask(3, 4)), ContractViolation);
}

TEST_CASE("assd hand values") {
  const Mask a = from_points(1, 8, {{0, 1}});
  const Mask b = from_points(1, 8, {{0, 4}});
  CHECK(*assd(a, b) == 3.0);
  CHECK(*assd(a, a) == 0.0);
  CHECK_FALSE(assd(Mask(1, 8), b).has_value());
  CHECK_FALSE(assd(a, Mask(1, 8)).has_value());
  // a 3x3 block has 8 boundary pixels; its centre is interior
  Mask block(5, 5);
  for (Index y = 1; y < 4; ++y)
    for (Index x = 1; x < 4; ++x) block.set(y, x);
  CHECK(boundary_pixels(block).size() == 8);
}

TEST_CASE("dice and assd match brute force on 200 random 16x16 masks") {
  std::mt19937_64 rng(21);
  int undefined = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Mask p = random_mask(rng, 16, 16), t = random_mask(rng, 16, 16);
    CHECK(dice(p, t).value == oracle::dice_brute(p, t));
    CHECK(dice(p, t).value == dice(t, p).value);
    const auto fast = assd(p, t), slow = oracle::assd_brute(p, t);
    REQUIRE(fast.has_value() == slow.has_value());
    if (fast) {
      CHECK(*fast == *slow);
      CHECK(*fast == *assd(t, p));
      CHECK(*fast >= 0.0);
    } else {
      ++undefined;
      CHECK((p.empty() || t.empty()));
    }
  }
  CHECK(undefined > 0);
}

TEST_CASE("report aggregation") {
  // two images, K = 3; class 2 is absent from the prediction of image 1
  LabelMap t0{2, 2, {0, 1, 2, 2}}, p0{2, 2, {0, 1, 2, 2}};
  LabelMap t1{2, 2, {1, 1, 2, 0}}, p1{2, 2, {1, 1, 0, 0}};
  const MetricsReport r = score_segmentations({p0, p1}, {t0, t1}, 3);
  REQUIRE(r.classes.size() == 2);
  CHECK(r.classes[0].label == 1);
  CHECK(r.classes[0].dice_mean == 1.0);
  CHECK(r.classes[0].assd_mean == 0.0);
  CHECK(r.classes[1].dice == std::vector<double>{1.0, 0.0});
  CHECK(r.classes[1].n_undefined == 1);
  CHECK(r.classes[1].assd_mean == 0.0);
  CHECK(r.assd_excluded == 1);
  CHECK(r.mean_dice == doctest::Approx(0.75));
  CHECK(r.csv().rfind("class,dice_mean,dice_sd,assd_mean,assd_sd,n_undefined\n", 0) == 0);
  CHECK(r.table().find("N/A") != std::string::npos);
}

TEST_CASE("vacuous dice is excluded from the mean") {
  LabelMap t{1, 2, {0, 1}}, p{1, 2, {0, 1}};
  const MetricsReport r = score_segmentations({p}, {t}, 3);
  CHECK(r.classes[1].n_vacuous == 1);
  CHECK(std::isnan(r.classes[1].dice_mean));
  CHECK(r.mean_dice == 1.0);
}
