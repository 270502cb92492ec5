#include "varda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace varda {

Index Mask::count() const {
  return static_cast<Index>(std::count(on.begin(), on.end(), std::uint8_t{1}));
}

Mask LabelMap::mask_of(int k) const {
  Mask m(height, width);
  for (std::size_t i = 0; i < labels.size(); ++i) m.on[i] = labels[i] == k ? 1 : 0;
  return m;
}

DiceResult dice(const Mask& pred, const Mask& truth) {
  VARDA_REQUIRE(pred.height == truth.height && pred.width == truth.width,
                "dice: mask shapes differ");
  Index both = 0, p = 0, t = 0;
  for (std::size_t i = 0; i < pred.on.size(); ++i) {
    p += pred.on[i];
    t += truth.on[i];
    both += pred.on[i] & truth.on[i];
  }
  if (p + t == 0) return {1.0, true};
  return {2.0 * double(both) / double(p + t), false};
}

std::vector<std::pair<Index, Index>> boundary_pixels(const Mask& m) {
  std::vector<std::pair<Index, Index>> out;
  for (Index y = 0; y < m.height; ++y)
    for (Index x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y == m.height - 1 || x == m.width - 1;
      if (edge || !m.at(y - 1, x) || !m.at(y + 1, x) || !m.at(y, x - 1) || !m.at(y, x + 1))
        out.emplace_back(y, x);
    }
  return out;
}

namespace {

// Exact 1-D squared distance transform (lower envelope of parabolas,
// Felzenszwalb & Huttenlocher).
void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const std::size_t n = f.size();
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  auto meet = [&](std::size_t q, std::size_t p) {
    const double dq = double(q), dp = double(p);
    return ((f[q] + dq * dq) - (f[p] + dp * dp)) / (2.0 * dq - 2.0 * dp);
  };
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  for (std::size_t q = 1; q < n; ++q) {
    double s = meet(q, v[k]);
    while (s <= z[k]) {
      --k;
      s = meet(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < double(q)) ++k;
    const double dq = double(q) - double(v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

// Squared Euclidean distance from every pixel to the nearest feature pixel.
std::vector<double> squared_edt(Index h, Index w, const std::vector<std::pair<Index, Index>>& features) {
  constexpr double kFar = 1e20;
  std::vector<double> grid(std::size_t(h * w), kFar);
  for (auto [y, x] : features) grid[std::size_t(y * w + x)] = 0.0;
  std::vector<double> f(std::size_t(std::max(h, w))), d(f.size());
  f.resize(std::size_t(h));
  d.resize(std::size_t(h));
  for (Index x = 0; x < w; ++x) {
    for (Index y = 0; y < h; ++y) f[std::size_t(y)] = grid[std::size_t(y * w + x)];
    edt_1d(f, d);
    for (Index y = 0; y < h; ++y) grid[std::size_t(y * w + x)] = d[std::size_t(y)];
  }
  f.resize(std::size_t(w));
  d.resize(std::size_t(w));
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) f[std::size_t(x)] = grid[std::size_t(y * w + x)];
    edt_1d(f, d);
    for (Index x = 0; x < w; ++x) grid[std::size_t(y * w + x)] = d[std::size_t(x)];
  }
  return grid;
}

}  // namespace

std::optional<double> assd(const Mask& pred, const Mask& truth) {
  VARDA_REQUIRE(pred.height == truth.height && pred.width == truth.width,
                "assd: mask shapes differ");
  if (pred.empty() || truth.empty()) return std::nullopt;
  const auto bp = boundary_pixels(pred);
  const auto bt = boundary_pixels(truth);
  const auto to_truth = squared_edt(truth.height, truth.width, bt);
  const auto to_pred = squared_edt(pred.height, pred.width, bp);
  // two partial sums so that swapping the arguments gives the same bits
  double from_pred = 0.0, from_truth = 0.0;
  for (auto [y, x] : bp) from_pred += std::sqrt(to_truth[std::size_t(y * pred.width + x)]);
  for (auto [y, x] : bt) from_truth += std::sqrt(to_pred[std::size_t(y * pred.width + x)]);
  return (from_pred + from_truth) / double(bp.size() + bt.size());
}

namespace {

std::pair<double, double> mean_sd(const std::vector<double>& v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= double(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / double(v.size() - 1))};
}

}  // namespace

MetricsReport score_segmentations(const std::vector<LabelMap>& predictions,
                                  const std::vector<LabelMap>& truths, int num_classes) {
  VARDA_REQUIRE(predictions.size() == truths.size(), "score: prediction/truth count mismatch");
  MetricsReport report;
  for (int k = 1; k < num_classes; ++k) {
    ClassMetrics cm;
    cm.label = k;
    std::vector<double> dice_ok, assd_ok;
    for (std::size_t i = 0; i < truths.size(); ++i) {
      const Mask p = predictions[i].mask_of(k), t = truths[i].mask_of(k);
      const DiceResult d = dice(p, t);
      cm.dice.push_back(d.value);
      cm.dice_vacuous.push_back(d.vacuous);
      if (d.vacuous)
        ++cm.n_vacuous;
      else
        dice_ok.push_back(d.value);
      const auto a = assd(p, t);
      cm.assd.push_back(a);
      if (a)
        assd_ok.push_back(*a);
      else
        ++cm.n_undefined;
    }
    std::tie(cm.dice_mean, cm.dice_sd) = mean_sd(dice_ok);
    std::tie(cm.assd_mean, cm.assd_sd) = mean_sd(assd_ok);
    report.assd_excluded += cm.n_undefined;
    report.classes.push_back(std::move(cm));
  }
  std::vector<double> dm, am;
  for (const auto& c : report.classes) {
    if (!std::isnan(c.dice_mean)) dm.push_back(c.dice_mean);
    if (!std::isnan(c.assd_mean)) am.push_back(c.assd_mean);
  }
  report.mean_dice = mean_sd(dm).first;
  report.mean_assd = mean_sd(am).first;
  return report;
}

std::string MetricsReport::table() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-7s %-18s %-18s %s\n", "class", "Dice (%)", "ASSD (px)", "N/A");
  os << line;
  auto cell = [](double m, double s) {
    char buf[64];
    if (std::isnan(m))
      std::snprintf(buf, sizeof buf, "N/A");
    else
      std::snprintf(buf, sizeof buf, "%.2f +- %.2f", m, s);
    return std::string(buf);
  };
  for (const auto& c : classes) {
    std::snprintf(line, sizeof line, "%-7d %-18s %-18s %d\n", c.label,
                  cell(100.0 * c.dice_mean, 100.0 * c.dice_sd).c_str(),
                  cell(c.assd_mean, c.assd_sd).c_str(), c.n_undefined);
    os << line;
  }
  std::snprintf(line, sizeof line, "%-7s %-18.2f %-18.3f %d\n", "mean", 100.0 * mean_dice, mean_assd,
                assd_excluded);
  os << line;
  return os.str();
}

std::string MetricsReport::csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "class,dice_mean,dice_sd,assd_mean,assd_sd,n_undefined\n";
  for (const auto& c : classes)
    os << c.label << ',' << c.dice_mean << ',' << c.dice_sd << ',' << c.assd_mean << ','
       << c.assd_sd << ',' << c.n_undefined << '\n';
  os << "mean," << mean_dice << ",," << mean_assd << ",," << assd_excluded << '\n';
  return os.str();
}

}  // namespace varda
