#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "varda/tensor.hpp"

namespace varda {

/// Binary mask on an H x W grid, row-major.
struct Mask {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> on;

  Mask() = default;
  Mask(Index h, Index w) : height(h), width(w), on(std::size_t(h * w), 0) {}

  bool at(Index y, Index x) const { return on[std::size_t(y * width + x)] != 0; }
  void set(Index y, Index x, bool v = true) { on[std::size_t(y * width + x)] = v ? 1 : 0; }
  Index count() const;
  bool empty() const { return count() == 0; }
};

/// Per-pixel hard class labels on an H x W grid.
struct LabelMap {
  Index height = 0;
  Index width = 0;
  std::vector<int> labels;

  Mask mask_of(int k) const;
};

struct DiceResult {
  double value = 0.0;
  bool vacuous = false;  // both masks empty; value is 1 by convention
};

/// 2|P n T| / (|P| + |T|).
DiceResult dice(const Mask& pred, const Mask& truth);

/// Pixels of the mask that touch a non-mask pixel (4-neighbourhood) or the image edge.
std::vector<std::pair<Index, Index>> boundary_pixels(const Mask& m);

/// Average symmetric surface distance in pixels: the mean, over the boundary
/// pixels of both masks, of the Euclidean distance to the nearest boundary
/// pixel of the other mask. Undefined when either mask is empty.
std::optional<double> assd(const Mask& pred, const Mask& truth);

struct ClassMetrics {
  int label = 0;
  std::vector<double> dice;                 // one per image
  std::vector<bool> dice_vacuous;           // one per image
  std::vector<std::optional<double>> assd;  // one per image
  double dice_mean = 0.0, dice_sd = 0.0;
  double assd_mean = 0.0, assd_sd = 0.0;
  int n_undefined = 0;  // images with undefined ASSD, excluded from the ASSD stats
  int n_vacuous = 0;    // images where both masks were empty, excluded from the Dice stats
};

/// Per-class Dice and ASSD over a set of images, plus cross-class means.
/// Background (class 0) is not scored.
struct MetricsReport {
  std::vector<ClassMetrics> classes;
  double mean_dice = 0.0;
  double mean_assd = 0.0;
  int assd_excluded = 0;  // total undefined ASSD entries across classes

  std::string table() const;
  std::string csv() const;  // class,dice_mean,dice_sd,assd_mean,assd_sd,n_undefined
};

MetricsReport score_segmentations(const std::vector<LabelMap>& predictions,
                                  const std::vector<LabelMap>& truths, int num_classes);

}  // namespace varda
