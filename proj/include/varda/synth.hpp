#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "varda/config.hpp"
#include "varda/metrics.hpp"
#include "varda/tensor.hpp"

namespace varda {

enum class Domain : std::uint8_t { source = 0, target = 1 };

const char* domain_name(Domain d);
Domain parse_domain(const std::string& s);

/// Appearance of one domain: per-class mean intensity, additive Gaussian
/// noise, a linear contrast about 0.5, and a gamma warp of the clamped result.
struct IntensityModel {
  std::vector<double> class_means;  // one per class, background first
  double contrast = 1.0;
  double noise_sigma = 0.05;
  double gamma = 1.0;
};

/// Ranges for the per-image geometry draw (pixel units).
struct GeometryJitter {
  double center_jitter = 2.5;         // centre offset from the image middle, +-
  double outer_radius_min = 6.5;
  double outer_radius_max = 9.0;
  double ring_min = 2.0;              // ring thickness
  double ring_max = 3.2;
  double lobe_angle_deg = 180.0;      // mean direction of the side lobe
  double lobe_angle_jitter_deg = 35.0;
  double lobe_major_min = 5.0;        // semi-axis along the ring tangent
  double lobe_major_max = 7.5;
  double lobe_minor_min = 3.0;        // semi-axis along the radius
  double lobe_minor_max = 4.5;
};

/// Two-domain synthetic segmentation benchmark. Classes: 0 background,
/// 1 outer ring, 2 inner disk, 3 side lobe. Both domains draw geometry from
/// the same distribution and differ only in the intensity model.
struct SynthSpec {
  Index height = 32;
  Index width = 32;
  int classes = 4;
  IntensityModel source{{0.10, 0.80, 0.35, 0.55}, 1.0, 0.05, 1.0};
  IntensityModel target{{0.75, 0.20, 0.90, 0.45}, 1.0, 0.08, 1.4};
  GeometryJitter geometry{};
  int n_source = 120;
  int n_target_train = 120;
  int n_target_test = 40;
  double min_class_fraction = 0.01;  // every class must cover at least this share
  int max_retries = 64;
  std::uint64_t seed = 1;

  bool assign(const KeyValue& kv);
  std::vector<KeyValue> entries() const;
};

/// Spec-file text: key = value lines over the keys of SynthSpec::entries().
/// Errors carry the 1-based line number.
SynthSpec parse_synth_spec(const std::string& text);

/// One image with an optional one-hot label.
struct LabeledImage {
  std::string id;
  Domain domain = Domain::source;
  Tensor<double> image;                 // C x H x W
  std::optional<Tensor<double>> label;  // K x H x W one-hot

  LabelMap label_map() const;
};

struct Splits {
  std::vector<LabeledImage> source;        // labelled
  std::vector<LabeledImage> target_train;  // unlabelled
  std::vector<LabeledImage> target_test;   // labelled, evaluation only
};

/// Deterministic in spec.seed. Throws std::runtime_error if a geometry draw
/// cannot satisfy min_class_fraction within max_retries.
Splits generate(const SynthSpec& spec);

/// Draws one hard label map (exposed for tests).
LabelMap draw_geometry(const SynthSpec& spec, std::uint64_t seed);

Tensor<double> one_hot(const LabelMap& labels, int classes);
LabelMap hard_labels(const Tensor<double>& one_hot_label);

}  // namespace varda
