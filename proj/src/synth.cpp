#include "varda/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace varda {

const char* domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw FormatError("unknown domain '" + s + "'", 0);
}

LabelMap LabeledImage::label_map() const {
  VARDA_REQUIRE(label.has_value(), "image " + id + " carries no label");
  return hard_labels(*label);
}

Tensor<double> one_hot(const LabelMap& labels, int classes) {
  const Index hw = labels.height * labels.width;
  std::vector<double> v(std::size_t(classes * hw), 0.0);
  for (Index i = 0; i < hw; ++i) {
    const int k = labels.labels[std::size_t(i)];
    VARDA_REQUIRE(k >= 0 && k < classes, "one_hot: label out of range");
    v[std::size_t(k * hw + i)] = 1.0;
  }
  return Tensor<double>::from({classes, labels.height, labels.width}, v);
}

LabelMap hard_labels(const Tensor<double>& y) {
  VARDA_REQUIRE(y.rank() == 3, "hard_labels expects K x H x W, got " + shape_str(y.shape()));
  const Index k = y.dim(0), h = y.dim(1), w = y.dim(2), hw = h * w;
  LabelMap out{h, w, std::vector<int>(std::size_t(hw), -1)};
  const auto& d = y.data();
  for (Index i = 0; i < hw; ++i) {
    for (Index c = 0; c < k; ++c) {
      const double v = d[c * hw + i];
      if (v == 1.0) {
        VARDA_REQUIRE(out.labels[std::size_t(i)] < 0, "label is not one-hot");
        out.labels[std::size_t(i)] = int(c);
      } else {
        VARDA_REQUIRE(v == 0.0, "label is not one-hot");
      }
    }
    VARDA_REQUIRE(out.labels[std::size_t(i)] >= 0, "label is not one-hot");
  }
  return out;
}

namespace {

struct Geometry {
  double cy, cx, outer, inner;
  double lobe_y, lobe_x, lobe_cos, lobe_sin, lobe_major, lobe_minor;
};

Geometry sample_geometry(const SynthSpec& spec, std::mt19937_64& rng) {
  const GeometryJitter& g = spec.geometry;
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  Geometry geo{};
  geo.cy = 0.5 * double(spec.height - 1) + u(-g.center_jitter, g.center_jitter);
  geo.cx = 0.5 * double(spec.width - 1) + u(-g.center_jitter, g.center_jitter);
  geo.outer = u(g.outer_radius_min, g.outer_radius_max);
  geo.inner = geo.outer - u(g.ring_min, g.ring_max);
  const double deg = g.lobe_angle_deg + u(-g.lobe_angle_jitter_deg, g.lobe_angle_jitter_deg);
  const double theta = deg * std::numbers::pi / 180.0;
  geo.lobe_cos = std::cos(theta);
  geo.lobe_sin = std::sin(theta);
  geo.lobe_major = u(g.lobe_major_min, g.lobe_major_max);
  geo.lobe_minor = u(g.lobe_minor_min, g.lobe_minor_max);
  const double reach = geo.outer + 0.5 * geo.lobe_minor;
  geo.lobe_y = geo.cy - reach * geo.lobe_sin;  // image rows grow downwards
  geo.lobe_x = geo.cx + reach * geo.lobe_cos;
  return geo;
}

LabelMap rasterize(const SynthSpec& spec, const Geometry& geo) {
  LabelMap m{spec.height, spec.width, std::vector<int>(std::size_t(spec.height * spec.width), 0)};
  for (Index y = 0; y < spec.height; ++y)
    for (Index x = 0; x < spec.width; ++x) {
      const double dy = double(y) - geo.cy, dx = double(x) - geo.cx;
      const double r = std::hypot(dy, dx);
      int k = 0;
      if (r < geo.inner) {
        k = 2;
      } else if (r < geo.outer) {
        k = 1;
      } else {
        const double ly = double(y) - geo.lobe_y, lx = double(x) - geo.lobe_x;
        const double radial = lx * geo.lobe_cos - ly * geo.lobe_sin;
        const double tangent = lx * geo.lobe_sin + ly * geo.lobe_cos;
        const double e = (radial * radial) / (geo.lobe_minor * geo.lobe_minor) +
                         (tangent * tangent) / (geo.lobe_major * geo.lobe_major);
        if (e <= 1.0) k = 3;
      }
      m.labels[std::size_t(y * spec.width + x)] = k;
    }
  return m;
}

bool covers_all_classes(const LabelMap& m, int classes, double min_fraction) {
  std::vector<Index> counts(std::size_t(classes), 0);
  for (int k : m.labels) ++counts[std::size_t(k)];
  const double need = min_fraction * double(m.labels.size());
  return std::all_of(counts.begin(), counts.end(), [&](Index c) { return double(c) >= need; });
}

LabelMap draw_valid(const SynthSpec& spec, std::mt19937_64& rng) {
  for (int attempt = 0; attempt <= spec.max_retries; ++attempt) {
    LabelMap m = rasterize(spec, sample_geometry(spec, rng));
    if (covers_all_classes(m, spec.classes, spec.min_class_fraction)) return m;
  }
  throw std::runtime_error("synthetic geometry: no draw covered every class after " +
                           std::to_string(spec.max_retries) + " retries");
}

Tensor<double> render(const SynthSpec& spec, const IntensityModel& im, const LabelMap& m,
                      std::mt19937_64& rng) {
  VARDA_REQUIRE(int(im.class_means.size()) == spec.classes,
                "intensity model needs one mean per class");
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> v(m.labels.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double s = 0.5 + im.contrast * (im.class_means[std::size_t(m.labels[i])] - 0.5);
    s += im.noise_sigma * noise(rng);
    s = std::clamp(s, 0.0, 1.0);
    v[i] = std::pow(s, im.gamma);
  }
  return Tensor<double>::from({1, spec.height, spec.width}, v);
}

std::uint64_t stream_seed(std::uint64_t base, std::uint64_t split, std::uint64_t index) {
  std::seed_seq seq{std::uint32_t(base), std::uint32_t(base >> 32), std::uint32_t(split),
                    std::uint32_t(index)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (std::uint64_t(words[0]) << 32) | words[1];
}

std::vector<LabeledImage> make_split(const SynthSpec& spec, int count, std::uint64_t split_code,
                                     Domain domain, bool keep_label, const std::string& prefix) {
  const IntensityModel& im = domain == Domain::source ? spec.source : spec.target;
  std::vector<LabeledImage> out;
  out.reserve(std::size_t(count));
  for (int i = 0; i < count; ++i) {
    std::mt19937_64 rng(stream_seed(spec.seed, split_code, std::uint64_t(i)));
    LabelMap m = draw_valid(spec, rng);
    char id[32];
    std::snprintf(id, sizeof id, "%s%04d", prefix.c_str(), i);
    LabeledImage li;
    li.id = id;
    li.domain = domain;
    li.image = render(spec, im, m, rng);
    if (keep_label) li.label = one_hot(m, spec.classes);
    out.push_back(std::move(li));
  }
  return out;
}

}  // namespace

LabelMap draw_geometry(const SynthSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return draw_valid(spec, rng);
}

Splits generate(const SynthSpec& spec) {
  VARDA_REQUIRE(spec.classes == 4, "the synthetic layout has exactly 4 classes");
  VARDA_REQUIRE(spec.height >= 8 && spec.width >= 8, "synthetic images must be at least 8x8");
  Splits s;
  s.source = make_split(spec, spec.n_source, 0, Domain::source, true, "s");
  s.target_train = make_split(spec, spec.n_target_train, 1, Domain::target, false, "t");
  s.target_test = make_split(spec, spec.n_target_test, 2, Domain::target, true, "e");
  return s;
}

namespace {

std::vector<double> parse_list(const KeyValue& kv) {
  std::vector<double> out;
  std::stringstream ss(kv.value);
  for (std::string cell; std::getline(ss, cell, ',');) {
    cell.erase(std::remove(cell.begin(), cell.end(), ' '), cell.end());
    out.push_back(parse_double(KeyValue{kv.key, cell, kv.line}));
  }
  return out;
}

std::string format_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

bool assign_intensity(IntensityModel& im, const std::string& field, const KeyValue& kv) {
  if (field == "class_means") im.class_means = parse_list(kv);
  else if (field == "contrast") im.contrast = parse_double(kv);
  else if (field == "noise_sigma") im.noise_sigma = parse_double(kv);
  else if (field == "gamma") im.gamma = parse_double(kv);
  else return false;
  return true;
}

void intensity_entries(std::vector<KeyValue>& out, const std::string& p, const IntensityModel& im) {
  out.push_back({p + ".class_means", format_list(im.class_means), 0});
  out.push_back({p + ".contrast", format_double(im.contrast), 0});
  out.push_back({p + ".noise_sigma", format_double(im.noise_sigma), 0});
  out.push_back({p + ".gamma", format_double(im.gamma), 0});
}

std::vector<std::pair<const char*, double GeometryJitter::*>> geometry_fields() {
  return {{"center_jitter", &GeometryJitter::center_jitter},
          {"outer_radius_min", &GeometryJitter::outer_radius_min},
          {"outer_radius_max", &GeometryJitter::outer_radius_max},
          {"ring_min", &GeometryJitter::ring_min},
          {"ring_max", &GeometryJitter::ring_max},
          {"lobe_angle_deg", &GeometryJitter::lobe_angle_deg},
          {"lobe_angle_jitter_deg", &GeometryJitter::lobe_angle_jitter_deg},
          {"lobe_major_min", &GeometryJitter::lobe_major_min},
          {"lobe_major_max", &GeometryJitter::lobe_major_max},
          {"lobe_minor_min", &GeometryJitter::lobe_minor_min},
          {"lobe_minor_max", &GeometryJitter::lobe_minor_max}};
}

}  // namespace

bool SynthSpec::assign(const KeyValue& kv) {
  const std::string& k = kv.key;
  auto positive = [&](std::int64_t v) {
    if (v < 0) throw ConfigError(k + ": must be nonnegative", kv.line);
    return v;
  };
  if (k == "height") height = Index(positive(parse_int(kv)));
  else if (k == "width") width = Index(positive(parse_int(kv)));
  else if (k == "classes") classes = int(parse_int(kv));
  else if (k == "n_source") n_source = int(positive(parse_int(kv)));
  else if (k == "n_target_train") n_target_train = int(positive(parse_int(kv)));
  else if (k == "n_target_test") n_target_test = int(positive(parse_int(kv)));
  else if (k == "min_class_fraction") min_class_fraction = parse_double(kv);
  else if (k == "max_retries") max_retries = int(positive(parse_int(kv)));
  else if (k == "seed") seed = parse_uint(kv);
  else if (k.rfind("source.", 0) == 0) return assign_intensity(source, k.substr(7), kv);
  else if (k.rfind("target.", 0) == 0) return assign_intensity(target, k.substr(7), kv);
  else if (k.rfind("geometry.", 0) == 0) {
    for (const auto& [name, field] : geometry_fields())
      if (k.substr(9) == name) {
        geometry.*field = parse_double(kv);
        return true;
      }
    return false;
  } else {
    return false;
  }
  return true;
}

std::vector<KeyValue> SynthSpec::entries() const {
  auto i = [](auto v) { return std::to_string(v); };
  std::vector<KeyValue> out{{"height", i(height), 0},
                            {"width", i(width), 0},
                            {"classes", i(classes), 0},
                            {"n_source", i(n_source), 0},
                            {"n_target_train", i(n_target_train), 0},
                            {"n_target_test", i(n_target_test), 0},
                            {"min_class_fraction", format_double(min_class_fraction), 0},
                            {"max_retries", i(max_retries), 0},
                            {"seed", i(seed), 0}};
  intensity_entries(out, "source", source);
  intensity_entries(out, "target", target);
  for (const auto& [name, field] : geometry_fields())
    out.push_back({std::string("geometry.") + name, format_double(geometry.*field), 0});
  return out;
}

SynthSpec parse_synth_spec(const std::string& text) {
  SynthSpec s;
  const auto kvs = parse_key_values(text);
  apply_key_values(kvs, [&](const KeyValue& kv) { return s.assign(kv); });
  for (const auto& kv : kvs)
    if ((kv.key == "source.class_means" || kv.key == "target.class_means") &&
        int((kv.key[0] == 's' ? s.source : s.target).class_means.size()) != s.classes)
      throw ConfigError(kv.key + ": need one mean per class", kv.line);
  return s;
}

}  // namespace varda
