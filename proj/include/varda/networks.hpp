#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "varda/config.hpp"
#include "varda/gaussian.hpp"
#include "varda/metrics.hpp"
#include "varda/nn_ops.hpp"
#include "varda/serialize.hpp"
#include "varda/synth.hpp"

namespace varda {

enum class Role : std::uint8_t {
  encoder_S = 0,
  encoder_T = 1,
  decoder_S = 2,
  decoder_T = 3,
  segmentor_shared = 4,
};

const char* role_name(Role r);

enum class Conditioning { with_label, without_label };

/// Shapes and sizes of the three networks.
///
/// The encoder halves the resolution three times, so the latent grid is
/// (H/8) x (W/8) with `latent_channels` maps and n = channels * grid cells.
struct NetConfig {
  Index height = 32;
  Index width = 32;
  Index channels = 1;
  int classes = 4;
  Index latent_channels = 4;
  Index enc_width1 = 8, enc_width2 = 16, enc_width3 = 32;
  Index segmentor_width = 16;
  int decoder_depth = 3;  // 0 removes the decoder and the reconstruction terms
  Index decoder_width = 8;
  Conditioning conditioning = Conditioning::with_label;
  std::uint64_t init_seed = 1;

  Index grid_h() const { return height / 8; }
  Index grid_w() const { return width / 8; }
  Index latent_dim() const { return latent_channels * grid_h() * grid_w(); }

  void validate() const;
  bool assign(const KeyValue& kv);        // false for unknown keys
  std::vector<KeyValue> entries() const;  // every field, in a fixed order
  std::string to_text() const;
  static NetConfig from_text(const std::string& text);
};

/// Human-readable differences "key: a vs b", empty when the configs agree.
std::vector<std::string> config_diff(const NetConfig& a, const NetConfig& b);

/// Ordered named trainable tensors with a role tag each.
template <typename Scalar>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Role role;
    Tensor<Scalar> value;
  };

  Tensor<Scalar>& add(std::string name, Role role, Tensor<Scalar> value) {
    VARDA_REQUIRE(!index_.count(name), "duplicate parameter " + name);
    value.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.push_back({std::move(name), role, std::move(value)});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor<Scalar>& get(const std::string& name) const {
    const auto it = index_.find(name);
    VARDA_REQUIRE(it != index_.end(), "no parameter named " + name);
    return entries_[it->second].value;
  }
  Tensor<Scalar>& get(const std::string& name) {
    return const_cast<Tensor<Scalar>&>(std::as_const(*this).get(name));
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  Index numel() const {
    Index n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }
  void zero_grad() {
    for (auto& e : entries_) e.value.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// z = u + sqrt(lambda) * eps for eps of shape B x L x n; returns B x L x n.
/// Differentiable in the means and log-variances; eps is treated as data.
template <typename Scalar>
Tensor<Scalar> reparameterize(const DiagGaussianBatch<Scalar>& g, const Tensor<Scalar>& eps) {
  const Index b = g.size(), n = g.dim();
  VARDA_REQUIRE(eps.rank() == 3 && eps.dim(0) == b && eps.dim(2) == n,
                "reparameterize: noise must be " + std::to_string(b) + " x L x " + std::to_string(n) +
                    ", got " + shape_str(eps.shape()));
  const Index l = eps.dim(1);
  const Shape full{b, l, n};
  const Tensor<Scalar> u = expand(reshape(g.means(), {b, 1, n}), full);
  const Tensor<Scalar> sd = expand(reshape(exp(scale(g.log_variances(), Scalar(0.5))), {b, 1, n}), full);
  return u + sd * eps.detach();
}

template <typename Scalar>
struct Prediction {
  Tensor<Scalar> probs;         // B x K x H x W
  std::vector<LabelMap> labels;  // argmax, ties to the lowest class
};

/// Encoders for both domains, decoders for both domains, and the shared
/// segmentor, built from one NetConfig.
template <typename Scalar>
class VardaNet {
 public:
  using T = Tensor<Scalar>;

  explicit VardaNet(NetConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.init_seed);
    build(&rng);
  }

  /// Takes parameters from `params`; every expected name must be present
  /// with the expected shape and role.
  VardaNet(NetConfig cfg, const ParameterSet<Scalar>& params) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build(nullptr);
    for (auto& e : params_.entries()) {
      VARDA_REQUIRE(params.contains(e.name), "checkpoint lacks parameter " + e.name);
      const T& src = params.get(e.name);
      VARDA_REQUIRE(src.shape() == e.value.shape(), "parameter " + e.name + " has shape " +
                                                        shape_str(src.shape()) + ", expected " +
                                                        shape_str(e.value.shape()));
      e.value.mutable_data() = src.data();
    }
    for (const auto& e : params.entries())
      VARDA_REQUIRE(params_.contains(e.name), "unexpected parameter " + e.name);
  }

  const NetConfig& config() const { return cfg_; }
  ParameterSet<Scalar>& params() { return params_; }
  const ParameterSet<Scalar>& params() const { return params_; }
  bool has_decoder() const { return cfg_.decoder_depth > 0; }

  /// x: B x C x H x W -> B Gaussians over n latent coordinates.
  DiagGaussianBatch<Scalar> encode(Domain d, const T& x) const {
    check_image(x, "encode");
    const std::string p = d == Domain::source ? "enc_S." : "enc_T.";
    T h = relu(conv(p + "conv1", x, 2, 1));
    h = relu(conv(p + "conv2", h, 2, 1));
    h = relu(conv(p + "conv3", h, 2, 1));
    const Index b = x.dim(0), n = cfg_.latent_dim();
    T mu = reshape(conv(p + "mean", h, 1, 0), {b, n});
    T lv = reshape(clamp(conv(p + "logvar", h, 1, 0), Scalar(-10), Scalar(10)), {b, n});
    return {mu, lv};
  }

  /// z: B x n -> per-pixel class logits, B x K x H x W.
  T segment_logits(const T& z) const {
    VARDA_REQUIRE(z.rank() == 2 && z.dim(1) == cfg_.latent_dim(),
                  "segmentor: latent must be B x " + std::to_string(cfg_.latent_dim()) + ", got " +
                      shape_str(z.shape()));
    T h = reshape(z, {z.dim(0), cfg_.latent_channels, cfg_.grid_h(), cfg_.grid_w()});
    h = relu(conv("seg.conv1", upsample_nearest(h, 2), 1, 1));
    h = relu(conv("seg.conv2", upsample_nearest(h, 2), 1, 1));
    return conv("seg.out", upsample_nearest(h, 2), 1, 0);
  }

  T segment(const T& z) const { return softmax(segment_logits(z), 1); }

  /// Reconstruction from z (B x n) and a label map (B x K x H x W, one-hot or
  /// soft). The label is average-pooled to the latent grid; it is ignored
  /// when the config is label-free.
  T decode(Domain d, const T& z, const T& label) const {
    VARDA_REQUIRE(has_decoder(), "decoder is disabled (decoder_depth = 0)");
    VARDA_REQUIRE(z.rank() == 2 && z.dim(1) == cfg_.latent_dim(), "decoder: bad latent shape");
    const Index b = z.dim(0);
    T h = reshape(z, {b, cfg_.latent_channels, cfg_.grid_h(), cfg_.grid_w()});
    if (cfg_.conditioning == Conditioning::with_label) {
      VARDA_REQUIRE(label.defined() && label.shape() == Shape({b, Index(cfg_.classes), cfg_.height,
                                                               cfg_.width}),
                    "decoder: label must be B x K x H x W");
      h = concat<Scalar>({h, avg_pool(label, 8)}, 1);
    }
    const std::string p = d == Domain::source ? "dec_S." : "dec_T.";
    const int layers = cfg_.decoder_depth;
    const int inside = std::min(layers, kUpsamplings);
    if (kUpsamplings > inside) h = upsample_nearest(h, Index(1) << (kUpsamplings - inside));
    for (int i = 0; i < layers; ++i) {
      if (i >= layers - inside) h = upsample_nearest(h, 2);
      h = conv(p + "conv" + std::to_string(i + 1), h, 1, 1);
      if (i + 1 < layers) h = relu(h);
    }
    return h;
  }

  /// Test-time path: posterior mean into the segmentor, no sampling.
  Prediction<Scalar> predict(Domain d, const T& x) const {
    NoGradGuard no_grad;
    const auto g = encode(d, x);
    Prediction<Scalar> out;
    out.probs = segment(g.means());
    const Index b = x.dim(0), hw = cfg_.height * cfg_.width;
    const std::vector<Index> hard = argmax(out.probs, 1);
    for (Index i = 0; i < b; ++i) {
      LabelMap m{cfg_.height, cfg_.width, std::vector<int>(std::size_t(hw))};
      for (Index p = 0; p < hw; ++p) m.labels[std::size_t(p)] = int(hard[std::size_t(i * hw + p)]);
      out.labels.push_back(std::move(m));
    }
    return out;
  }

 private:
  static constexpr int kUpsamplings = 3;

  void check_image(const T& x, const char* what) const {
    VARDA_REQUIRE(x.rank() == 4 && x.dim(1) == cfg_.channels && x.dim(2) == cfg_.height &&
                      x.dim(3) == cfg_.width,
                  std::string(what) + ": image batch must be B x " + std::to_string(cfg_.channels) +
                      " x " + std::to_string(cfg_.height) + " x " + std::to_string(cfg_.width) +
                      ", got " + shape_str(x.shape()));
  }

  T conv(const std::string& name, const T& x, Index stride, Index pad) const {
    return conv2d(x, params_.get(name + ".w"), params_.get(name + ".b"), stride, pad);
  }

  // He-uniform weights (bound sqrt(6 / fan_in)), zero biases. With no rng
  // the tensors are zero-filled placeholders.
  void add_conv(std::mt19937_64* rng, const std::string& name, Role role, Index out, Index in, Index k) {
    const Index fan_in = in * k * k;
    ArrayX<Scalar> w = ArrayX<Scalar>::Zero(out * fan_in);
    if (rng) {
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      const double bound = std::sqrt(6.0 / double(fan_in));
      for (Index i = 0; i < w.size(); ++i) w[i] = Scalar(bound * u(*rng));
    }
    params_.add(name + ".w", role, T({out, in, k, k}, std::move(w)));
    params_.add(name + ".b", role, T::zeros({out}));
  }

  void build(std::mt19937_64* rng) {
    const NetConfig& c = cfg_;
    for (Domain d : {Domain::source, Domain::target}) {
      const bool s = d == Domain::source;
      const std::string p = s ? "enc_S." : "enc_T.";
      const Role r = s ? Role::encoder_S : Role::encoder_T;
      add_conv(rng, p + "conv1", r, c.enc_width1, c.channels, 3);
      add_conv(rng, p + "conv2", r, c.enc_width2, c.enc_width1, 3);
      add_conv(rng, p + "conv3", r, c.enc_width3, c.enc_width2, 3);
      add_conv(rng, p + "mean", r, c.latent_channels, c.enc_width3, 1);
      add_conv(rng, p + "logvar", r, c.latent_channels, c.enc_width3, 1);
    }
    add_conv(rng, "seg.conv1", Role::segmentor_shared, c.segmentor_width, c.latent_channels, 3);
    add_conv(rng, "seg.conv2", Role::segmentor_shared, c.segmentor_width, c.segmentor_width, 3);
    add_conv(rng, "seg.out", Role::segmentor_shared, c.classes, c.segmentor_width, 1);
    for (Domain d : {Domain::source, Domain::target}) {
      const bool s = d == Domain::source;
      const std::string p = s ? "dec_S." : "dec_T.";
      const Role r = s ? Role::decoder_S : Role::decoder_T;
      Index in = c.latent_channels + (c.conditioning == Conditioning::with_label ? c.classes : 0);
      for (int i = 0; i < c.decoder_depth; ++i) {
        const Index out = i + 1 == c.decoder_depth ? c.channels : c.decoder_width;
        add_conv(rng, p + "conv" + std::to_string(i + 1), r, out, in, 3);
        in = out;
      }
    }
  }

  NetConfig cfg_;
  ParameterSet<Scalar> params_;
};

// ---- checkpoints ---------------------------------------------------------
//
//   4 bytes  magic "VCKP"
//   u32 LE   format version (1)
//   u32 LE   length, then NetConfig as key=value text
//   u32 LE   length, then free-form key=value state text (may be empty)
//   u32 LE   record count, then per record:
//              u16 LE name length, name bytes, u8 role, one VTEN tensor
//   Role 255 marks auxiliary tensors (optimizer moments), not parameters.

constexpr std::uint8_t kAuxRole = 255;

template <typename Scalar>
struct Checkpoint {
  NetConfig config;
  ParameterSet<Scalar> params;
  std::string state;
  std::vector<std::pair<std::string, Tensor<Scalar>>> aux;
};

namespace detail {

inline void write_text(std::ostream& out, const std::string& s) {
  io::write_pod(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), std::streamsize(s.size()));
}

inline std::string read_text(io::Reader& in, const char* what) {
  const auto n = in.pod<std::uint32_t>(what);
  std::string s(n, '\0');
  in.read(s.data(), n, what);
  return s;
}

inline void write_name(std::ostream& out, const std::string& name, std::uint8_t role) {
  VARDA_REQUIRE(name.size() < 65536, "checkpoint: name too long");
  io::write_pod(out, static_cast<std::uint16_t>(name.size()));
  out.write(name.data(), std::streamsize(name.size()));
  io::write_pod(out, role);
}

}  // namespace detail

template <typename Scalar>
void write_checkpoint(std::ostream& out, const NetConfig& cfg, const ParameterSet<Scalar>& params,
                      const std::string& state = {},
                      const std::vector<std::pair<std::string, Tensor<Scalar>>>& aux = {}) {
  out.write("VCKP", 4);
  io::write_pod(out, std::uint32_t{1});
  detail::write_text(out, cfg.to_text());
  detail::write_text(out, state);
  io::write_pod(out, static_cast<std::uint32_t>(params.size() + aux.size()));
  for (const auto& e : params.entries()) {
    detail::write_name(out, e.name, static_cast<std::uint8_t>(e.role));
    write_tensor(out, e.value);
  }
  for (const auto& [name, t] : aux) {
    detail::write_name(out, name, kAuxRole);
    write_tensor(out, t);
  }
}

template <typename Scalar>
Checkpoint<Scalar> read_checkpoint(std::istream& is) {
  io::Reader in(is);
  char magic[4];
  in.read(magic, 4, "checkpoint magic");
  if (std::memcmp(magic, "VCKP", 4) != 0) throw FormatError("bad checkpoint magic", 0);
  const auto version = in.pod<std::uint32_t>("checkpoint version");
  if (version != 1) throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  Checkpoint<Scalar> ck;
  const std::uint64_t cfg_at = in.offset();
  try {
    ck.config = NetConfig::from_text(detail::read_text(in, "config"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what(), cfg_at);
  }
  ck.state = detail::read_text(in, "state");
  const auto count = in.pod<std::uint32_t>("record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = in.pod<std::uint16_t>("name length");
    std::string name(len, '\0');
    in.read(name.data(), len, "name");
    const std::uint64_t role_at = in.offset();
    const auto role = in.pod<std::uint8_t>("role");
    Tensor<Scalar> t = read_tensor<Scalar>(in);
    if (role == kAuxRole) {
      ck.aux.emplace_back(std::move(name), std::move(t));
    } else {
      if (role > static_cast<std::uint8_t>(Role::segmentor_shared))
        throw FormatError("unknown role tag " + std::to_string(role), role_at);
      ck.params.add(std::move(name), Role(role), std::move(t));
    }
  }
  return ck;
}

}  // namespace varda
