#pragma once

#include <random>

#include "varda/networks.hpp"
#include "varda/synth.hpp"
#include "varda/tensor.hpp"

namespace varda::testing {

inline Tensor<double> random_tensor(std::mt19937_64& rng, const Shape& shape, double lo = -1.0,
                                    double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ArrayX<double> data(shape_numel(shape));
  for (Index i = 0; i < data.size(); ++i) data[i] = u(rng);
  return Tensor<double>(shape, std::move(data));
}

// 8x8 images, n = 8 latent coordinates on a 1x1 grid, narrow layers.
inline NetConfig toy_config(int decoder_depth = 3) {
  NetConfig c;
  c.height = c.width = 8;
  c.latent_channels = 8;
  c.enc_width1 = 4;
  c.enc_width2 = 6;
  c.enc_width3 = 8;
  c.segmentor_width = 6;
  c.decoder_depth = decoder_depth;
  c.decoder_width = 4;
  return c;
}

// Random one-hot labels, B x K x H x W.
inline Tensor<double> random_one_hot(std::mt19937_64& rng, Index b, int k, Index h, Index w) {
  std::uniform_int_distribution<int> u(0, k - 1);
  ArrayX<double> d = ArrayX<double>::Zero(b * k * h * w);
  for (Index i = 0; i < b; ++i)
    for (Index p = 0; p < h * w; ++p) d[(i * k + u(rng)) * h * w + p] = 1.0;
  return Tensor<double>({b, Index(k), h, w}, std::move(d));
}

inline Tensor<double> random_normal(std::mt19937_64& rng, const Shape& shape) {
  std::normal_distribution<double> n(0.0, 1.0);
  ArrayX<double> d(shape_numel(shape));
  for (Index i = 0; i < d.size(); ++i) d[i] = n(rng);
  return Tensor<double>(shape, std::move(d));
}

template <typename Scalar>
void zero_all(VardaNet<Scalar>& net) {
  for (auto& e : net.params().entries()) e.value.mutable_data().setZero();
}

// Gradient checks need a generic point: zero biases put ReLU inputs exactly
// on the kink wherever a patch sees only dead units.
template <typename Scalar>
void randomize_biases(VardaNet<Scalar>& net, std::mt19937_64& rng, double scale = 0.1) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& e : net.params().entries())
    if (e.name.size() > 2 && e.name.compare(e.name.size() - 2, 2, ".b") == 0)
      for (Index i = 0; i < e.value.numel(); ++i) e.value.mutable_data()[i] = Scalar(u(rng));
}

}  // namespace varda::testing
