#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "relex/model.hpp"
#include "relex/random.hpp"

namespace relex {

enum class Activation { relu, softplus };

/// Dense layer with Glorot-uniform weights and zero bias.
inline Dense glorot_dense(std::size_t in, std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  return Dense{random_uniform({out, in}, -limit, limit, rng), Tensor({out})};
}

inline Conv2D glorot_conv(std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t padding,
                          Rng& rng) {
  const double fan = static_cast<double>((in_c + out_c) * k * k);
  const double limit = std::sqrt(6.0 / fan);
  return Conv2D{random_uniform({out_c, in_c, k, k}, -limit, limit, rng), Tensor({out_c}), padding};
}

/// input -> [dense -> act]* -> dense -> softmax.
inline Model make_mlp(const Shape& input_shape, const std::vector<std::size_t>& hidden,
                      std::size_t classes, std::uint64_t seed, Activation act = Activation::relu,
                      double beta = 1.0) {
  Rng rng(seed);
  std::vector<Layer> layers;
  std::size_t width = shape_numel(input_shape);
  for (std::size_t h : hidden) {
    layers.emplace_back(glorot_dense(width, h, rng));
    if (act == Activation::relu) {
      layers.emplace_back(ReLU{});
    } else {
      layers.emplace_back(Softplus{beta});
    }
    width = h;
  }
  layers.emplace_back(glorot_dense(width, classes, rng));
  layers.emplace_back(Softmax{});
  return Model(input_shape, std::move(layers));
}

/// input {C,H,W} -> conv(k, same padding) -> act -> maxpool -> flatten -> dense -> softmax.
inline Model make_small_cnn(const Shape& input_shape, std::size_t filters, std::size_t kernel,
                            std::size_t classes, std::uint64_t seed,
                            Activation act = Activation::relu) {
  Rng rng(seed);
  std::vector<Layer> layers;
  layers.emplace_back(glorot_conv(input_shape.at(0), filters, kernel, kernel / 2, rng));
  if (act == Activation::relu) {
    layers.emplace_back(ReLU{});
  } else {
    layers.emplace_back(Softplus{1.0});
  }
  layers.emplace_back(MaxPool2x2{});
  layers.emplace_back(Flatten{});
  const std::size_t pooled = filters * (input_shape.at(1) / 2) * (input_shape.at(2) / 2);
  layers.emplace_back(glorot_dense(pooled, classes, rng));
  layers.emplace_back(Softmax{});
  return Model(input_shape, std::move(layers));
}

}  // namespace relex
