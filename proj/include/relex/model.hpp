#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "relex/errors.hpp"
#include "relex/tensor.hpp"

namespace relex {

/// Floor applied to probabilities before taking logs.
inline constexpr double kProbabilityFloor = 1e-12;

/// Fully connected layer. `weight` is {out, in}, `bias` is {out}. Accepts any
/// input whose element count equals `in` and produces a 1-D tensor.
struct Dense {
  Tensor weight;
  Tensor bias;
};

/// 2-D convolution, stride 1, zero padding. `weight` is {out_c, in_c, k, k},
/// `bias` is {out_c}; input and output are {channels, height, width}.
struct Conv2D {
  Tensor weight;
  Tensor bias;
  std::size_t padding = 0;
};

struct ReLU {};

/// softplus_beta(x) = log(1 + exp(beta x)) / beta.
struct Softplus {
  double beta = 1.0;
};

/// Non-overlapping 2x2 max pooling over {C, H, W}; odd trailing rows/cols are dropped.
struct MaxPool2x2 {};

struct Flatten {};

/// Final normalization. Only legal as the last layer.
struct Softmax {};

using Layer = std::variant<Dense, Conv2D, ReLU, Softplus, MaxPool2x2, Flatten, Softmax>;

inline const char* layer_kind(const Layer& layer) {
  constexpr const char* names[] = {"dense", "conv2d", "relu", "softplus", "maxpool2x2", "flatten",
                                   "softmax"};
  return names[layer.index()];
}

/// Gradients of a layer's parameters; empty tensors for parameter-free layers.
struct LayerGrad {
  Tensor weight;
  Tensor bias;
};

namespace detail {

inline double softplus(double x, double beta) {
  const double z = beta * x;
  if (z > 30.0) return x;
  if (z < -30.0) return std::exp(z) / beta;
  return std::log1p(std::exp(z)) / beta;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline Tensor softmax(const Tensor& logits) {
  Tensor out = logits;
  const double mx = max_value(logits);
  double total = 0.0;
  for (auto& v : out) {
    v = std::exp(v - mx);
    total += v;
  }
  for (auto& v : out) v /= total;
  return out;
}

inline Shape output_shape(const Layer& layer, const Shape& in) {
  return std::visit(
      [&](const auto& l) -> Shape {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, Dense>) {
          if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.numel() != l.weight.shape()[0]) {
            throw ShapeError("dense: weight must be {out,in} and bias {out}, got " +
                             shape_string(l.weight.shape()) + " / " + shape_string(l.bias.shape()));
          }
          if (shape_numel(in) != l.weight.shape()[1]) {
            throw ShapeError("dense: expects " + std::to_string(l.weight.shape()[1]) +
                             " inputs, got shape " + shape_string(in));
          }
          return {l.weight.shape()[0]};
        } else if constexpr (std::is_same_v<L, Conv2D>) {
          const auto& w = l.weight.shape();
          if (w.size() != 4 || w[2] != w[3] || l.bias.rank() != 1 || l.bias.numel() != w[0]) {
            throw ShapeError("conv2d: weight must be {out,in,k,k} with bias {out}, got " +
                             shape_string(w));
          }
          if (in.size() != 3 || in[0] != w[1]) {
            throw ShapeError("conv2d: expects {" + std::to_string(w[1]) + ",H,W} input, got " +
                             shape_string(in));
          }
          const std::size_t k = w[2];
          if (in[1] + 2 * l.padding < k || in[2] + 2 * l.padding < k) {
            throw ShapeError("conv2d: kernel larger than padded input " + shape_string(in));
          }
          return {w[0], in[1] + 2 * l.padding - k + 1, in[2] + 2 * l.padding - k + 1};
        } else if constexpr (std::is_same_v<L, MaxPool2x2>) {
          if (in.size() != 3 || in[1] < 2 || in[2] < 2) {
            throw ShapeError("maxpool2x2: expects {C,H,W} with H,W >= 2, got " + shape_string(in));
          }
          return {in[0], in[1] / 2, in[2] / 2};
        } else if constexpr (std::is_same_v<L, Flatten>) {
          return {shape_numel(in)};
        } else if constexpr (std::is_same_v<L, Softplus>) {
          if (!(l.beta > 0.0)) throw ShapeError("softplus: beta must be positive");
          return in;
        } else if constexpr (std::is_same_v<L, Softmax>) {
          if (in.size() != 1) throw ShapeError("softmax: expects a 1-D input, got " + shape_string(in));
          return in;
        } else {
          return in;
        }
      },
      layer);
}

inline Tensor apply_layer(const Layer& layer, const Tensor& x) {
  return std::visit(
      [&](const auto& l) -> Tensor {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, Dense>) {
          const std::size_t out = l.weight.shape()[0], in = l.weight.shape()[1];
          Tensor y = l.bias;
          const double* w = l.weight.data().data();
          for (std::size_t j = 0; j < out; ++j) {
            double s = 0.0;
            const double* row = w + j * in;
            for (std::size_t i = 0; i < in; ++i) s += row[i] * x[i];
            y[j] += s;
          }
          return y;
        } else if constexpr (std::is_same_v<L, Conv2D>) {
          const auto& ws = l.weight.shape();
          const std::size_t O = ws[0], C = ws[1], K = ws[2];
          const std::size_t H = x.shape()[1], W = x.shape()[2];
          const std::size_t Ho = H + 2 * l.padding - K + 1, Wo = W + 2 * l.padding - K + 1;
          Tensor y({O, Ho, Wo});
          const long p = static_cast<long>(l.padding);
          for (std::size_t o = 0; o < O; ++o)
            for (std::size_t r = 0; r < Ho; ++r)
              for (std::size_t q = 0; q < Wo; ++q) {
                double s = l.bias[o];
                for (std::size_t c = 0; c < C; ++c)
                  for (std::size_t kr = 0; kr < K; ++kr) {
                    const long ir = static_cast<long>(r + kr) - p;
                    if (ir < 0 || ir >= static_cast<long>(H)) continue;
                    for (std::size_t kq = 0; kq < K; ++kq) {
                      const long iq = static_cast<long>(q + kq) - p;
                      if (iq < 0 || iq >= static_cast<long>(W)) continue;
                      s += l.weight[((o * C + c) * K + kr) * K + kq] *
                           x[(c * H + static_cast<std::size_t>(ir)) * W + static_cast<std::size_t>(iq)];
                    }
                  }
                y[(o * Ho + r) * Wo + q] = s;
              }
          return y;
        } else if constexpr (std::is_same_v<L, ReLU>) {
          return map(x, [](double v) { return v > 0.0 ? v : 0.0; });
        } else if constexpr (std::is_same_v<L, Softplus>) {
          return map(x, [b = l.beta](double v) { return softplus(v, b); });
        } else if constexpr (std::is_same_v<L, MaxPool2x2>) {
          const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
          const std::size_t Ho = H / 2, Wo = W / 2;
          Tensor y({C, Ho, Wo});
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t r = 0; r < Ho; ++r)
              for (std::size_t q = 0; q < Wo; ++q) {
                double m = -std::numeric_limits<double>::infinity();
                for (std::size_t dr = 0; dr < 2; ++dr)
                  for (std::size_t dq = 0; dq < 2; ++dq)
                    m = std::max(m, x[(c * H + 2 * r + dr) * W + 2 * q + dq]);
                y[(c * Ho + r) * Wo + q] = m;
              }
          return y;
        } else if constexpr (std::is_same_v<L, Flatten>) {
          return x.reshaped({x.numel()});
        } else {
          return softmax(x);
        }
      },
      layer);
}

/// Reverse-mode step through one layer. Fills `param_grad` when non-null and
/// the layer has parameters.
inline Tensor backprop(const Layer& layer, const Tensor& x, const Tensor& y, const Tensor& gy,
                       LayerGrad* param_grad) {
  return std::visit(
      [&](const auto& l) -> Tensor {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, Dense>) {
          const std::size_t out = l.weight.shape()[0], in = l.weight.shape()[1];
          Tensor gx(x.shape());
          const double* w = l.weight.data().data();
          for (std::size_t j = 0; j < out; ++j) {
            const double g = gy[j];
            if (g == 0.0) continue;
            const double* row = w + j * in;
            for (std::size_t i = 0; i < in; ++i) gx[i] += row[i] * g;
          }
          if (param_grad) {
            param_grad->weight = Tensor(l.weight.shape());
            for (std::size_t j = 0; j < out; ++j)
              for (std::size_t i = 0; i < in; ++i) param_grad->weight[j * in + i] = gy[j] * x[i];
            param_grad->bias = gy;
          }
          return gx;
        } else if constexpr (std::is_same_v<L, Conv2D>) {
          const auto& ws = l.weight.shape();
          const std::size_t O = ws[0], C = ws[1], K = ws[2];
          const std::size_t H = x.shape()[1], W = x.shape()[2];
          const std::size_t Ho = y.shape()[1], Wo = y.shape()[2];
          const long p = static_cast<long>(l.padding);
          Tensor gx(x.shape());
          Tensor gw, gb;
          if (param_grad) {
            gw = Tensor(l.weight.shape());
            gb = Tensor(l.bias.shape());
          }
          for (std::size_t o = 0; o < O; ++o)
            for (std::size_t r = 0; r < Ho; ++r)
              for (std::size_t q = 0; q < Wo; ++q) {
                const double g = gy[(o * Ho + r) * Wo + q];
                if (param_grad) gb[o] += g;
                if (g == 0.0) continue;
                for (std::size_t c = 0; c < C; ++c)
                  for (std::size_t kr = 0; kr < K; ++kr) {
                    const long ir = static_cast<long>(r + kr) - p;
                    if (ir < 0 || ir >= static_cast<long>(H)) continue;
                    for (std::size_t kq = 0; kq < K; ++kq) {
                      const long iq = static_cast<long>(q + kq) - p;
                      if (iq < 0 || iq >= static_cast<long>(W)) continue;
                      const std::size_t xi =
                          (c * H + static_cast<std::size_t>(ir)) * W + static_cast<std::size_t>(iq);
                      const std::size_t wi = ((o * C + c) * K + kr) * K + kq;
                      gx[xi] += l.weight[wi] * g;
                      if (param_grad) gw[wi] += x[xi] * g;
                    }
                  }
              }
          if (param_grad) {
            param_grad->weight = std::move(gw);
            param_grad->bias = std::move(gb);
          }
          return gx;
        } else if constexpr (std::is_same_v<L, ReLU>) {
          Tensor gx = gy;
          for (std::size_t i = 0; i < gx.numel(); ++i)
            if (!(x[i] > 0.0)) gx[i] = 0.0;
          return gx;
        } else if constexpr (std::is_same_v<L, Softplus>) {
          Tensor gx = gy;
          for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] *= sigmoid(l.beta * x[i]);
          return gx;
        } else if constexpr (std::is_same_v<L, MaxPool2x2>) {
          const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
          const std::size_t Ho = H / 2, Wo = W / 2;
          Tensor gx(x.shape());
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t r = 0; r < Ho; ++r)
              for (std::size_t q = 0; q < Wo; ++q) {
                std::size_t best = (c * H + 2 * r) * W + 2 * q;
                for (std::size_t dr = 0; dr < 2; ++dr)
                  for (std::size_t dq = 0; dq < 2; ++dq) {
                    const std::size_t idx = (c * H + 2 * r + dr) * W + 2 * q + dq;
                    if (x[idx] > x[best]) best = idx;
                  }
                gx[best] += gy[(c * Ho + r) * Wo + q];
              }
          return gx;
        } else if constexpr (std::is_same_v<L, Flatten>) {
          return gy.reshaped(x.shape());
        } else {
          const double inner = dot(gy, y);
          Tensor gx = y;
          for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] *= gy[i] - inner;
          return gx;
        }
      },
      layer);
}

/// Activations at every layer boundary; `activations[0]` is the input.
inline std::vector<Tensor> forward_trace(std::span<const Layer> layers, const Tensor& x) {
  std::vector<Tensor> acts;
  acts.reserve(layers.size() + 1);
  acts.push_back(x);
  for (const auto& layer : layers) acts.push_back(apply_layer(layer, acts.back()));
  return acts;
}

}  // namespace detail

/// Validated feed-forward classifier ending in a softmax.
class Model {
public:
  Model(Shape input_shape, std::vector<Layer> layers)
      : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
    if (input_shape_.empty() || shape_numel(input_shape_) == 0) {
      throw ShapeError("model input shape must be non-empty with positive extents");
    }
    if (layers_.empty() || !std::holds_alternative<Softmax>(layers_.back())) {
      throw ShapeError("model must end with a softmax layer");
    }
    Shape s = input_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (std::holds_alternative<Softmax>(layers_[i]) && i + 1 != layers_.size()) {
        throw ShapeError("softmax may only appear as the final layer (found at " +
                         std::to_string(i) + ")");
      }
      try {
        s = detail::output_shape(layers_[i], s);
      } catch (const ShapeError& e) {
        throw ShapeError("layer " + std::to_string(i) + " (" + layer_kind(layers_[i]) +
                         "): " + e.what());
      }
    }
    class_count_ = s[0];
  }

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t class_count() const noexcept { return class_count_; }
  std::size_t input_size() const noexcept { return shape_numel(input_shape_); }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  /// Layers preceding the final softmax.
  std::span<const Layer> body() const noexcept {
    return std::span<const Layer>(layers_).first(layers_.size() - 1);
  }

  void check_input(const Tensor& x) const {
    if (x.shape() != input_shape_) {
      throw ShapeError("model expects input of shape " + shape_string(input_shape_) + ", got " +
                       shape_string(x.shape()));
    }
    require_finite(x, "model input");
  }

  Tensor logits(const Tensor& x) const {
    check_input(x);
    Tensor h = x;
    for (const auto& layer : body()) h = detail::apply_layer(layer, h);
    return h;
  }

  /// Same layers with every ReLU replaced by softplus of the given sharpness.
  Model with_softplus(double beta) const {
    std::vector<Layer> ls = layers_;
    for (auto& l : ls)
      if (std::holds_alternative<ReLU>(l)) l = Softplus{beta};
    return Model(input_shape_, std::move(ls));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
      if (auto* d = std::get_if<Dense>(&l)) n += d->weight.numel() + d->bias.numel();
      if (auto* c = std::get_if<Conv2D>(&l)) n += c->weight.numel() + c->bias.numel();
    }
    return n;
  }

private:
  Shape input_shape_;
  std::vector<Layer> layers_;
  std::size_t class_count_ = 0;
};

/// Strongly typed class index.
struct ClassId {
  std::size_t index = 0;
  friend bool operator==(ClassId, ClassId) = default;
};

inline void check_class(const Model& model, ClassId c) {
  if (c.index >= model.class_count()) {
    throw std::out_of_range("class " + std::to_string(c.index) + " out of range for " +
                            std::to_string(model.class_count()) + " classes");
  }
}

/// Class probabilities f(x).
inline Tensor forward(const Model& model, const Tensor& input) {
  return detail::softmax(model.logits(input));
}

inline ClassId predict(const Model& model, const Tensor& input) {
  return ClassId{argmax(model.logits(input))};
}

/// -log f_target(input), with the probability floored at kProbabilityFloor.
inline double class_log_loss(const Model& model, const Tensor& input, ClassId target) {
  check_class(model, target);
  const Tensor p = forward(model, input);
  return -std::log(std::max(p[target.index], kProbabilityFloor));
}

struct LossEvaluation {
  double loss = 0.0;         ///< -log max(f_target, floor)
  double probability = 0.0;  ///< f_target
  Tensor probabilities;
  Tensor gradient;  ///< d(-log f_target)/d input, same shape as the input
};

/// One forward and one reverse pass. The gradient is that of the unfloored
/// -log softmax, computed from logits (p - onehot) so it stays exact when f
/// underflows.
inline LossEvaluation evaluate_log_loss(const Model& model, const Tensor& input, ClassId target) {
  check_class(model, target);
  model.check_input(input);
  const auto body = model.body();
  auto acts = detail::forward_trace(body, input);
  LossEvaluation ev;
  ev.probabilities = detail::softmax(acts.back());
  ev.probability = ev.probabilities[target.index];
  ev.loss = -std::log(std::max(ev.probability, kProbabilityFloor));
  Tensor g = ev.probabilities;
  g[target.index] -= 1.0;
  for (std::size_t i = body.size(); i-- > 0;) g = detail::backprop(body[i], acts[i], acts[i + 1], g, nullptr);
  ev.gradient = std::move(g);
  return ev;
}

/// Exact gradient of -log f_target with respect to the input.
inline Tensor input_gradient(const Model& model, const Tensor& input, ClassId target) {
  return evaluate_log_loss(model, input, target).gradient;
}

/// Loss and parameter gradients for one sample; `grads[i]` pairs with `layers()[i]`.
inline double parameter_gradient(std::span<const Layer> layers, const Tensor& x, ClassId target,
                                 std::vector<LayerGrad>& grads) {
  const auto body = layers.first(layers.size() - 1);
  auto acts = detail::forward_trace(body, x);
  const Tensor p = detail::softmax(acts.back());
  Tensor g = p;
  g[target.index] -= 1.0;
  grads.assign(layers.size(), LayerGrad{});
  for (std::size_t i = body.size(); i-- > 0;) g = detail::backprop(body[i], acts[i], acts[i + 1], g, &grads[i]);
  return -std::log(std::max(p[target.index], kProbabilityFloor));
}

}  // namespace relex
