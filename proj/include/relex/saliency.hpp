#pragma once

#include <stdexcept>
#include <string>

#include "relex/tensor.hpp"

namespace relex {

/// Per-pixel importance mask with every element in [0, 1].
///
/// A map either matches its input's shape exactly, or is spatial-only
/// ({1,H,W} or {H,W}) and broadcasts across the channels of a {C,H,W} input.
class SaliencyMap {
public:
  SaliencyMap() = default;

  explicit SaliencyMap(Tensor values) : values_(std::move(values)) {
    for (double v : values_) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw std::invalid_argument("saliency values must lie in [0,1], got " + std::to_string(v));
      }
    }
  }

  /// Clamps into [0,1] instead of rejecting.
  static SaliencyMap clamped(Tensor values) { return SaliencyMap(clamp(std::move(values), 0.0, 1.0)); }

  static SaliencyMap ones(const Shape& shape) { return SaliencyMap(Tensor(shape, 1.0)); }
  static SaliencyMap zeros(const Shape& shape) { return SaliencyMap(Tensor(shape, 0.0)); }

  const Tensor& values() const noexcept { return values_; }
  const Shape& shape() const noexcept { return values_.shape(); }
  std::size_t size() const noexcept { return values_.numel(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double l1() const { return sum(values_); }

  /// 1 - m.
  SaliencyMap complement() const {
    Tensor c = values_;
    for (auto& v : c) v = 1.0 - v;
    return SaliencyMap(std::move(c));
  }

  friend bool operator==(const SaliencyMap&, const SaliencyMap&) = default;

private:
  Tensor values_;
};

/// Number of input elements covered by each mask element (1 unless broadcasting).
inline std::size_t mask_fanout(const Shape& mask, const Shape& input) {
  if (mask == input) return 1;
  const std::size_t mn = shape_numel(mask);
  if (input.size() == 3 && shape_numel(input) == mn * input[0] &&
      ((mask.size() == 3 && mask[0] == 1 && mask[1] == input[1] && mask[2] == input[2]) ||
       (mask.size() == 2 && mask[0] == input[1] && mask[1] == input[2]))) {
    return input[0];
  }
  if (mn == shape_numel(input) && (mask.size() == 1 || input.size() == 1)) return 1;
  throw ShapeError("mask shape " + shape_string(mask) + " incompatible with input " +
                   shape_string(input));
}

/// Mask index covering input element `i` for a given fanout.
inline std::size_t mask_index(std::size_t i, std::size_t fanout, std::size_t mask_size) {
  return fanout == 1 ? i : i % mask_size;
}

/// m (.) x, broadcasting a spatial mask across channels.
inline Tensor apply_mask(const Tensor& mask, const Tensor& x) {
  const std::size_t fan = mask_fanout(mask.shape(), x.shape());
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= mask[mask_index(i, fan, mask.numel())];
  return out;
}

inline Tensor apply_mask(const SaliencyMap& m, const Tensor& x) { return apply_mask(m.values(), x); }

/// (1 - m) (.) x.
inline Tensor apply_complement(const SaliencyMap& m, const Tensor& x) {
  const std::size_t fan = mask_fanout(m.shape(), x.shape());
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= 1.0 - m[mask_index(i, fan, m.size())];
  return out;
}

/// Sum over the channels a mask element covers: reduces an input-shaped
/// tensor to mask shape.
inline Tensor reduce_to_mask(const Tensor& grad, const Shape& mask_shape) {
  const std::size_t fan = mask_fanout(mask_shape, grad.shape());
  Tensor out(mask_shape);
  for (std::size_t i = 0; i < grad.numel(); ++i) out[mask_index(i, fan, out.numel())] += grad[i];
  return out;
}

}  // namespace relex
