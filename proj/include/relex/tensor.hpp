#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "relex/errors.hpp"

namespace relex {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles.
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    check_extents();
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  /// 1-D tensor from a list of values.
  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }
  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t rank() const noexcept { return shape_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Tensor& operator+=(const Tensor& o) { return zip_assign(o, std::plus<>{}, "+="); }
  Tensor& operator-=(const Tensor& o) { return zip_assign(o, std::minus<>{}, "-="); }
  Tensor& operator*=(const Tensor& o) { return zip_assign(o, std::multiplies<>{}, "*="); }
  Tensor& operator*=(double s) {
    for (auto& v : data_) v *= s;
    return *this;
  }
  Tensor& operator+=(double s) {
    for (auto& v : data_) v += s;
    return *this;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

private:
  void check_extents() const {
    for (auto e : shape_) {
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
    }
  }

  template <class Op>
  Tensor& zip_assign(const Tensor& o, Op op, const char* name) {
    if (o.numel() != numel()) {
      throw ShapeError(std::string("operator") + name + ": " + shape_string(shape_) + " vs " +
                       shape_string(o.shape_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] = op(data_[i], o.data_[i]);
    return *this;
  }

  Shape shape_;
  std::vector<double> data_;
};

inline Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
inline Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
inline Tensor operator*(Tensor a, const Tensor& b) { return a *= b; }
inline Tensor operator*(Tensor a, double s) { return a *= s; }
inline Tensor operator*(double s, Tensor a) { return a *= s; }
inline Tensor operator-(Tensor a) { return a *= -1.0; }

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape(), 0.0); }
inline Tensor full_like(const Tensor& t, double v) { return Tensor(t.shape(), v); }

inline double dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) {
    throw ShapeError("dot: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

inline double norm1(const Tensor& a) {
  double s = 0.0;
  for (double v : a) s += std::abs(v);
  return s;
}

inline double norm_inf(const Tensor& a) {
  double s = 0.0;
  for (double v : a) s = std::max(s, std::abs(v));
  return s;
}

inline double sum(const Tensor& a) { return std::accumulate(a.begin(), a.end(), 0.0); }

inline double max_value(const Tensor& a) { return *std::max_element(a.begin(), a.end()); }
inline double min_value(const Tensor& a) { return *std::min_element(a.begin(), a.end()); }

inline Tensor clamp(Tensor a, double lo, double hi) {
  for (auto& v : a) v = std::clamp(v, lo, hi);
  return a;
}

template <class F>
Tensor map(Tensor a, F f) {
  for (auto& v : a) v = f(v);
  return a;
}

/// Index of the largest element; ties resolve to the lowest index.
inline std::size_t argmax(const Tensor& a) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < a.numel(); ++i) {
    if (a[i] > a[best]) best = i;
  }
  return best;
}

inline void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NonFiniteError(std::string(what) + " contains non-finite values");
}

}  // namespace relex
