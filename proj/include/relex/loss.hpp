#pragma once

#include <cmath>
#include <concepts>

#include "relex/model.hpp"
#include "relex/saliency.hpp"
#include "relex/tensor.hpp"

namespace relex {

/// A scalar loss on the (already masked) model input with an exact gradient.
template <class F>
concept InputLoss = requires(const F& f, const Tensor& z) {
  { f.value(z) } -> std::convertible_to<double>;
  { f.gradient(z) } -> std::convertible_to<Tensor>;
};

/// -log f_target(z) of a classifier.
struct ClassLoss {
  const Model* model;
  ClassId target;

  ClassLoss(const Model& m, ClassId c) : model(&m), target(c) { check_class(m, c); }
  double value(const Tensor& z) const { return class_log_loss(*model, z, target); }
  Tensor gradient(const Tensor& z) const { return input_gradient(*model, z, target); }
};

/// q(z) = 1/2 z^T A z + b^T z + c, with A stored as a {d, d} tensor.
struct QuadraticLoss {
  Tensor a;
  Tensor b;
  double c = 0.0;

  double value(const Tensor& z) const {
    const std::size_t d = z.numel();
    double quad = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) quad += z[i] * a[i * d + j] * z[j];
    return 0.5 * quad + dot(b, z) + c;
  }

  Tensor gradient(const Tensor& z) const {
    const std::size_t d = z.numel();
    Tensor g = b.reshaped(z.shape());
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += 0.5 * (a[i * d + j] + a[j * d + i]) * z[j];
      g[i] += s;
    }
    return g;
  }

  /// A (1/2)(A + A^T) v product, used as the analytic Hessian in tests.
  Tensor hessian_times(const Tensor& v) const {
    QuadraticLoss pure{a, Tensor(v.shape()), 0.0};
    return pure.gradient(v);
  }
};

/// l(z) = w^T z + b.
struct LinearLoss {
  Tensor w;
  double b = 0.0;
  double value(const Tensor& z) const { return dot(w, z) + b; }
  Tensor gradient(const Tensor& z) const { return w.reshaped(z.shape()); }
};

/// L(x, m) = loss(m (.) x).
template <InputLoss F>
double masked_value(const F& loss, const Tensor& x, const SaliencyMap& m) {
  return loss.value(apply_mask(m, x));
}

/// Gradient w.r.t. the loss's own argument at the masked point m (.) x. Its
/// negation is the log-score gradient g used by the bound checks.
template <InputLoss F>
Tensor masked_point_gradient(const F& loss, const Tensor& x, const SaliencyMap& m) {
  return loss.gradient(apply_mask(m, x));
}

/// grad_x L(x, m) = loss'(m (.) x) (.) m.
template <InputLoss F>
Tensor masked_gradient(const F& loss, const Tensor& x, const SaliencyMap& m) {
  return apply_mask(m, masked_point_gradient(loss, x, m));
}

/// H (step * v) ~ grad L(x + step v, m) - grad L(x, m).
template <InputLoss F>
Tensor hessian_vector_fd(const F& loss, const Tensor& x, const SaliencyMap& m, const Tensor& v,
                         double step) {
  if (!(step > 0.0)) throw std::invalid_argument("hessian_vector_fd: step must be positive");
  if (v.numel() != x.numel()) throw ShapeError("hessian_vector_fd: direction shape mismatch");
  if (std::abs(norm2(v) - 1.0) > 1e-9) {
    throw std::invalid_argument("hessian_vector_fd: direction must have unit L2 norm");
  }
  const Tensor shifted = x + v.reshaped(x.shape()) * step;
  return masked_gradient(loss, shifted, m) - masked_gradient(loss, x, m);
}

inline Tensor hessian_vector_fd(const Model& model, ClassId target, const Tensor& x,
                                const SaliencyMap& m, const Tensor& v, double step) {
  return hessian_vector_fd(ClassLoss(model, target), x, m, v, step);
}

}  // namespace relex
