#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <vector>

#include "relex/attack.hpp"
#include "relex/dataset.hpp"
#include "relex/model.hpp"
#include "relex/random.hpp"

namespace relex {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;  ///< Adam step size
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  /// Replace each minibatch by PGD adversaries of the current model before the update.
  bool adversarial = false;
  PGDConfig pgd;
};

struct TrainResult {
  Model model;
  double train_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

inline double accuracy(const Model& model, const LabeledDataset& ds) {
  if (ds.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) hits += predict(model, ds.images[i]) == ds.labels[i];
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

namespace detail {

inline std::vector<Tensor*> parameters(std::vector<Layer>& layers) {
  std::vector<Tensor*> out;
  for (auto& l : layers) {
    if (auto* d = std::get_if<Dense>(&l)) {
      out.push_back(&d->weight);
      out.push_back(&d->bias);
    } else if (auto* c = std::get_if<Conv2D>(&l)) {
      out.push_back(&c->weight);
      out.push_back(&c->bias);
    }
  }
  return out;
}

inline std::vector<Tensor*> gradients(std::vector<LayerGrad>& grads, const std::vector<Layer>& layers) {
  std::vector<Tensor*> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (std::holds_alternative<Dense>(layers[i]) || std::holds_alternative<Conv2D>(layers[i])) {
      out.push_back(&grads[i].weight);
      out.push_back(&grads[i].bias);
    }
  }
  return out;
}

}  // namespace detail

/// Minibatch Adam on mean cross-entropy. Deterministic given cfg.seed.
inline TrainResult train_classifier(const LabeledDataset& ds, const Model& arch, const TrainConfig& cfg) {
  if (ds.empty()) throw std::invalid_argument("train_classifier: empty dataset");
  for (const auto& l : ds.labels) check_class(arch, l);
  if (cfg.batch_size == 0 || cfg.epochs == 0) throw std::invalid_argument("train_classifier: zero batch size or epochs");

  std::vector<Layer> layers = arch.layers();
  auto params = detail::parameters(layers);
  std::vector<Tensor> m1, m2;
  for (auto* p : params) {
    m1.emplace_back(p->shape());
    m2.emplace_back(p->shape());
  }
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);
  std::size_t t = 0;
  TrainResult res{arch, 0.0, {}};

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      std::vector<Tensor> acc;
      for (auto* p : params) acc.emplace_back(p->shape());
      const Model current(arch.input_shape(), layers);
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t idx = order[start + j];
        Tensor x = ds.images[idx];
        if (cfg.adversarial) {
          PGDConfig pc = cfg.pgd;
          pc.seed = derive_seed(cfg.seed, t * 1315423911ULL + j);
          x = pgd_untargeted(current, x, ds.labels[idx], pc);
        }
        std::vector<LayerGrad> grads;
        const double loss = parameter_gradient(layers, x, ds.labels[idx], grads);
        if (!std::isfinite(loss)) {
          std::ostringstream os;
          os << "train_classifier: non-finite loss at epoch " << epoch << ", sample " << idx;
          throw DivergenceError(os.str(), epoch);
        }
        epoch_loss += loss;
        auto gs = detail::gradients(grads, layers);
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += *gs[k];
      }
      ++t;
      const double inv = 1.0 / static_cast<double>(len);
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
      for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        for (std::size_t i = 0; i < p.numel(); ++i) {
          const double g = acc[k][i] * inv;
          m1[k][i] = cfg.beta1 * m1[k][i] + (1.0 - cfg.beta1) * g;
          m2[k][i] = cfg.beta2 * m2[k][i] + (1.0 - cfg.beta2) * g * g;
          p[i] -= cfg.learning_rate * (m1[k][i] / c1) / (std::sqrt(m2[k][i] / c2) + 1e-8);
        }
      }
    }
    epoch_loss /= static_cast<double>(ds.size());
    if (!std::isfinite(epoch_loss)) throw DivergenceError("train_classifier: non-finite epoch loss", epoch);
    res.epoch_loss.push_back(epoch_loss);
  }
  res.model = Model(arch.input_shape(), std::move(layers));
  res.train_accuracy = accuracy(res.model, ds);
  return res;
}

}  // namespace relex
