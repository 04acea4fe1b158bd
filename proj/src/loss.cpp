// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedcache/loss.hpp"

#include "fedcache/error.hpp"

namespace fedcache {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ConfigError("loss shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

LossResult scaled_squared_error(const Tensor& prediction, const Tensor& target, Real scale) {
  require_same_shape(prediction, target);
  LossResult result{0, Tensor(prediction.shape())};
  double sum = 0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const Real diff = prediction[i] - target[i];
    sum += static_cast<double>(diff) * diff;
    result.grad[i] = Real(2) * diff * scale;
  }
  result.value = static_cast<Real>(sum * scale);
  return result;
}

}  // namespace

LossResult mse_loss(const Tensor& prediction, const Tensor& target) {
  return scaled_squared_error(prediction, target, Real(1) / static_cast<Real>(prediction.size()));
}

LossResult row_squared_error(const Tensor& prediction, const Tensor& target) {
  return scaled_squared_error(prediction, target, Real(1) / static_cast<Real>(prediction.dim(0)));
}

void sgd_step(ParameterSet& params, Real learning_rate) {
  if (!(learning_rate >= Real(0))) throw ConfigError("learning rate must be non-negative");
  for (const auto& p : params.entries()) {
    if (!p.grad.all_finite()) throw NumericError("non-finite gradient for parameter '" + p.name + "'");
  }
  for (auto& p : params.entries()) {
    Real* v = p.value.raw();
    const Real* g = p.grad.raw();
    for (std::size_t i = 0; i < p.value.size(); ++i) v[i] -= learning_rate * g[i];
  }
  params.zero_grad();
}

}  // namespace fedcache
