// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fedcache/parameter_set.hpp"
#include "fedcache/tensor.hpp"

namespace fedcache {

struct LossResult {
  Real value = 0;
  Tensor grad;  // d(value)/d(prediction)
};

/// Mean of squared elementwise differences; gradient 2(prediction - target)/numel.
LossResult mse_loss(const Tensor& prediction, const Tensor& target);

/// Squared error summed over each row's features, averaged over rows
/// (dim 0). Equals mse_loss scaled by the row width.
LossResult row_squared_error(const Tensor& prediction, const Tensor& target);

/// Plain SGD: value -= learning_rate * grad for every entry, then zeroes the
/// gradients. Throws NumericError (naming the parameter) on a non-finite
/// gradient before touching any value.
void sgd_step(ParameterSet& params, Real learning_rate);

}  // namespace fedcache
