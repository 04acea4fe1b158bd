// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

// Reusable property checks shared by the unit and acceptance suites.

#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace checks {

struct Moments {
  int t = 0;
  double expected_mean = 0;
  double expected_var = 0;
  double mean = 0;
  double var = 0;
};

/// Monte-Carlo mean and variance of x_t for a fixed scalar x0 at step t.
Moments q_sample_moments(double x0, int t, int steps, std::size_t draws, std::uint64_t seed);

struct ToyResult {
  std::array<double, 2> target_mean{};
  std::array<double, 2> target_var{};
  std::array<double, 2> mean{};
  std::array<double, 2> var{};
  double final_loss = 0;
};

/// Trains a small time-conditioned MLP on a 2-D Gaussian and samples from it.
ToyResult gaussian_toy(std::uint64_t seed, std::size_t samples = 5000, std::size_t iterations = 4000);

/// Same sampler driven by the closed-form optimal noise predictor.
ToyResult gaussian_toy_exact(std::uint64_t seed, std::size_t samples = 5000);

/// Runs one FL round with a single full-batch client and the centralized
/// reference on the same data and noise streams; true on a bitwise match.
bool single_client_round_matches_centralized(std::uint64_t seed, std::string* detail = nullptr);

struct AggregationCheck {
  bool weighted_mean = false;      // result equals sum_i (n_i / n) w_i
  bool permutation_invariant = false;
  double max_abs_error = 0;
};

AggregationCheck aggregation_properties(std::uint64_t seed);

}  // namespace checks
