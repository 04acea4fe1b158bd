// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fedcache/graph.hpp"
#include "fedcache/parameter_set.hpp"
#include "fedcache/rng.hpp"
#include "fedcache/tensor.hpp"

namespace fedcache {

/// Per-step DDPM coefficients for steps t = 1..T. Accessors take the
/// 1-based step; alpha_bar(0) is defined as 1.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(std::vector<double> betas);

  int steps() const noexcept { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_.at(index(t)); }
  double alpha(int t) const { return alpha_.at(index(t)); }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_.at(index(t)); }
  /// (1 - alpha_bar(t-1)) / (1 - alpha_bar(t)) * beta(t); zero at t = 1.
  double posterior_variance(int t) const { return posterior_var_.at(index(t)); }

 private:
  std::size_t index(int t) const;

  std::vector<double> beta_, alpha_, alpha_bar_, posterior_var_;
};

/// Linear betas from beta_start (t = 1) to beta_end (t = T).
NoiseSchedule build_schedule(int steps, double beta_start = 1e-4, double beta_end = 0.02);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) epsilon.
Tensor q_sample(const NoiseSchedule& schedule, const Tensor& x0, int t, const Tensor& epsilon);

/// One draw of the training objective's randomness for a (B, D) batch:
/// per-row step t ~ U{1..T}, epsilon ~ N(0, I), and the resulting x_t.
struct NoiseDraw {
  Tensor x_t;
  Tensor epsilon;
  std::vector<int> steps;
};

NoiseDraw draw_noise(const NoiseSchedule& schedule, const Tensor& x0_batch, Rng& rng);

/// Loss of an arbitrary noise predictor on a fresh draw, no gradients.
/// Used to probe the objective with reference predictors.
Real objective_with(const NoiseSchedule& schedule, const Tensor& x0_batch, Rng& rng,
                    const std::function<Tensor(const NoiseDraw&)>& predictor);

/// Owns the schedule and the noise stream used to train one graph denoiser.
class DiffusionTrainer {
 public:
  DiffusionTrainer(NoiseSchedule schedule, const Graph& denoiser, std::uint64_t seed);

  const NoiseSchedule& schedule() const noexcept { return schedule_; }
  Rng& rng() noexcept { return rng_; }

  /// Mean over batch and coordinates of (epsilon - eps_theta(x_t, t))^2.
  /// Gradients accumulate into `params`.
  Real training_loss(ParameterSet& params, const Tensor& x0_batch);

 private:
  NoiseSchedule schedule_;
  const Graph* graph_;
  Rng rng_;
};

/// Batched noise prediction at one shared step for every row of x_t.
using EpsilonFn = std::function<Tensor(const Tensor& x_t, int t)>;

EpsilonFn graph_epsilon(const Graph& graph, const ParameterSet& params);

inline constexpr std::size_t kSampleChunk = 250;

/// Ancestral sampling of `count` vectors of width `dim`. Work is split into
/// fixed chunks of kSampleChunk rows, each with its own stream derived from
/// (seed, chunk), so the result is independent of `workers`. `epsilon` must
/// be safe to call concurrently.
Tensor sample(const NoiseSchedule& schedule, const EpsilonFn& epsilon, std::size_t dim, std::size_t count,
              std::uint64_t seed, unsigned workers = 1);

}  // namespace fedcache
