// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedcache/diffusion.hpp"

#include <cmath>

#include "fedcache/error.hpp"
#include "fedcache/loss.hpp"
#include "fedcache/parallel.hpp"

namespace fedcache {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
  if (beta_.empty()) throw ConfigError("noise schedule needs at least one step");
  const std::size_t n = beta_.size();
  alpha_.resize(n);
  alpha_bar_.resize(n);
  posterior_var_.resize(n);
  double running = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(beta_[i] > 0.0 && beta_[i] < 1.0)) throw ConfigError("noise schedule betas must lie in (0, 1)");
    alpha_[i] = 1.0 - beta_[i];
    const double prev = running;
    running *= alpha_[i];
    alpha_bar_[i] = running;
    posterior_var_[i] = (1.0 - prev) / (1.0 - running) * beta_[i];
  }
}

std::size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > steps()) {
    throw UsageError("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }
  return static_cast<std::size_t>(t - 1);
}

NoiseSchedule build_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("T must be at least 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("beta schedule requires 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int t = 1; t <= steps; ++t) {
    betas[static_cast<std::size_t>(t - 1)] =
        steps == 1 ? beta_start
                   : beta_start + static_cast<double>(t - 1) / static_cast<double>(steps - 1) * (beta_end - beta_start);
  }
  return NoiseSchedule(std::move(betas));
}

Tensor q_sample(const NoiseSchedule& schedule, const Tensor& x0, int t, const Tensor& epsilon) {
  if (x0.shape() != epsilon.shape()) throw ConfigError("x0 and epsilon must have the same shape");
  if (t < 1 || t > schedule.steps()) {
    throw UsageError("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(schedule.steps()) + "]");
  }
  const double ab = schedule.alpha_bar(t);
  const Real signal = static_cast<Real>(std::sqrt(ab));
  const Real noise = static_cast<Real>(std::sqrt(1.0 - ab));
  Tensor x_t(x0.shape());
  for (std::size_t i = 0; i < x0.size(); ++i) x_t[i] = signal * x0[i] + noise * epsilon[i];
  return x_t;
}

NoiseDraw draw_noise(const NoiseSchedule& schedule, const Tensor& x0_batch, Rng& rng) {
  if (x0_batch.rank() != 2 || x0_batch.empty()) throw UsageError("training batch must be a non-empty (B, D) tensor");
  const std::size_t rows = x0_batch.dim(0);
  const std::size_t width = x0_batch.dim(1);
  NoiseDraw draw{Tensor(x0_batch.shape()), Tensor(x0_batch.shape()), std::vector<int>(rows)};
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps())));
    draw.steps[r] = t;
    const Real signal = static_cast<Real>(std::sqrt(schedule.alpha_bar(t)));
    const Real noise = static_cast<Real>(std::sqrt(1.0 - schedule.alpha_bar(t)));
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t k = r * width + c;
      draw.epsilon[k] = static_cast<Real>(rng.normal());
      draw.x_t[k] = signal * x0_batch[k] + noise * draw.epsilon[k];
    }
  }
  return draw;
}

Real objective_with(const NoiseSchedule& schedule, const Tensor& x0_batch, Rng& rng,
                    const std::function<Tensor(const NoiseDraw&)>& predictor) {
  const NoiseDraw draw = draw_noise(schedule, x0_batch, rng);
  return mse_loss(predictor(draw), draw.epsilon).value;
}

DiffusionTrainer::DiffusionTrainer(NoiseSchedule schedule, const Graph& denoiser, std::uint64_t seed)
    : schedule_(std::move(schedule)), graph_(&denoiser), rng_(seed) {}

Real DiffusionTrainer::training_loss(ParameterSet& params, const Tensor& x0_batch) {
  const NoiseDraw draw = draw_noise(schedule_, x0_batch, rng_);
  Tensor time({draw.steps.size()});
  for (std::size_t i = 0; i < draw.steps.size(); ++i) time[i] = static_cast<Real>(draw.steps[i]);
  auto pass = forward(params, *graph_, draw.x_t, &time);
  auto loss = mse_loss(pass.output, draw.epsilon);
  backward(pass.tape, loss.grad, params);
  return loss.value;
}

EpsilonFn graph_epsilon(const Graph& graph, const ParameterSet& params) {
  return [&graph, &params](const Tensor& x_t, int t) {
    Tensor time({x_t.dim(0)}, static_cast<Real>(t));
    return infer(params, graph, x_t, &time);
  };
}

Tensor sample(const NoiseSchedule& schedule, const EpsilonFn& epsilon, std::size_t dim, std::size_t count,
              std::uint64_t seed, unsigned workers) {
  if (count == 0) throw UsageError("sample count must be at least 1");
  if (dim == 0) throw ConfigError("sample dimension must be positive");
  Tensor out({count, dim});
  const std::size_t chunks = (count + kSampleChunk - 1) / kSampleChunk;
  parallel_for(chunks, workers, [&](std::size_t chunk) {
    const std::size_t first = chunk * kSampleChunk;
    const std::size_t rows = std::min(kSampleChunk, count - first);
    Rng rng(derive_seed(seed, {chunk}));
    Tensor x({rows, dim});
    for (auto& v : x.values()) v = static_cast<Real>(rng.normal());
    for (int t = schedule.steps(); t >= 1; --t) {
      const Tensor eps = epsilon(x, t);
      if (eps.shape() != x.shape()) throw ConfigError("noise predictor returned the wrong shape");
      const Real coef = static_cast<Real>(schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t)));
      const Real inv_sqrt_alpha = static_cast<Real>(1.0 / std::sqrt(schedule.alpha(t)));
      const Real sigma = static_cast<Real>(std::sqrt(schedule.posterior_variance(t)));
      for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = (x[i] - coef * eps[i]) * inv_sqrt_alpha;
        if (t > 1) x[i] += sigma * static_cast<Real>(rng.normal());
      }
      if (!x.all_finite()) throw NumericError("non-finite sample at diffusion step " + std::to_string(t));
    }
    std::copy(x.raw(), x.raw() + x.size(), out.raw() + first * dim);
  });
  return out;
}

}  // namespace fedcache
