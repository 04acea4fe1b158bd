// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#include "checks.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "fedcache/diffusion.hpp"
#include "fedcache/federated.hpp"
#include "fedcache/graph.hpp"
#include "fedcache/loss.hpp"
#include "fedcache/models.hpp"
#include "fedcache/rng.hpp"

namespace checks {

using namespace fedcache;

namespace {

constexpr std::array<double, 2> kToyMean{1.0, -0.5};
constexpr std::array<double, 2> kToyStd{0.5, 1.0};
constexpr int kToySteps = 200;
constexpr double kToyBetaEnd = 0.05;

Graph toy_network() {
  Graph g({2});
  const auto t = g.add("time", LayerSpec::time_embedding(32), std::vector<std::size_t>{});
  const auto th = g.add("time.fc", LayerSpec::dense(32, 64), t);
  const auto ta = g.add("time.act", LayerSpec::silu(), th);
  const auto t1 = g.add("time.to1", LayerSpec::dense(64, 64), ta);
  const auto t2 = g.add("time.to2", LayerSpec::dense(64, 64), ta);
  auto h = g.add("fc1", LayerSpec::dense(2, 64), g.input());
  h = g.add("add1", LayerSpec::add(), {h, t1});
  h = g.add("act1", LayerSpec::silu(), h);
  h = g.add("fc2", LayerSpec::dense(64, 64), h);
  h = g.add("add2", LayerSpec::add(), {h, t2});
  h = g.add("act2", LayerSpec::silu(), h);
  g.set_output(g.add("out", LayerSpec::dense(64, 2), h));
  return g;
}

Tensor toy_batch(std::size_t rows, Rng& rng) {
  Tensor x({rows, 2});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < 2; ++c) x[r * 2 + c] = static_cast<Real>(kToyMean[c] + kToyStd[c] * rng.normal());
  }
  return x;
}

void fill_stats(const Tensor& s, ToyResult& out) {
  const std::size_t n = s.dim(0);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0, sq = 0;
    for (std::size_t r = 0; r < n; ++r) mean += s[r * 2 + c];
    mean /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) sq += (s[r * 2 + c] - mean) * (s[r * 2 + c] - mean);
    out.mean[c] = mean;
    out.var[c] = sq / static_cast<double>(n - 1);
    out.target_mean[c] = kToyMean[c];
    out.target_var[c] = kToyStd[c] * kToyStd[c];
  }
}

}  // namespace

Moments q_sample_moments(double x0, int t, int steps, std::size_t draws, std::uint64_t seed) {
  const NoiseSchedule schedule = build_schedule(steps);
  Rng rng(seed);
  Tensor x({draws, 1}, static_cast<Real>(x0));
  Tensor eps({draws, 1});
  for (auto& v : eps.values()) v = static_cast<Real>(rng.normal());
  const Tensor xt = q_sample(schedule, x, t, eps);
  double mean = 0, sq = 0;
  for (Real v : xt.values()) mean += v;
  mean /= static_cast<double>(draws);
  for (Real v : xt.values()) sq += (v - mean) * (v - mean);
  // Independent closed form: prod_{s <= t} (1 - beta_s) with linear betas.
  double abar = 1;
  for (int s = 1; s <= t; ++s) {
    const double beta = steps == 1 ? 1e-4 : 1e-4 + (0.02 - 1e-4) * (s - 1) / (steps - 1);
    abar *= 1 - beta;
  }
  return {t, std::sqrt(abar) * x0, 1 - abar, mean, sq / static_cast<double>(draws - 1)};
}

ToyResult gaussian_toy(std::uint64_t seed, std::size_t samples, std::size_t iterations) {
  const Graph g = toy_network();
  ParameterSet params;
  Rng init(derive_seed(seed, {1}));
  g.init_parameters(params, init);
  const NoiseSchedule schedule = build_schedule(kToySteps, 1e-4, kToyBetaEnd);
  DiffusionTrainer trainer(schedule, g, derive_seed(seed, {2}));
  Rng data(derive_seed(seed, {3}));
  ToyResult out;
  double recent = 0;
  std::size_t counted = 0;
  for (std::size_t k = 0; k < iterations; ++k) {
    const Real lr = k < iterations / 2 ? Real(0.05) : Real(0.01);
    const Real loss = trainer.training_loss(params, toy_batch(256, data));
    sgd_step(params, lr);
    if (k + 200 >= iterations) {
      recent += loss;
      ++counted;
    }
  }
  out.final_loss = recent / static_cast<double>(std::max<std::size_t>(counted, 1));
  const Tensor s = sample(schedule, graph_epsilon(g, params), 2, samples, derive_seed(seed, {4}));
  fill_stats(s, out);
  return out;
}

ToyResult gaussian_toy_exact(std::uint64_t seed, std::size_t samples) {
  const NoiseSchedule schedule = build_schedule(kToySteps, 1e-4, kToyBetaEnd);
  // For x0 ~ N(m, s^2): E[eps | x_t] = sqrt(1 - ab) (x_t - sqrt(ab) m) / (ab s^2 + 1 - ab).
  const EpsilonFn exact = [&schedule](const Tensor& x, int t) {
    const double ab = schedule.alpha_bar(t);
    Tensor eps(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t c = i % 2;
      const double var = ab * kToyStd[c] * kToyStd[c] + 1 - ab;
      eps[i] = static_cast<Real>(std::sqrt(1 - ab) * (x[i] - std::sqrt(ab) * kToyMean[c]) / var);
    }
    return eps;
  };
  ToyResult out;
  fill_stats(sample(schedule, exact, 2, samples, seed), out);
  return out;
}

bool single_client_round_matches_centralized(std::uint64_t seed, std::string* detail) {
  DenoiserConfig cfg;
  cfg.widths = {4, 8, 8};
  cfg.time_dim = 8;
  cfg.time_hidden = 16;
  cfg.steps = 20;
  const DenoiserModel initial = make_denoiser(cfg, derive_seed(seed, {1}));
  Rng data(derive_seed(seed, {2}));
  Tensor latents({12, cfg.dim()});
  for (auto& v : latents.values()) v = static_cast<Real>(data.normal());

  FederationConfig fc;
  fc.rounds = 1;
  fc.local_iterations = 3;
  fc.batch_size = 12;
  fc.eta_d = Real(0.01);
  fc.steps = cfg.steps;
  fc.seed = derive_seed(seed, {3});
  const ClientState client = make_client(0, latents, fc.seed);
  const TrainingOutcome fl = run_training(std::span(&client, 1), initial, fc);

  // Centralized reference: plain SGD on the whole dataset with the same noise stream.
  ParameterSet reference = initial.params;
  reference.zero_grad();
  DiffusionTrainer trainer(build_schedule(cfg.steps), initial.graph, noise_seed(client, 1));
  for (std::size_t k = 0; k < fc.local_iterations; ++k) {
    trainer.training_loss(reference, latents);
    sgd_step(reference, fc.eta_d);
  }
  const bool match = fl.global.values_equal(reference);
  if (detail != nullptr) {
    *detail = "fl " + checksum_hex(fl.global.checksum()) + " centralized " + checksum_hex(reference.checksum());
  }
  return match && !initial.params.values_equal(reference);
}

AggregationCheck aggregation_properties(std::uint64_t seed) {
  Rng rng(seed);
  const auto make = [&rng] {
    ParameterSet p;
    Tensor a({3, 4}), b({5});
    for (auto& v : a.values()) v = static_cast<Real>(rng.normal());
    for (auto& v : b.values()) v = static_cast<Real>(rng.normal());
    p.add("a", a);
    p.add("b", b);
    return p;
  };
  const ParameterSet global = make();
  std::vector<ParameterSet> locals;
  const std::vector<std::size_t> sizes{37, 241, 5, 120, 241};
  for (std::size_t i = 0; i < sizes.size(); ++i) locals.push_back(make());

  std::vector<WeightedModel> order;
  for (std::size_t i = 0; i < sizes.size(); ++i) order.push_back({&locals[i], sizes[i]});
  const ParameterSet result = aggregate(global, order, Real(1), AggregationMode::FedAvg);

  AggregationCheck check;
  double total = 0;
  for (auto s : sizes) total += static_cast<double>(s);
  double worst = 0;
  for (std::size_t p = 0; p < global.size(); ++p) {
    for (std::size_t k = 0; k < global.at(p).value.size(); ++k) {
      double expect = 0;
      for (std::size_t i = 0; i < sizes.size(); ++i) expect += sizes[i] / total * locals[i].at(p).value[k];
      worst = std::max(worst, std::abs(expect - result.at(p).value[k]));
    }
  }
  check.max_abs_error = worst;
  check.weighted_mean = worst <= (sizeof(Real) == 4 ? 1e-6 : 1e-13) * 8;

  check.permutation_invariant = true;
  Rng perm(derive_seed(seed, {9}));
  for (int trial = 0; trial < 10; ++trial) {
    perm.shuffle(std::span<WeightedModel>(order));
    check.permutation_invariant =
        check.permutation_invariant && aggregate(global, order, Real(1), AggregationMode::FedAvg).values_equal(result);
  }
  return check;
}

}  // namespace checks
