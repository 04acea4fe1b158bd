// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "checks.hpp"
#include "fedcache/diffusion.hpp"
#include "fedcache/error.hpp"
#include "fedcache/models.hpp"

using namespace fedcache;

TEST_SUITE("diffusion") {
  TEST_CASE("linear schedule endpoints and cumulative products") {
    const auto s = build_schedule(50);
    CHECK(s.steps() == 50);
    CHECK(s.beta(1) == doctest::Approx(1e-4));
    CHECK(s.beta(50) == doctest::Approx(0.02));
    CHECK(s.alpha_bar(0) == 1.0);
    double prod = 1;
    for (int t = 1; t <= 50; ++t) {
      prod *= 1 - s.beta(t);
      CHECK(s.alpha(t) == doctest::Approx(1 - s.beta(t)));
      CHECK(s.alpha_bar(t) == doctest::Approx(prod).epsilon(1e-12));
      if (t > 1) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
    CHECK(s.posterior_variance(1) == 0);
    CHECK(s.posterior_variance(10) ==
          doctest::Approx((1 - s.alpha_bar(9)) / (1 - s.alpha_bar(10)) * s.beta(10)));
    CHECK_THROWS_AS(s.beta(0), UsageError);
    CHECK_THROWS_AS(s.beta(51), UsageError);
  }

  TEST_CASE("schedule validation") {
    CHECK_THROWS_AS(build_schedule(0), ConfigError);
    CHECK_THROWS_AS(build_schedule(10, 0.0, 0.02), ConfigError);
    CHECK_THROWS_AS(build_schedule(10, 0.03, 0.02), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule({0.5, 1.0}), ConfigError);
    CHECK(build_schedule(1).beta(1) == doctest::Approx(1e-4));
  }

  TEST_CASE("q_sample Monte-Carlo moments match the closed form") {
    for (int t : {1, 10, 25, 50}) {
      const auto m = checks::q_sample_moments(0.8, t, 50, 100'000, 17 + t);
      INFO("t=", t, " mean ", m.mean, " vs ", m.expected_mean, " var ", m.var, " vs ", m.expected_var);
      CHECK(std::abs(m.mean - m.expected_mean) <= 0.05 * std::abs(m.expected_mean));
      CHECK(std::abs(m.var - m.expected_var) <= 0.05 * m.expected_var);
    }
  }

  TEST_CASE("q_sample rejects bad inputs") {
    const auto s = build_schedule(5);
    CHECK_THROWS_AS(q_sample(s, Tensor({2}), 1, Tensor({3})), ConfigError);
    CHECK_THROWS_AS(q_sample(s, Tensor({2}), 6, Tensor({2})), UsageError);
  }

  TEST_CASE("oracle denoiser has exactly zero loss") {
    const auto s = build_schedule(50);
    Rng rng(5);
    Tensor x0({64, 16});
    for (auto& v : x0.values()) v = static_cast<Real>(rng.normal());
    const Real loss = objective_with(s, x0, rng, [](const NoiseDraw& d) { return d.epsilon; });
    CHECK(loss == 0);
    const Real zero_pred = objective_with(s, x0, rng, [](const NoiseDraw& d) { return Tensor(d.epsilon.shape()); });
    CHECK(zero_pred == doctest::Approx(1.0).epsilon(0.1));
  }

  TEST_CASE("noise draws use steps in [1, T]") {
    const auto s = build_schedule(7);
    Rng rng(8);
    const auto d = draw_noise(s, Tensor({500, 2}), rng);
    int lo = 100, hi = 0;
    for (int t : d.steps) {
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
    CHECK(lo == 1);
    CHECK(hi == 7);
  }

  TEST_CASE("sampling with the exact denoiser recovers a Gaussian") {
    const auto r = checks::gaussian_toy_exact(3);
    for (int c = 0; c < 2; ++c) {
      CHECK(r.mean[c] == doctest::Approx(r.target_mean[c]).epsilon(0.05).scale(1));
      CHECK(r.var[c] == doctest::Approx(r.target_var[c]).epsilon(0.1));
    }
  }

  TEST_CASE("sampling does not depend on the worker count") {
    DenoiserConfig cfg;
    cfg.widths = {4, 8, 8};
    cfg.time_dim = 8;
    cfg.time_hidden = 16;
    cfg.steps = 5;
    const auto model = make_denoiser(cfg, 1);
    const auto s = build_schedule(5);
    const auto eps = graph_epsilon(model.graph, model.params);
    const Tensor a = sample(s, eps, 16, 600, 42, 1);
    const Tensor b = sample(s, eps, 16, 600, 42, 3);
    CHECK(a == b);
    CHECK(a.shape() == Shape{600, 16});
    CHECK_FALSE(a == sample(s, eps, 16, 600, 43, 1));
    CHECK_THROWS_AS(sample(s, eps, 16, 0, 1), UsageError);
  }
}
