// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <map>

#include "fedcache/cachesim.hpp"
#include "fedcache/error.hpp"
#include "fedcache/rng.hpp"

using namespace fedcache;

namespace {

std::vector<std::uint32_t> ids(const CacheState& c) { return c.cached; }

RequestTrace zipf_trace(std::size_t n, std::size_t features, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> cdf(features);
  double total = 0;
  for (std::size_t f = 0; f < features; ++f) cdf[f] = total += 1.0 / static_cast<double>(f + 1);
  RequestTrace t;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * total;
    const auto pos = std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
    // Scatter popularity ranks over ids so id order carries no signal.
    t.requests.push_back(static_cast<std::uint32_t>(1 + (static_cast<std::size_t>(pos) * 37) % features));
  }
  return t;
}

}  // namespace

TEST_SUITE("cachesim") {
  TEST_CASE("popularity is the mean decoded row") {
    const DecodeFn passthrough = [](const Tensor& x) { return x; };
    const auto s = predict_popularity(passthrough, Tensor({2, 3}, std::vector<Real>{1, 0, 0.5, 0, 1, 0.5}));
    CHECK(s.scores == std::vector<Real>{0.5, 0.5, 0.5});
    const auto one = predict_popularity(passthrough, Tensor({1, 3}, std::vector<Real>{0.1f, 0.7f, 0.2f}));
    CHECK(one.scores == std::vector<Real>{0.1f, 0.7f, 0.2f});
    CHECK_THROWS_AS(predict_popularity(passthrough, Tensor()), UsageError);
  }

  TEST_CASE("top-N selection with smaller-id tie-break") {
    const std::vector<Real> s{0.9f, 0.1f, 0.9f, 0.5f};
    CHECK(ids(select_top_n(s, 2)) == std::vector<std::uint32_t>{1, 3});
    CHECK(ids(select_top_n(s, 4)) == std::vector<std::uint32_t>{1, 2, 3, 4});
    std::vector<Real> peak(10, 0.2f);
    peak[6] = 0.95f;
    CHECK(ids(select_top_n(peak, 1)) == std::vector<std::uint32_t>{7});
    const std::vector<Real> flat(5, 0.3f);
    CHECK(ids(select_top_n(flat, 2)) == std::vector<std::uint32_t>{1, 2});
    CHECK_THROWS_AS(select_top_n(s, 0), ConfigError);
    CHECK_THROWS_AS(select_top_n(s, 5), ConfigError);
  }

  TEST_CASE("top-N is invariant to positive scaling") {
    Rng rng(2);
    std::vector<Real> s(300);
    for (auto& v : s) v = static_cast<Real>(rng.uniform());
    for (Real c : {Real(0.001), Real(0.5), Real(7), Real(1000)}) {
      std::vector<Real> scaled(s);
      for (auto& v : scaled) v *= c;
      for (std::size_t n : {1u, 17u, 100u}) CHECK(ids(select_top_n(scaled, n)) == ids(select_top_n(s, n)));
    }
  }

  TEST_CASE("oracle caches the most requested ids") {
    const RequestTrace t{{2, 2, 2, 5, 3, 3}};
    CHECK(ids(oracle_policy(t, 2, 6)) == std::vector<std::uint32_t>{2, 3});
    const auto all = oracle_policy(t, 3, 6);
    CHECK(evaluate(all, t).hit_percentage == 100.0);
    CHECK_THROWS_AS(oracle_policy(RequestTrace{}, 2, 6), UsageError);
  }

  TEST_CASE("hit percentage and delay arithmetic") {
    RequestTrace t;
    for (int i = 0; i < 50; ++i) t.requests.push_back(1);
    for (int i = 0; i < 50; ++i) t.requests.push_back(2);
    const CacheState c{1, {1}};
    const auto e = evaluate(c, t);
    CHECK(e.hits == 50);
    CHECK(e.misses == 50);
    CHECK(e.hit_percentage == 50.0);
    CHECK(e.mean_delay_ms == 30.0);
    const auto empty = evaluate(CacheState{}, t);
    CHECK(empty.hit_percentage == 0.0);
    CHECK(empty.mean_delay_ms == 50.0);
    CHECK_THROWS_AS(evaluate(c, RequestTrace{}), UsageError);
    CHECK_THROWS_AS(evaluate(c, t, DelayModel{50, 10}), ConfigError);
  }

  TEST_CASE("delay identity holds for every evaluation") {
    const auto trace = zipf_trace(3000, 400, 4);
    const DelayModel d{3.5, 71.25};
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
      const auto cache = random_policy(1 + rng.below(400), 400, rng.next());
      const auto e = evaluate(cache, trace, d);
      CHECK(e.mean_delay_ms == doctest::Approx(d.miss_ms - e.hit_percentage / 100 * (d.miss_ms - d.hit_ms)).epsilon(1e-12));
      CHECK(mean_delay(e.hit_percentage, d) == d.miss_ms - (e.hit_percentage / 100.0) * (d.miss_ms - d.hit_ms));
    }
  }

  TEST_CASE("random policy picks N distinct ids reproducibly") {
    const auto a = random_policy(30, 100, 9);
    CHECK(a.cached.size() == 30);
    CHECK(std::adjacent_find(a.cached.begin(), a.cached.end()) == a.cached.end());
    CHECK(random_policy(30, 100, 9).cached == a.cached);
    CHECK(random_policy(30, 100, 10).cached != a.cached);
  }

  TEST_CASE("Thompson sampling on a single content hits from the start") {
    ThompsonState st(1);
    const RequestTrace t{std::vector<std::uint32_t>(100, 1)};
    CHECK(thompson_policy(st, t, 1, 5, 1).hit_percentage == 100.0);
    CHECK(st.a[0] == 101);
    CHECK(st.b[0] == 1);
  }

  TEST_CASE("Thompson sampling on exchangeable requests approaches N/F") {
    constexpr std::size_t F = 200, N = 20;
    Rng rng(12);
    RequestTrace t;
    for (int i = 0; i < 200'000; ++i) t.requests.push_back(static_cast<std::uint32_t>(1 + rng.below(F)));
    ThompsonState st(F);
    const auto e = thompson_policy(st, t, N, 200, 3);
    CHECK(e.hit_percentage == doctest::Approx(100.0 * N / F).epsilon(0.05));
    ThompsonState again(F);
    CHECK(thompson_policy(again, t, N, 200, 3).hit_percentage == e.hit_percentage);
    for (std::size_t f = 0; f < F; ++f) {
      CHECK(st.a[f] >= 1);
      CHECK(st.b[f] >= 1);
    }
    CHECK_THROWS_AS(thompson_policy(again, t, N, 0, 3), ConfigError);
  }

  TEST_CASE("Thompson posterior counts track hits and misses") {
    const auto trace = zipf_trace(5'000, 300, 8);
    ThompsonState st(300);
    const auto e = thompson_policy(st, trace, 25, 7, 1);
    double a = 0, b = 0;
    for (std::size_t f = 0; f < 300; ++f) {
      a += st.a[f] - 1;
      b += st.b[f] - 1;
    }
    CHECK(a == static_cast<double>(e.hits));
    CHECK(b == static_cast<double>(e.misses));
    CHECK(e.hits + e.misses == trace.requests.size());
  }

  TEST_CASE("sweep: oracle dominance and monotone capacity curves") {
    const std::size_t F = 400;
    const auto trace = zipf_trace(20'000, F, 2);
    std::vector<Real> noisy(F);
    Rng rng(3);
    for (auto& v : noisy) v = static_cast<Real>(rng.uniform());
    for (auto id : trace.requests) noisy[id - 1] += Real(0.01);
    const auto score = make_score_policy("scores", PopularityScores{noisy});
    const auto oracle = make_oracle_policy(F);
    const auto thompson = make_thompson_policy(F, 10);
    const auto random = make_random_policy(F);
    const std::vector<const CachePolicy*> policies{score.get(), oracle.get(), thompson.get(), random.get()};
    const std::vector<std::size_t> caps{10, 20, 50, 100, 200};
    const auto rows = sweep(policies, caps, trace, DelayModel{}, 5, 2);
    CHECK(rows.size() == policies.size() * caps.size());
    std::map<std::pair<std::string, std::size_t>, Evaluation> cell;
    for (const auto& r : rows) cell[{r.policy, r.capacity}] = r.result;
    for (auto c : caps) {
      const double best = cell[{"oracle", c}].hit_percentage;
      for (const auto* p : policies) {
        const auto& e = cell[{p->name(), c}];
        CHECK(e.hit_percentage <= best);
        CHECK(e.hit_percentage >= 0);
        CHECK(e.hit_percentage <= 100);
      }
    }
    for (const std::string name : {"oracle", "scores"}) {
      for (std::size_t i = 1; i < caps.size(); ++i) {
        CHECK(cell[{name, caps[i]}].hit_percentage >= cell[{name, caps[i - 1]}].hit_percentage);
        CHECK(cell[{name, caps[i]}].mean_delay_ms <= cell[{name, caps[i - 1]}].mean_delay_ms);
      }
    }
    CHECK(sweep(policies, caps, trace, DelayModel{}, 5, 1).size() == rows.size());
    CHECK(sweep_csv(sweep(policies, caps, trace, DelayModel{}, 5, 1)) == sweep_csv(rows));
    const std::vector<std::size_t> unsorted{50, 10};
    CHECK_THROWS_AS(sweep(policies, unsorted, trace, DelayModel{}, 5), ConfigError);
  }

  TEST_CASE("sweep CSV format") {
    const std::vector<SweepRow> rows{{"oracle", 100, {25.5, 39.8, 51, 149}, 7}};
    const auto csv = sweep_csv(rows);
    CHECK(csv.rfind(std::string(kSweepCsvHeader) + "\n", 0) == 0);
    CHECK(csv.find("oracle,100,") != std::string::npos);
  }
}
