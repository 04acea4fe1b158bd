// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedcache/cachesim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fedcache/error.hpp"
#include "fedcache/format.hpp"
#include "fedcache/parallel.hpp"
#include "fedcache/rng.hpp"

namespace fedcache {

namespace {

void require_trace(const RequestTrace& trace) {
  if (trace.requests.empty()) throw UsageError("request trace is empty");
}

void require_capacity(std::size_t n, std::size_t features) {
  if (n < 1 || n > features) {
    throw ConfigError("cache capacity N = " + std::to_string(n) + " outside [1, " + std::to_string(features) + "]");
  }
}

template <class Score>
CacheState top_n(std::size_t features, std::size_t n, Score&& score) {
  require_capacity(n, features);
  std::vector<std::uint32_t> ids(features);
  std::iota(ids.begin(), ids.end(), std::uint32_t{1});
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(),
                    [&](std::uint32_t a, std::uint32_t b) {
                      const auto sa = score(a), sb = score(b);
                      return sa != sb ? sa > sb : a < b;
                    });
  ids.resize(n);
  std::sort(ids.begin(), ids.end());
  return {n, std::move(ids)};
}

}  // namespace

PopularityScores predict_popularity(const DecodeFn& decoder, const Tensor& samples) {
  if (samples.empty() || samples.rank() != 2 || samples.dim(0) == 0) {
    throw UsageError("popularity prediction needs at least one generated sample");
  }
  const Tensor decoded = decoder(samples);
  if (decoded.rank() != 2 || decoded.dim(0) != samples.dim(0)) {
    throw UsageError("decoder returned " + shape_string(decoded.shape()) + " for " + std::to_string(samples.dim(0)) +
                     " samples");
  }
  const std::size_t u = decoded.dim(0), f = decoded.dim(1);
  PopularityScores out{std::vector<Real>(f, Real(0))};
  for (std::size_t r = 0; r < u; ++r) {
    const auto row = decoded.row(r);
    for (std::size_t j = 0; j < f; ++j) out.scores[j] += row[j];
  }
  for (auto& s : out.scores) {
    s /= static_cast<Real>(u);
    if (!std::isfinite(s)) throw NumericError("non-finite popularity score");
  }
  return out;
}

bool CacheState::contains(std::uint32_t id) const { return std::binary_search(cached.begin(), cached.end(), id); }

CacheState select_top_n(std::span<const Real> scores, std::size_t n) {
  return top_n(scores.size(), n, [&](std::uint32_t id) { return scores[id - 1]; });
}

CacheState oracle_policy(const RequestTrace& trace, std::size_t n, std::size_t features) {
  require_trace(trace);
  std::vector<std::size_t> counts(features, 0);
  for (auto id : trace.requests) {
    if (id < 1 || id > features) throw UsageError("request id " + std::to_string(id) + " outside the library");
    ++counts[id - 1];
  }
  return top_n(features, n, [&](std::uint32_t id) { return counts[id - 1]; });
}

CacheState random_policy(std::size_t n, std::size_t features, std::uint64_t seed) {
  require_capacity(n, features);
  std::vector<std::uint32_t> ids(features);
  std::iota(ids.begin(), ids.end(), std::uint32_t{1});
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) std::swap(ids[i], ids[i + rng.below(features - i)]);
  ids.resize(n);
  std::sort(ids.begin(), ids.end());
  return {n, std::move(ids)};
}

double mean_delay(double hit_percentage, const DelayModel& delay) {
  return delay.miss_ms - (hit_percentage / 100.0) * (delay.miss_ms - delay.hit_ms);
}

namespace {

Evaluation finish(std::size_t hits, std::size_t total, const DelayModel& delay) {
  Evaluation e;
  e.hits = hits;
  e.misses = total - hits;
  e.hit_percentage = static_cast<double>(hits) / static_cast<double>(total) * 100.0;
  e.mean_delay_ms = mean_delay(e.hit_percentage, delay);
  return e;
}

void require_delay(const DelayModel& delay) {
  if (!(delay.hit_ms > 0 && delay.hit_ms < delay.miss_ms)) {
    throw ConfigError("delay model needs 0 < d_hit < d_miss");
  }
}

}  // namespace

Evaluation evaluate(const CacheState& cache, const RequestTrace& trace, const DelayModel& delay) {
  require_trace(trace);
  require_delay(delay);
  std::size_t hits = 0;
  for (auto id : trace.requests) hits += cache.contains(id) ? 1 : 0;
  return finish(hits, trace.requests.size(), delay);
}

Evaluation thompson_policy(ThompsonState& state, const RequestTrace& trace, std::size_t n, std::size_t epochs,
                           std::uint64_t seed, const DelayModel& delay) {
  require_trace(trace);
  require_delay(delay);
  if (epochs < 1) throw ConfigError("Thompson sampling needs at least one epoch");
  const std::size_t features = state.a.size();
  require_capacity(n, features);
  Rng rng(seed);
  std::vector<double> theta(features);
  const std::size_t total = trace.requests.size();
  std::size_t hits = 0;
  for (std::size_t e = 0; e < epochs; ++e) {
    for (std::size_t f = 0; f < features; ++f) theta[f] = rng.beta(state.a[f], state.b[f]);
    const CacheState cache = top_n(features, n, [&](std::uint32_t id) { return theta[id - 1]; });
    const std::size_t begin = e * total / epochs, end = (e + 1) * total / epochs;
    for (std::size_t k = begin; k < end; ++k) {
      const auto id = trace.requests[k];
      if (id < 1 || id > features) throw UsageError("request id " + std::to_string(id) + " outside the library");
      if (cache.contains(id)) {
        ++hits;
        state.a[id - 1] += 1.0;
      } else {
        state.b[id - 1] += 1.0;
      }
    }
  }
  return finish(hits, total, delay);
}

namespace {

class ScorePolicy final : public CachePolicy {
 public:
  ScorePolicy(std::string name, PopularityScores scores) : name_(std::move(name)), scores_(std::move(scores)) {}
  std::string name() const override { return name_; }
  Evaluation run(const RequestTrace& trace, std::size_t capacity, const DelayModel& delay,
                 std::uint64_t) const override {
    return evaluate(select_top_n(scores_, capacity), trace, delay);
  }

 private:
  std::string name_;
  PopularityScores scores_;
};

class OraclePolicy final : public CachePolicy {
 public:
  explicit OraclePolicy(std::size_t features) : features_(features) {}
  std::string name() const override { return "oracle"; }
  Evaluation run(const RequestTrace& trace, std::size_t capacity, const DelayModel& delay,
                 std::uint64_t) const override {
    return evaluate(oracle_policy(trace, capacity, features_), trace, delay);
  }

 private:
  std::size_t features_;
};

class ThompsonPolicy final : public CachePolicy {
 public:
  ThompsonPolicy(std::size_t features, std::size_t epochs) : features_(features), epochs_(epochs) {}
  std::string name() const override { return "thompson"; }
  Evaluation run(const RequestTrace& trace, std::size_t capacity, const DelayModel& delay,
                 std::uint64_t seed) const override {
    ThompsonState state(features_);
    return thompson_policy(state, trace, capacity, epochs_, seed, delay);
  }

 private:
  std::size_t features_;
  std::size_t epochs_;
};

class RandomPolicy final : public CachePolicy {
 public:
  explicit RandomPolicy(std::size_t features) : features_(features) {}
  std::string name() const override { return "random"; }
  Evaluation run(const RequestTrace& trace, std::size_t capacity, const DelayModel& delay,
                 std::uint64_t seed) const override {
    return evaluate(random_policy(capacity, features_, seed), trace, delay);
  }

 private:
  std::size_t features_;
};

}  // namespace

std::unique_ptr<CachePolicy> make_score_policy(std::string name, PopularityScores scores) {
  return std::make_unique<ScorePolicy>(std::move(name), std::move(scores));
}
std::unique_ptr<CachePolicy> make_oracle_policy(std::size_t features) {
  return std::make_unique<OraclePolicy>(features);
}
std::unique_ptr<CachePolicy> make_thompson_policy(std::size_t features, std::size_t epochs) {
  return std::make_unique<ThompsonPolicy>(features, epochs);
}
std::unique_ptr<CachePolicy> make_random_policy(std::size_t features) {
  return std::make_unique<RandomPolicy>(features);
}

std::vector<SweepRow> sweep(std::span<const CachePolicy* const> policies, std::span<const std::size_t> capacities,
                            const RequestTrace& trace, const DelayModel& delay, std::uint64_t seed,
                            unsigned workers) {
  if (capacities.empty()) throw ConfigError("capacity list is empty");
  if (!std::is_sorted(capacities.begin(), capacities.end())) throw ConfigError("capacities must be ascending");
  const std::size_t nc = capacities.size();
  std::vector<SweepRow> rows(policies.size() * nc);
  parallel_for(rows.size(), workers, [&](std::size_t cell) {
    const std::size_t p = cell / nc, c = cell % nc;
    const auto cell_seed = derive_seed(seed, {0xCAC4E, p, capacities[c]});
    rows[cell] = {policies[p]->name(), capacities[c], policies[p]->run(trace, capacities[c], delay, cell_seed), seed};
  });
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << kSweepCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.policy << ',' << r.capacity << ',' << format_real(r.result.hit_percentage) << ','
        << format_real(r.result.mean_delay_ms) << ',' << r.seed << '\n';
  }
  return out.str();
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << sweep_csv(rows);
}

}  // namespace fedcache
