// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedcache/data.hpp"
#include "fedcache/tensor.hpp"

namespace fedcache {

/// Per-content popularity; scores[f - 1] belongs to content id f.
struct PopularityScores {
  std::vector<Real> scores;
};

/// Maps generated samples (U, D) to rating space (U, F).
using DecodeFn = std::function<Tensor(const Tensor&)>;

/// Column means of the decoded samples.
PopularityScores predict_popularity(const DecodeFn& decoder, const Tensor& samples);

struct CacheState {
  std::size_t capacity = 0;
  std::vector<std::uint32_t> cached;  // sorted ascending, 1-based ids

  bool contains(std::uint32_t id) const;
};

/// The N highest scores; ties go to the smaller id.
CacheState select_top_n(std::span<const Real> scores, std::size_t n);
inline CacheState select_top_n(const PopularityScores& scores, std::size_t n) {
  return select_top_n(std::span<const Real>(scores.scores), n);
}

/// Hindsight cache: the N most requested ids of the trace.
CacheState oracle_policy(const RequestTrace& trace, std::size_t n, std::size_t features);

/// N distinct ids drawn uniformly.
CacheState random_policy(std::size_t n, std::size_t features, std::uint64_t seed);

struct DelayModel {
  double hit_ms = 10.0;
  double miss_ms = 50.0;
};

struct Evaluation {
  double hit_percentage = 0;
  double mean_delay_ms = 0;
  std::size_t hits = 0;
  std::size_t misses = 0;
};

/// mean_delay_ms = miss - (hit% / 100) * (miss - hit).
double mean_delay(double hit_percentage, const DelayModel& delay);

Evaluation evaluate(const CacheState& cache, const RequestTrace& trace, const DelayModel& delay = {});

struct ThompsonState {
  std::vector<double> a;
  std::vector<double> b;

  explicit ThompsonState(std::size_t features) : a(features, 1.0), b(features, 1.0) {}
};

/// Online Beta-Bernoulli bandit over the trace split into `epochs` equal
/// slices. Each epoch caches the top N of theta_f ~ Beta(a_f, b_f), then
/// replays its slice: a hit bumps a_f, a miss bumps b_f of the requested
/// item. Returns the hit rate over the whole trace.
Evaluation thompson_policy(ThompsonState& state, const RequestTrace& trace, std::size_t n, std::size_t epochs,
                           std::uint64_t seed, const DelayModel& delay = {});

/// A policy evaluated at one cache capacity.
class CachePolicy {
 public:
  virtual ~CachePolicy() = default;
  virtual std::string name() const = 0;
  virtual Evaluation run(const RequestTrace& trace, std::size_t capacity, const DelayModel& delay,
                         std::uint64_t seed) const = 0;
};

std::unique_ptr<CachePolicy> make_score_policy(std::string name, PopularityScores scores);
std::unique_ptr<CachePolicy> make_oracle_policy(std::size_t features);
std::unique_ptr<CachePolicy> make_thompson_policy(std::size_t features, std::size_t epochs);
std::unique_ptr<CachePolicy> make_random_policy(std::size_t features);

struct SweepRow {
  std::string policy;
  std::size_t capacity = 0;
  Evaluation result;
  std::uint64_t seed = 0;
};

/// Every policy at every capacity, rows ordered policy-major. Cells run on
/// up to `workers` threads with per-cell seeds derived from `seed`.
std::vector<SweepRow> sweep(std::span<const CachePolicy* const> policies, std::span<const std::size_t> capacities,
                            const RequestTrace& trace, const DelayModel& delay, std::uint64_t seed,
                            unsigned workers = 1);

inline constexpr const char* kSweepCsvHeader = "policy,capacity,hit_percentage,mean_delay_ms,seed";
std::string sweep_csv(std::span<const SweepRow> rows);
void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);

}  // namespace fedcache
