// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedcache/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "fedcache/error.hpp"
#include "fedcache/rng.hpp"

namespace fedcache {

namespace {

constexpr std::int64_t kEpochStart = 956'703'932;  // 2000-04-25
constexpr std::int64_t kEpochSpan = 90'000'000;    // ~2.85 years

std::vector<std::size_t> ratings_per_user(const SyntheticSpec& spec, Rng& rng) {
  const std::size_t n = spec.users;
  std::vector<double> raw(n);
  for (auto& x : raw) x = std::exp(1.1 * rng.normal());
  const double free_total = static_cast<double>(spec.ratings - n * spec.min_per_user);
  const double scale = free_total / std::accumulate(raw.begin(), raw.end(), 0.0);
  std::vector<std::size_t> counts(n);
  std::size_t total = 0;
  for (std::size_t u = 0; u < n; ++u) {
    counts[u] = std::min(spec.max_per_user, spec.min_per_user + static_cast<std::size_t>(raw[u] * scale));
    total += counts[u];
  }
  // Nudge random users until the total matches exactly.
  while (total != spec.ratings) {
    const std::size_t u = rng.below(n);
    if (total < spec.ratings && counts[u] < spec.max_per_user) {
      ++counts[u];
      ++total;
    } else if (total > spec.ratings && counts[u] > spec.min_per_user) {
      --counts[u];
      --total;
    }
  }
  return counts;
}

}  // namespace

std::vector<Rating> generate_synthetic_ratings(const SyntheticSpec& spec) {
  if (spec.users == 0 || spec.movies == 0 || spec.genres == 0) throw ConfigError("synthetic sizes must be positive");
  if (spec.min_per_user > spec.max_per_user || spec.max_per_user > spec.movies) {
    throw ConfigError("synthetic per-user rating bounds are inconsistent");
  }
  if (spec.ratings < spec.users * spec.min_per_user || spec.ratings > spec.users * spec.max_per_user) {
    throw ConfigError("synthetic rating total is unreachable with the per-user bounds");
  }
  Rng rng(derive_seed(spec.seed, {0x5E7}));
  const std::size_t G = spec.genres;

  std::vector<double> appeal(spec.movies), release(spec.movies), quality(spec.movies);
  std::vector<std::vector<std::size_t>> movie_genres(spec.movies);
  for (std::size_t m = 0; m < spec.movies; ++m) {
    appeal[m] = std::exp(spec.popularity_sigma * rng.normal());
    release[m] = rng.uniform();
    quality[m] = 0.45 * rng.normal();
    const std::size_t k = 1 + rng.below(3);
    for (std::size_t j = 0; j < k; ++j) movie_genres[m].push_back(rng.below(G));
  }

  const auto counts = ratings_per_user(spec, rng);
  std::vector<Rating> out;
  out.reserve(spec.ratings);
  std::vector<double> taste(G), keys(spec.movies), affinity(spec.movies);
  std::vector<std::size_t> order(spec.movies);

  for (std::size_t u = 0; u < spec.users; ++u) {
    double tsum = 0.0;
    for (auto& t : taste) tsum += (t = rng.gamma(spec.taste_concentration) + 1e-12);
    for (auto& t : taste) t = t * static_cast<double>(G) / tsum;
    const double bias = 0.35 * rng.normal();

    // Weighted sampling without replacement: largest u^(1/w) keys win.
    for (std::size_t m = 0; m < spec.movies; ++m) {
      double a = 0.0;
      for (auto g : movie_genres[m]) a += taste[g];
      affinity[m] = a / static_cast<double>(movie_genres[m].size());
      const double w = appeal[m] * (0.15 + affinity[m]);
      keys[m] = std::log(std::max(rng.uniform(), 1e-300)) / w;
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t n = counts[u];
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n - 1), order.end(),
                     [&](std::size_t a, std::size_t b) { return keys[a] > keys[b]; });
    std::vector<std::size_t> picked(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(picked.begin(), picked.end());

    // Activity window: most users rate in a short burst.
    const auto start = kEpochStart + static_cast<std::int64_t>(rng.uniform() * 0.8 * kEpochSpan);
    const auto span = static_cast<std::int64_t>(3600.0 + std::exp(10.0 + 2.5 * rng.normal()));
    const std::int64_t step = std::max<std::int64_t>(1, span / static_cast<std::int64_t>(n));
    std::vector<std::pair<double, std::size_t>> timeline;
    timeline.reserve(n);
    for (auto m : picked) timeline.emplace_back(0.6 * rng.uniform() + 0.4 * release[m], m);
    std::sort(timeline.begin(), timeline.end());
    for (std::size_t k = 0; k < n; ++k) {
      const auto m = timeline[k].second;
      const double stars = 3.58 + quality[m] + bias + 0.8 * (affinity[m] - 1.0) + 0.9 * rng.normal();
      Rating r;
      r.user = static_cast<std::uint32_t>(u + 1);
      r.movie = static_cast<std::uint32_t>(m + 1);
      r.value = static_cast<std::uint8_t>(std::clamp(std::lround(stars), 1L, 5L));
      r.timestamp = start + static_cast<std::int64_t>(k) * step;
      out.push_back(r);
    }
  }
  return out;
}

void write_ratings_dat(const std::filesystem::path& path, std::span<const Rating> ratings) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& r : ratings) {
    out << r.user << "::" << r.movie << "::" << static_cast<unsigned>(r.value) << "::" << r.timestamp << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace fedcache
