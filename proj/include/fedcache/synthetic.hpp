// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedcache/data.hpp"

namespace fedcache {

/// Knobs of the stand-in ratings generator used when the ml-1m file is not
/// available. Defaults mirror the ml-1m marginals: user, movie and rating
/// counts, at least 20 ratings per user, long-tailed movie popularity.
struct SyntheticSpec {
  std::size_t users = 6'040;
  std::size_t movies = 3'952;
  std::size_t ratings = 1'000'209;
  std::size_t min_per_user = 20;
  std::size_t max_per_user = 2'314;
  std::size_t genres = 18;
  double popularity_sigma = 1.6;  // log-normal spread of movie appeal
  double taste_concentration = 0.3;
  std::uint64_t seed = 1;
};

/// Users pick movies with probability proportional to appeal times genre
/// affinity; within a user, newer movies tend to be rated later, so a
/// temporal split sees mild popularity drift.
std::vector<Rating> generate_synthetic_ratings(const SyntheticSpec& spec);

/// Writes records in `UserID::MovieID::Rating::Timestamp` form.
void write_ratings_dat(const std::filesystem::path& path, std::span<const Rating> ratings);

}  // namespace fedcache
