// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedcache/tensor.hpp"

namespace fedcache {

inline constexpr std::size_t kMl1mRecords = 1'000'209;
inline constexpr std::size_t kMl1mUsers = 6'040;

struct Rating {
  std::uint32_t user = 0;
  std::uint32_t movie = 0;  // 1-based content id in [1, F]
  std::uint8_t value = 0;   // 1..5
  std::int64_t timestamp = 0;

  friend bool operator==(const Rating&, const Rating&) = default;
};

struct RatingsDataset {
  std::vector<Rating> records;
  std::size_t n_users = 0;
  std::size_t n_movies = 0;  // distinct rated movies
  std::size_t features = 3952;
  std::size_t malformed_lines = 0;
};

/// Parses `UserID::MovieID::Rating::Timestamp` lines (ml-1m ratings.dat).
/// Lines that do not parse, or whose movie/rating fall outside [1, F] /
/// [1, 5], are counted as malformed; more than 0.1% malformed, or no valid
/// record at all, is a FormatError. Bytes outside ASCII are never
/// interpreted, so latin-1 and UTF-8 files both load.
RatingsDataset parse_movielens(std::istream& in, std::size_t features = 3952);
RatingsDataset parse_movielens(const std::filesystem::path& path, std::size_t features = 3952);

/// Throws FormatError unless the dataset has the canonical ml-1m counts.
void require_canonical_ml1m(const RatingsDataset& dataset);

/// Sparse view of a dense rating vector: value = rating / 5 at the 0-based
/// position movie_id - 1, zero elsewhere.
struct UserVector {
  std::uint32_t user_id = 0;
  std::vector<std::pair<std::uint32_t, Real>> entries;  // sorted by position

  std::size_t nonzeros() const noexcept { return entries.size(); }
  Tensor dense(std::size_t features) const;
};

/// One vector per user present in `ratings`, ordered by user id.
std::vector<UserVector> build_user_vectors(std::span<const Rating> ratings, std::size_t features);

/// Stacks vectors into an (n, F) matrix.
Tensor stack_dense(std::span<const UserVector> vectors, std::size_t features);

struct SplitPlan {
  std::uint64_t seed = 0;
  double public_fraction = 0.20;
  std::size_t clients = 20;
  double train_fraction = 0.80;
};

/// Each held-out rating is one content request.
struct RequestTrace {
  std::vector<std::uint32_t> requests;
};

struct UserAssignment {
  std::uint32_t user_id = 0;
  int group = -1;  // -1 = public, k >= 0 = client k
};

struct DataSplit {
  std::vector<UserVector> public_vectors;
  std::vector<std::vector<UserVector>> clients;
  RequestTrace test_trace;
  std::vector<UserAssignment> assignments;  // sorted by user id
  std::size_t train_ratings = 0;            // all users, public included
  std::size_t test_ratings = 0;             // client users only
};

/// Partitions users into a public pre-training set and `clients` FL
/// partitions, and splits each user's ratings in time order into a training
/// prefix and held-out requests. The public set depends only on the seed
/// and public fraction, not on the client count.
DataSplit make_split(const RatingsDataset& dataset, const SplitPlan& plan);

void write_split_manifest(const std::filesystem::path& path, const DataSplit& split);
void write_request_trace(const std::filesystem::path& path, const RequestTrace& trace);

}  // namespace fedcache
