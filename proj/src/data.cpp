// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedcache/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <string_view>
#include <unordered_set>

#include "fedcache/error.hpp"
#include "fedcache/rng.hpp"

namespace fedcache {

namespace {

template <class T>
bool parse_field(std::string_view text, T& out) {
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

bool parse_line(std::string_view line, std::size_t features, Rating& r) {
  std::string_view fields[4];
  for (int i = 0; i < 3; ++i) {
    const auto sep = line.find("::");
    if (sep == std::string_view::npos) return false;
    fields[i] = line.substr(0, sep);
    line.remove_prefix(sep + 2);
  }
  fields[3] = line;
  unsigned rating = 0;
  if (!parse_field(fields[0], r.user) || !parse_field(fields[1], r.movie) || !parse_field(fields[2], rating) ||
      !parse_field(fields[3], r.timestamp)) {
    return false;
  }
  if (r.movie < 1 || r.movie > features || rating < 1 || rating > 5) return false;
  r.value = static_cast<std::uint8_t>(rating);
  return true;
}

}  // namespace

RatingsDataset parse_movielens(std::istream& in, std::size_t features) {
  if (features == 0) throw ConfigError("content library size F must be positive");
  RatingsDataset ds;
  ds.features = features;
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    std::string_view view(line);
    while (!view.empty() && (view.back() == '\r' || view.back() == ' ')) view.remove_suffix(1);
    if (view.empty()) continue;
    ++lines;
    Rating r;
    if (parse_line(view, features, r)) {
      ds.records.push_back(r);
    } else {
      ++ds.malformed_lines;
    }
  }
  if (ds.records.empty()) throw FormatError("ratings file contains no valid records");
  if (ds.malformed_lines * 1000 > lines) {
    throw FormatError(std::to_string(ds.malformed_lines) + " of " + std::to_string(lines) +
                      " lines are malformed (limit 0.1%)");
  }
  std::unordered_set<std::uint32_t> users, movies;
  for (const auto& r : ds.records) {
    users.insert(r.user);
    movies.insert(r.movie);
  }
  ds.n_users = users.size();
  ds.n_movies = movies.size();
  return ds;
}

RatingsDataset parse_movielens(const std::filesystem::path& path, std::size_t features) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read ratings file " + path.string());
  return parse_movielens(in, features);
}

void require_canonical_ml1m(const RatingsDataset& dataset) {
  if (dataset.records.size() != kMl1mRecords || dataset.n_users != kMl1mUsers) {
    throw FormatError("expected the canonical ml-1m file (" + std::to_string(kMl1mRecords) + " ratings, " +
                      std::to_string(kMl1mUsers) + " users), found " + std::to_string(dataset.records.size()) +
                      " ratings from " + std::to_string(dataset.n_users) + " users");
  }
}

Tensor UserVector::dense(std::size_t features) const {
  Tensor out({features});
  for (const auto& [pos, value] : entries) out[pos] = value;
  return out;
}

std::vector<UserVector> build_user_vectors(std::span<const Rating> ratings, std::size_t features) {
  std::map<std::uint32_t, std::map<std::uint32_t, Real>> by_user;
  for (const auto& r : ratings) {
    if (r.movie < 1 || r.movie > features) throw ConfigError("movie id outside the content library");
    by_user[r.user][r.movie - 1] = static_cast<Real>(r.value) / Real(5);
  }
  std::vector<UserVector> out;
  out.reserve(by_user.size());
  for (auto& [user, cells] : by_user) {
    UserVector v{user, {}};
    v.entries.assign(cells.begin(), cells.end());
    out.push_back(std::move(v));
  }
  return out;
}

Tensor stack_dense(std::span<const UserVector> vectors, std::size_t features) {
  if (vectors.empty()) throw ConfigError("cannot stack an empty vector set");
  Tensor out({vectors.size(), features});
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    auto row = out.row(i);
    for (const auto& [pos, value] : vectors[i].entries) row[pos] = value;
  }
  return out;
}

DataSplit make_split(const RatingsDataset& dataset, const SplitPlan& plan) {
  if (plan.clients == 0) throw ConfigError("client count I must be positive");
  if (!(plan.public_fraction >= 0.0 && plan.public_fraction < 1.0)) {
    throw ConfigError("public_fraction must lie in [0, 1)");
  }
  if (!(plan.train_fraction > 0.0 && plan.train_fraction <= 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1]");
  }

  std::map<std::uint32_t, std::vector<Rating>> by_user;
  for (const auto& r : dataset.records) by_user[r.user].push_back(r);
  std::vector<std::uint32_t> users;
  users.reserve(by_user.size());
  for (const auto& [u, _] : by_user) users.push_back(u);

  Rng rng(derive_seed(plan.seed, {0x5B117}));
  rng.shuffle(std::span<std::uint32_t>(users));
  const auto n_public =
      static_cast<std::size_t>(std::llround(plan.public_fraction * static_cast<double>(users.size())));
  const std::size_t n_clients_users = users.size() - n_public;
  if (plan.clients > n_clients_users) {
    throw ConfigError("I = " + std::to_string(plan.clients) + " exceeds the " + std::to_string(n_clients_users) +
                      " available non-public users");
  }

  DataSplit split;
  split.clients.resize(plan.clients);
  struct Request {
    std::int64_t timestamp;
    std::uint32_t user, movie;
  };
  std::vector<Request> held_out;

  for (std::size_t i = 0; i < users.size(); ++i) {
    const std::uint32_t user = users[i];
    auto& ratings = by_user[user];
    std::sort(ratings.begin(), ratings.end(), [](const Rating& a, const Rating& b) {
      return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.movie < b.movie;
    });
    auto n_train = static_cast<std::size_t>(std::floor(plan.train_fraction * static_cast<double>(ratings.size()) + 1e-9));
    n_train = std::clamp<std::size_t>(n_train, 1, ratings.size());
    split.train_ratings += n_train;

    auto vectors = build_user_vectors(std::span<const Rating>(ratings).first(n_train), dataset.features);
    const bool is_public = i < n_public;
    const int group = is_public ? -1 : static_cast<int>((i - n_public) % plan.clients);
    split.assignments.push_back({user, group});
    if (is_public) {
      split.public_vectors.push_back(std::move(vectors.front()));
      continue;
    }
    split.clients[static_cast<std::size_t>(group)].push_back(std::move(vectors.front()));
    for (std::size_t k = n_train; k < ratings.size(); ++k) {
      held_out.push_back({ratings[k].timestamp, user, ratings[k].movie});
    }
  }

  std::sort(held_out.begin(), held_out.end(), [](const Request& a, const Request& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    if (a.user != b.user) return a.user < b.user;
    return a.movie < b.movie;
  });
  split.test_trace.requests.reserve(held_out.size());
  for (const auto& r : held_out) split.test_trace.requests.push_back(r.movie);
  split.test_ratings = held_out.size();
  std::sort(split.assignments.begin(), split.assignments.end(),
            [](const UserAssignment& a, const UserAssignment& b) { return a.user_id < b.user_id; });
  return split;
}

void write_split_manifest(const std::filesystem::path& path, const DataSplit& split) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "user_id,assignment\n";
  for (const auto& a : split.assignments) {
    out << a.user_id << ',' << (a.group < 0 ? std::string("public") : "client_" + std::to_string(a.group)) << '\n';
  }
}

void write_request_trace(const std::filesystem::path& path, const RequestTrace& trace) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "movie_id\n";
  for (auto id : trace.requests) out << id << '\n';
}

}  // namespace fedcache
