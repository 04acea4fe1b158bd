// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "fedcache/data.hpp"
#include "fedcache/error.hpp"
#include "fedcache/synthetic.hpp"

using namespace fedcache;

namespace {

RatingsDataset parse_text(const std::string& text, std::size_t features = 3952) {
  std::istringstream in(text);
  return parse_movielens(in, features);
}

// Small dataset: `users` users with `per_user` ratings each, distinct timestamps.
RatingsDataset small_dataset(std::uint32_t users, std::uint32_t per_user) {
  std::ostringstream text;
  for (std::uint32_t u = 1; u <= users; ++u) {
    for (std::uint32_t k = 0; k < per_user; ++k) {
      text << u << "::" << (1 + (u * 7 + k * 13) % 50) << "::" << (1 + (u + k) % 5) << "::" << (1000 + 10 * k) << '\n';
    }
  }
  return parse_text(text.str(), 50);
}

const RatingsDataset& synthetic_full() {
  static const RatingsDataset ds = [] {
    std::ostringstream text;
    RatingsDataset d;
    d.records = generate_synthetic_ratings(SyntheticSpec{});
    std::set<std::uint32_t> users, movies;
    for (const auto& r : d.records) {
      users.insert(r.user);
      movies.insert(r.movie);
    }
    d.n_users = users.size();
    d.n_movies = movies.size();
    return d;
  }();
  return ds;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("first ml-1m record parses") {
    const auto ds = parse_text("1::1193::5::978300760\n");
    REQUIRE(ds.records.size() == 1);
    CHECK(ds.records[0] == Rating{1, 1193, 5, 978300760});
    CHECK(ds.n_users == 1);
    CHECK(ds.n_movies == 1);
  }

  TEST_CASE("CRLF line endings and blank lines are tolerated") {
    const auto ds = parse_text("1::1::3::5\r\n\n2::2::4::6\r\n");
    CHECK(ds.records.size() == 2);
    CHECK(ds.malformed_lines == 0);
  }

  TEST_CASE("empty input is a format error") {
    CHECK_THROWS_AS(parse_text(""), FormatError);
    CHECK_THROWS_AS(parse_text("\n\n"), FormatError);
  }

  TEST_CASE("malformed lines are counted and bounded") {
    std::string text;
    for (int i = 0; i < 2000; ++i) text += "1::" + std::to_string(1 + i % 100) + "::4::" + std::to_string(i) + "\n";
    const auto ok = parse_text(text + "garbage\n1::9999::5::1\n");
    CHECK(ok.malformed_lines == 2);
    CHECK(ok.records.size() == 2000);
    CHECK_THROWS_AS(parse_text(text + "x\ny\nz\n"), FormatError);
    CHECK_THROWS_AS(parse_text("1::1::0::1\n1::1::6::1\n"), FormatError);
  }

  TEST_CASE("unreadable files are I/O errors") {
    CHECK_THROWS_AS(parse_movielens(std::filesystem::path("/nonexistent/ratings.dat")), IoError);
  }

  TEST_CASE("canonical count check") {
    const auto ds = small_dataset(3, 3);
    CHECK_THROWS_AS(require_canonical_ml1m(ds), FormatError);
  }

  TEST_CASE("user vectors") {
    const std::vector<Rating> one{{42, 7, 5, 1}};
    const auto v = build_user_vectors(one, 10);
    REQUIRE(v.size() == 1);
    const Tensor d = v[0].dense(10);
    // Movie id m sits at position m - 1.
    for (std::size_t i = 0; i < 10; ++i) CHECK(d[i] == (i == 6 ? Real(1) : Real(0)));
    CHECK(v[0].user_id == 42);

    const auto ds = small_dataset(5, 8);
    const auto all = build_user_vectors(ds.records, 50);
    CHECK(all.size() == 5);
    std::size_t nnz = 0;
    for (const auto& u : all) {
      nnz += u.nonzeros();
      CHECK(u.nonzeros() >= 1);
      for (const auto& [pos, val] : u.entries) {
        CHECK(pos < 50);
        CHECK(val > 0);
        CHECK(val <= 1);
      }
    }
    const Tensor stacked = stack_dense(all, 50);
    CHECK(stacked.shape() == Shape{5, 50});
  }

  TEST_CASE("split is a partition with disjoint exhaustive train/test") {
    const auto ds = small_dataset(40, 10);
    SplitPlan plan;
    plan.seed = 3;
    plan.clients = 4;
    const auto split = make_split(ds, plan);
    CHECK(split.public_vectors.size() == 8);
    CHECK(split.clients.size() == 4);
    std::map<std::uint32_t, int> seen;
    for (const auto& v : split.public_vectors) seen[v.user_id] = -1;
    for (std::size_t k = 0; k < split.clients.size(); ++k) {
      CHECK(split.clients[k].size() == 8);
      for (const auto& v : split.clients[k]) {
        CHECK(seen.count(v.user_id) == 0);
        seen[v.user_id] = static_cast<int>(k);
      }
    }
    CHECK(seen.size() == 40);
    REQUIRE(split.assignments.size() == 40);
    for (const auto& a : split.assignments) CHECK(seen.at(a.user_id) == a.group);

    // 8 of 10 ratings per user train; 2 held out for each of the 32 client users.
    CHECK(split.train_ratings == 40 * 8);
    CHECK(split.test_ratings == 32 * 2);
    CHECK(split.test_trace.requests.size() == split.test_ratings);
    std::size_t nnz = 0;
    for (const auto& v : split.public_vectors) nnz += v.nonzeros();
    for (const auto& c : split.clients) {
      for (const auto& v : c) nnz += v.nonzeros();
    }
    CHECK(nnz == split.train_ratings);
  }

  TEST_CASE("held-out ratings are the latest ones") {
    std::string text;
    for (int k = 0; k < 10; ++k) text += "1::" + std::to_string(k + 1) + "::3::" + std::to_string(100 - k) + "\n";
    SplitPlan plan;
    plan.public_fraction = 0;
    plan.clients = 1;
    const auto split = make_split(parse_text(text, 20), plan);
    // Timestamps decrease with movie id, so movies 1 and 2 are the two latest.
    auto req = split.test_trace.requests;
    std::sort(req.begin(), req.end());
    CHECK(req == std::vector<std::uint32_t>{1, 2});
    REQUIRE(split.clients[0].size() == 1);
    for (const auto& [pos, val] : split.clients[0][0].entries) CHECK(pos >= 2);
  }

  TEST_CASE("split edge cases") {
    const auto ds = small_dataset(10, 5);
    SplitPlan plan;
    plan.public_fraction = 0;
    plan.clients = 1;
    auto split = make_split(ds, plan);
    CHECK(split.public_vectors.empty());
    CHECK(split.clients[0].size() == 10);
    plan.clients = 11;
    CHECK_THROWS_AS(make_split(ds, plan), ConfigError);
    plan.clients = 0;
    CHECK_THROWS_AS(make_split(ds, plan), ConfigError);
    plan.clients = 2;
    plan.public_fraction = 1.0;
    CHECK_THROWS_AS(make_split(ds, plan), ConfigError);
  }

  TEST_CASE("split is reproducible and seed-dependent") {
    const auto ds = small_dataset(30, 6);
    SplitPlan plan;
    plan.clients = 3;
    plan.seed = 5;
    const auto a = make_split(ds, plan);
    const auto b = make_split(ds, plan);
    CHECK(a.test_trace.requests == b.test_trace.requests);
    bool same = true;
    plan.seed = 6;
    const auto c = make_split(ds, plan);
    for (std::size_t i = 0; i < a.assignments.size(); ++i) {
      CHECK(a.assignments[i].group == b.assignments[i].group);
      same = same && a.assignments[i].group == c.assignments[i].group;
    }
    CHECK_FALSE(same);
  }

  TEST_CASE("default split deals about 241 users per client") {
    const auto& ds = synthetic_full();
    CHECK(ds.records.size() == kMl1mRecords);
    CHECK(ds.n_users == kMl1mUsers);
    const auto split = make_split(ds, SplitPlan{});
    CHECK(split.public_vectors.size() == 1208);
    for (const auto& c : split.clients) {
      CHECK(c.size() >= 241);
      CHECK(c.size() <= 242);
    }
    std::size_t nnz = 0;
    for (const auto& v : split.public_vectors) nnz += v.nonzeros();
    for (const auto& c : split.clients) {
      for (const auto& v : c) nnz += v.nonzeros();
    }
    CHECK(nnz == split.train_ratings);
    CHECK(split.test_trace.requests.size() == split.test_ratings);
  }
}

TEST_SUITE("synthetic") {
  TEST_CASE("generator matches the requested marginals") {
    SyntheticSpec spec;
    spec.users = 300;
    spec.movies = 500;
    spec.ratings = 30'000;
    spec.max_per_user = 400;
    const auto r = generate_synthetic_ratings(spec);
    CHECK(r.size() == 30'000);
    std::map<std::uint32_t, std::size_t> per_user;
    std::set<std::pair<std::uint32_t, std::uint32_t>> pairs;
    for (const auto& x : r) {
      ++per_user[x.user];
      pairs.insert({x.user, x.movie});
      CHECK(x.movie >= 1);
      CHECK(x.movie <= 500);
      CHECK(x.value >= 1);
      CHECK(x.value <= 5);
    }
    CHECK(pairs.size() == r.size());
    CHECK(per_user.size() == 300);
    for (const auto& [u, n] : per_user) {
      CHECK(n >= 20);
      CHECK(n <= 400);
    }
    CHECK(generate_synthetic_ratings(spec) == r);
  }

  TEST_CASE("written files parse back") {
    SyntheticSpec spec;
    spec.users = 50;
    spec.movies = 100;
    spec.ratings = 2'000;
    spec.max_per_user = 90;
    const auto r = generate_synthetic_ratings(spec);
    const auto path = std::filesystem::temp_directory_path() / "fedcache_synth_test.dat";
    write_ratings_dat(path, r);
    const auto ds = parse_movielens(path, 100);
    CHECK(ds.records == r);
    std::filesystem::remove(path);
  }
}
