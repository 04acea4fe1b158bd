// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <string>

#include "fedcache/config.hpp"
#include "fedcache/error.hpp"

using namespace fedcache;

namespace {

std::string error_of(std::string_view text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("empty text yields the documented defaults") {
    const auto c = parse_config("");
    CHECK(c.T == 50);
    CHECK(c.I == 20);
    CHECK(c.N == 100);
    CHECK(c.U == 1000);
    CHECK(c.eta_d == 0.0006);
    CHECK(c.e == 30);
    CHECK(c.F == 3952);
    CHECK(c.server_lr == 1.0);
    CHECK(c.beta_start == 1e-4);
    CHECK(c.beta_end == 0.02);
    CHECK(c.public_fraction == 0.2);
    CHECK(c.train_fraction == 0.8);
    CHECK(c.capacities.front() == 50);
    CHECK(c.capacities.back() == 500);
    CHECK(c.capacities.size() == 10);
    CHECK(c.aggregation_mode == AggregationMode::FedAvg);
    CHECK(parse_config("# only a comment\n\n").T == 50);
  }

  TEST_CASE("values, comments and lists parse") {
    const auto c = parse_config("T = 10  # fewer steps\nI=5\ncapacities = 10, 20,30\npolicies = oracle,thompson\n"
                                "aggregation_mode = literal\ndataset = synthetic\n");
    CHECK(c.T == 10);
    CHECK(c.I == 5);
    CHECK(c.capacities == std::vector<std::size_t>{10, 20, 30});
    CHECK(c.has_policy("oracle"));
    CHECK_FALSE(c.has_policy(kPolicyFederated));
    CHECK(c.aggregation_mode == AggregationMode::Literal);
  }

  TEST_CASE("errors name the key and line") {
    const auto t0 = error_of("seed = 1\nT = 0\n");
    CHECK(t0.find("'T'") != std::string::npos);
    CHECK(t0.find("line 2") != std::string::npos);
    CHECK(error_of("bogus = 1").find("bogus") != std::string::npos);
    CHECK(error_of("I = many").find("'I'") != std::string::npos);
    CHECK(error_of("T = 5\nT = 6").find("line 2") != std::string::npos);
    CHECK(error_of("no equals sign").find("line 1") != std::string::npos);
    CHECK_FALSE(error_of("beta_start = 0.5\nbeta_end = 0.1").empty());
    CHECK_FALSE(error_of("d_hit = 60").empty());
    CHECK_FALSE(error_of("capacities = 100, 50").empty());
    CHECK_FALSE(error_of("N = 4000").empty());
    CHECK_FALSE(error_of("policies = oracle, lru").empty());
    CHECK_FALSE(error_of("aggregation_mode = median").empty());
    CHECK_FALSE(error_of("dataset = netflix").empty());
    CHECK_FALSE(error_of("F = 1000").empty());  // raw baseline needs F % 16 == 0
    CHECK(error_of("F = 1000\npolicies = oracle").empty());
  }

  TEST_CASE("decimal text round-trips") {
    const auto c = parse_config("eta_d = 0.0006");
    const auto text = to_text(c);
    CHECK(text.find("eta_d = 0.0006\n") != std::string::npos);
    CHECK(parse_config(text).eta_d == 0.0006);
  }

  TEST_CASE("to_text is a fixed point of parse") {
    ExperimentConfig c;
    c.seed = 12345678901234ull;
    c.eta_d = 0.00123;
    c.capacities = {5, 7};
    c.policies = {kPolicyOracle};
    c.aggregation_mode = AggregationMode::Literal;
    c.data_path = "/tmp/x y/ratings.dat";
    const auto text = to_text(c);
    CHECK(to_text(parse_config(text)) == text);
    CHECK(parse_config(text).data_path == c.data_path);
  }

  TEST_CASE("load_config reports missing files") {
    CHECK_THROWS_AS(load_config("/nonexistent/fedcache.conf"), ConfigError);
  }

  TEST_CASE("reference lists every key") {
    const auto ref = config_reference();
    for (const char* key : {"T", "I", "R_max", "e", "eta_d", "U", "N", "capacities", "aggregation_mode", "policies"}) {
      CHECK(ref.find(key) != std::string::npos);
    }
  }
}
