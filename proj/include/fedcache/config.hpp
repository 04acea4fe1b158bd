// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fedcache/federated.hpp"

namespace fedcache {

inline constexpr const char* kPolicyFederated = "ldpm-federated";
inline constexpr const char* kPolicyRaw = "ldpm-raw";
inline constexpr const char* kPolicyOracle = "oracle";
inline constexpr const char* kPolicyThompson = "thompson";
inline constexpr const char* kPolicyRandom = "random";

struct ExperimentConfig {
  std::string data_path;            // empty: FEDCACHE_DATA, or generated data
  std::string dataset = "ml-1m";    // ml-1m | synthetic
  std::uint64_t seed = 0;
  std::uint64_t synthetic_seed = 1;
  std::size_t F = 3952;
  std::size_t I = 20;
  std::size_t R_max = 30;
  std::size_t e = 30;
  std::size_t batch_size = 32;
  double eta_d = 0.0006;
  double server_lr = 1.0;
  int T = 50;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::size_t U = 1000;
  std::size_t N = 100;
  std::vector<std::size_t> capacities{50, 100, 150, 200, 250, 300, 350, 400, 450, 500};
  double public_fraction = 0.20;
  double train_fraction = 0.80;
  std::size_t ae_hidden = 100;
  std::size_t latent_dim = 16;
  std::size_t ae_epochs = 200;
  double ae_lr = 0.01;
  std::size_t ae_batch_size = 32;
  std::size_t thompson_epochs = 20;
  double d_hit = 10.0;
  double d_miss = 50.0;
  AggregationMode aggregation_mode = AggregationMode::FedAvg;
  std::vector<std::string> policies{kPolicyFederated, kPolicyRaw, kPolicyOracle, kPolicyThompson, kPolicyRandom};

  bool has_policy(std::string_view name) const;
};

/// Parses `key = value` lines; `#` starts a comment. Unknown or repeated
/// keys, malformed values and constraint violations throw ConfigError
/// naming the key and line.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Checks cross-field constraints; throws ConfigError naming the key.
void validate(const ExperimentConfig& config);

/// Canonical text with every key; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& config);

std::string_view aggregation_mode_name(AggregationMode mode);

/// Documentation of every key with its default, for --help.
std::string config_reference();

}  // namespace fedcache
