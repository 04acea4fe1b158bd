// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "fedcache/diffusion.hpp"
#include "fedcache/graph.hpp"
#include "fedcache/models.hpp"
#include "fedcache/parameter_set.hpp"
#include "fedcache/tensor.hpp"

namespace fedcache {

/// One simulated FL participant. `latents` holds the client's data points
/// already mapped through the frozen encoder, one row per raw vector.
struct ClientState {
  std::size_t id = 0;
  Tensor latents;  // (n, D); empty when the client holds no data
  std::size_t data_size = 0;
  std::uint64_t seed = 0;
};

/// Builds a client and derives its private seed from (federation seed, id).
ClientState make_client(std::size_t id, Tensor latents, std::uint64_t federation_seed);

enum class AggregationMode {
  FedAvg,   // w <- w - eta * sum_i (|d_i|/d) (w - w_i); eta = 1 is the weighted mean
  Literal,  // w <- w - eta * sum_i (|d_i|/d) w_i, applied literally
};

struct FederationConfig {
  std::size_t rounds = 30;            // R_max
  std::size_t local_iterations = 30;  // e
  std::size_t batch_size = 32;
  Real eta_d = Real(0.0006);
  Real server_lr = Real(1.0);
  int steps = 50;  // T
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::uint64_t seed = 0;
  AggregationMode mode = AggregationMode::FedAvg;
  unsigned workers = 1;
};

struct LocalResult {
  ParameterSet params;
  Real mean_loss = 0;
  bool skipped = false;  // client had no data; excluded from aggregation
};

/// Picks a minibatch of row indices: the full set (in order) when
/// batch == n, a sorted uniform subset without replacement when batch < n,
/// and `batch` draws with replacement when batch > n.
std::vector<std::size_t> select_minibatch(std::size_t n, std::size_t batch, Rng& rng);

/// Stream seeds used by local training in a given round.
std::uint64_t minibatch_seed(const ClientState& client, std::size_t round);
std::uint64_t noise_seed(const ClientState& client, std::size_t round);

/// e iterations of minibatch SGD on the diffusion objective, starting from a
/// private copy of `global`.
LocalResult local_train(const ClientState& client, const Graph& denoiser, const ParameterSet& global,
                        const NoiseSchedule& schedule, const FederationConfig& config, std::size_t round);

struct WeightedModel {
  const ParameterSet* params = nullptr;
  std::size_t data_size = 0;
};

/// Server aggregation. Contributions are combined in a canonical order
/// (data size, then parameter checksum), so the result is bitwise
/// independent of the order of `locals`.
ParameterSet aggregate(const ParameterSet& global, std::span<const WeightedModel> locals, Real server_lr,
                       AggregationMode mode = AggregationMode::FedAvg);

struct RoundReport {
  std::size_t round = 0;  // 1-based
  Real client_mean_loss = 0;
  std::vector<Real> client_losses;
  double seconds = 0;
  std::uint64_t checksum = 0;
};

struct TrainingOutcome {
  ParameterSet global;
  std::vector<RoundReport> reports;
  double seconds = 0;
};

using RoundCallback = std::function<void(const RoundReport&)>;

/// R_max rounds of broadcast -> local training on every client ->
/// aggregation. Clients train concurrently on up to config.workers threads;
/// the result does not depend on the worker count.
TrainingOutcome run_training(std::span<const ClientState> clients, const DenoiserModel& initial,
                             const FederationConfig& config, const RoundCallback& on_round = {});

void write_round_reports(const std::filesystem::path& path, std::span<const RoundReport> reports);

}  // namespace fedcache
