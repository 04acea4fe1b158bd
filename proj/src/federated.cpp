// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedcache/federated.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>

#include "fedcache/error.hpp"
#include "fedcache/format.hpp"
#include "fedcache/loss.hpp"
#include "fedcache/parallel.hpp"

namespace fedcache {

ClientState make_client(std::size_t id, Tensor latents, std::uint64_t federation_seed) {
  ClientState c;
  c.id = id;
  c.data_size = latents.empty() ? 0 : latents.dim(0);
  c.latents = std::move(latents);
  c.seed = derive_seed(federation_seed, {0xC1, id});
  return c;
}

std::uint64_t minibatch_seed(const ClientState& client, std::size_t round) {
  return derive_seed(client.seed, {round, 0});
}

std::uint64_t noise_seed(const ClientState& client, std::size_t round) { return derive_seed(client.seed, {round, 1}); }

std::vector<std::size_t> select_minibatch(std::size_t n, std::size_t batch, Rng& rng) {
  if (n == 0 || batch == 0) throw UsageError("minibatch selection needs data and a positive batch size");
  std::vector<std::size_t> picked;
  if (batch == n) {
    picked.resize(n);
    std::iota(picked.begin(), picked.end(), 0);
  } else if (batch > n) {
    picked.resize(batch);
    for (auto& p : picked) p = static_cast<std::size_t>(rng.below(n));
  } else {
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < batch; ++i) {
      std::swap(pool[i], pool[i + static_cast<std::size_t>(rng.below(n - i))]);
    }
    picked.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(batch));
    std::sort(picked.begin(), picked.end());
  }
  return picked;
}

LocalResult local_train(const ClientState& client, const Graph& denoiser, const ParameterSet& global,
                        const NoiseSchedule& schedule, const FederationConfig& config, std::size_t round) {
  LocalResult result{global, 0, false};
  result.params.zero_grad();
  if (client.data_size == 0 || client.latents.empty()) {
    result.skipped = true;
    return result;
  }
  if (client.latents.dim(0) != client.data_size) throw ConfigError("client latent rows != data size");
  Rng picker(minibatch_seed(client, round));
  DiffusionTrainer trainer(schedule, denoiser, noise_seed(client, round));
  double total = 0;
  for (std::size_t k = 0; k < config.local_iterations; ++k) {
    const auto rows = select_minibatch(client.data_size, config.batch_size, picker);
    const Tensor batch = gather_rows(client.latents, rows);
    total += trainer.training_loss(result.params, batch);
    sgd_step(result.params, config.eta_d);
  }
  if (config.local_iterations > 0) result.mean_loss = static_cast<Real>(total / static_cast<double>(config.local_iterations));
  return result;
}

ParameterSet aggregate(const ParameterSet& global, std::span<const WeightedModel> locals, Real server_lr,
                       AggregationMode mode) {
  if (locals.empty()) throw ProtocolError("aggregation needs at least one local model");
  std::size_t total = 0;
  for (const auto& l : locals) {
    if (l.params == nullptr || !l.params->same_structure(global)) {
      throw ProtocolError("local model structure differs from the global model");
    }
    total += l.data_size;
  }
  if (total == 0) throw ProtocolError("total client data size is zero");

  struct Keyed {
    std::size_t size;
    std::uint64_t checksum;
    const ParameterSet* params;
  };
  std::vector<Keyed> order;
  order.reserve(locals.size());
  for (const auto& l : locals) order.push_back({l.data_size, l.params->checksum(), l.params});
  std::sort(order.begin(), order.end(), [](const Keyed& a, const Keyed& b) {
    return a.size != b.size ? a.size < b.size : a.checksum < b.checksum;
  });

  ParameterSet next = global;
  next.zero_grad();
  for (std::size_t p = 0; p < next.size(); ++p) {
    Tensor weighted(next.at(p).value.shape());
    for (const auto& k : order) {
      const Real w = static_cast<Real>(static_cast<double>(k.size) / static_cast<double>(total));
      const Real* src = k.params->at(p).value.raw();
      for (std::size_t i = 0; i < weighted.size(); ++i) weighted[i] += w * src[i];
    }
    Real* dst = next.at(p).value.raw();
    if (mode == AggregationMode::FedAvg) {
      // w - eta * sum_i p_i (w - w_i) with sum_i p_i = 1.
      for (std::size_t i = 0; i < weighted.size(); ++i) dst[i] = (Real(1) - server_lr) * dst[i] + server_lr * weighted[i];
    } else {
      for (std::size_t i = 0; i < weighted.size(); ++i) dst[i] = dst[i] - server_lr * weighted[i];
    }
  }
  return next;
}

TrainingOutcome run_training(std::span<const ClientState> clients, const DenoiserModel& initial,
                             const FederationConfig& config, const RoundCallback& on_round) {
  if (config.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(config.eta_d >= Real(0))) throw ConfigError("eta_d must be non-negative");
  if (config.steps != initial.config.steps) throw ConfigError("denoiser was built for a different T");
  const bool any_data =
      std::any_of(clients.begin(), clients.end(), [](const ClientState& c) { return c.data_size > 0; });
  if (!any_data) throw ConfigError("every client is empty; nothing to train on");

  const NoiseSchedule schedule = build_schedule(config.steps, config.beta_start, config.beta_end);
  TrainingOutcome outcome{initial.params, {}, 0};
  outcome.global.zero_grad();
  const auto started = std::chrono::steady_clock::now();

  for (std::size_t round = 1; round <= config.rounds; ++round) {
    const auto round_start = std::chrono::steady_clock::now();
    const ParameterSet& broadcast = outcome.global;
    std::vector<LocalResult> results(clients.size());
    parallel_for(clients.size(), config.workers, [&](std::size_t i) {
      results[i] = local_train(clients[i], initial.graph, broadcast, schedule, config, round);
    });

    std::vector<WeightedModel> uploads;
    RoundReport report;
    report.round = round;
    double loss_sum = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
      if (results[i].skipped) continue;
      uploads.push_back({&results[i].params, clients[i].data_size});
      report.client_losses.push_back(results[i].mean_loss);
      loss_sum += results[i].mean_loss;
    }
    outcome.global = aggregate(outcome.global, uploads, config.server_lr, config.mode);
    report.client_mean_loss = static_cast<Real>(loss_sum / static_cast<double>(uploads.size()));
    report.checksum = outcome.global.checksum();
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - round_start).count();
    if (on_round) on_round(report);
    outcome.reports.push_back(std::move(report));
  }
  outcome.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return outcome;
}

void write_round_reports(const std::filesystem::path& path, std::span<const RoundReport> reports) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "round,client_mean_loss,seconds,checksum\n";
  for (const auto& r : reports) {
    out << r.round << ',' << format_real(r.client_mean_loss) << ',' << format_real(r.seconds) << ','
        << checksum_hex(r.checksum) << '\n';
  }
}

}  // namespace fedcache
