// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fedcache/cachesim.hpp"
#include "fedcache/config.hpp"
#include "fedcache/data.hpp"
#include "fedcache/federated.hpp"
#include "fedcache/models.hpp"

namespace fedcache {

inline constexpr std::size_t kRawLength = 16;

struct PipelineOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  unsigned workers = 1;
  bool dump_latents = false;
  std::ostream* log = nullptr;  // progress lines, may be null
};

/// Reads config.data_path (or FEDCACHE_DATA). With dataset = synthetic and
/// no path, generates the surrogate in memory.
RatingsDataset load_ratings(const ExperimentConfig& config);

DataSplit split_dataset(const RatingsDataset& dataset, const ExperimentConfig& config);

AutoencoderModel pretrain_stage(const ExperimentConfig& config, const DataSplit& split);

/// What the federation sees after encoding: one latent matrix per client
/// and, for the raw-space baseline, the identity-encoded vectors.
struct EncodedClients {
  std::vector<ClientState> latent;
  std::vector<ClientState> raw;  // empty unless requested
};

/// Encodes every client partition and then clears `split.clients`, so no
/// later stage can reach raw client vectors.
EncodedClients encode_clients(const ExperimentConfig& config, const AutoencoderModel& autoencoder, DataSplit& split,
                              bool with_raw);

DenoiserConfig latent_denoiser_config(const ExperimentConfig& config);
DenoiserConfig raw_denoiser_config(const ExperimentConfig& config);
FederationConfig federation_config(const ExperimentConfig& config, std::uint64_t seed, unsigned workers);

struct TrainedModel {
  DenoiserModel model;
  std::vector<RoundReport> reports;
  double train_seconds = 0;
};

/// Federated training of a fresh denoiser. `variant` separates the seed
/// streams of the latent and raw-space models.
TrainedModel train_stage(const ExperimentConfig& config, std::span<const ClientState> clients,
                         const DenoiserConfig& shape, std::uint64_t variant, unsigned workers,
                         std::ostream* log = nullptr);

/// U ancestral samples from a trained denoiser.
Tensor generate_stage(const ExperimentConfig& config, const DenoiserModel& model, std::uint64_t variant,
                      unsigned workers);

/// Popularity from generated latents through the autoencoder decoder.
PopularityScores latent_popularity(const AutoencoderModel& autoencoder, const Tensor& samples);
/// Popularity from raw-space samples; the identity decoder clamps to [0, 1].
PopularityScores raw_popularity(const Tensor& samples);

/// Sweeps every configured policy over config.capacities. `scores` supplies
/// the learned policies by name.
std::vector<SweepRow> evaluate_stage(const ExperimentConfig& config,
                                     const std::map<std::string, PopularityScores>& scores,
                                     const RequestTrace& trace, unsigned workers);

struct PipelineResult {
  std::vector<SweepRow> rows;
  std::map<std::string, PopularityScores> scores;
  std::vector<RoundReport> reports;
  /// Federated training plus popularity sampling of the latent model.
  double training_seconds = 0;
  double raw_training_seconds = 0;
  std::size_t test_requests = 0;
};

/// ingest -> split -> pretrain -> encode -> train -> sample -> predict ->
/// sweep. `autoencoder`, when given, skips pre-training.
PipelineResult run_pipeline(const ExperimentConfig& config, const PipelineOptions& options,
                            const AutoencoderModel* autoencoder = nullptr);

enum class SweepAxis { T, Capacity, Clients };
SweepAxis parse_sweep_axis(std::string_view name);
std::string_view sweep_axis_name(SweepAxis axis);

struct AxisRun {
  std::size_t value = 0;
  PipelineResult result;
};

/// One pipeline per axis value, sharing the split seed and the pre-trained
/// autoencoder. For the capacity axis `values` replaces the capacity list in
/// a single run.
std::vector<AxisRun> run_sweep(const ExperimentConfig& config, SweepAxis axis, const std::vector<std::size_t>& values,
                               const PipelineOptions& options);

inline constexpr const char* kAxisCsvHeader = "axis,value,policy,capacity,hit_percentage,mean_delay_ms,seed";
inline constexpr const char* kTimingCsvHeader = "axis,value,seed,training_seconds";
inline constexpr const char* kPopularityCsvHeader = "movie_id,score";
inline constexpr const char* kRoundsCsvHeader = "round,client_mean_loss,seconds,checksum";

/// Long-format results of a sweep, one block of rows per axis value.
std::string axis_csv(SweepAxis axis, const std::vector<AxisRun>& runs);
/// Per-run training seconds; wall-clock, so excluded from determinism checks.
std::string timing_csv(SweepAxis axis, const std::vector<AxisRun>& runs, std::uint64_t seed);

void write_popularity_csv(const std::filesystem::path& path, const PopularityScores& scores);
PopularityScores read_popularity_csv(const std::filesystem::path& path, std::size_t features);

/// FNV-1a over a file's bytes.
std::uint64_t file_checksum(const std::filesystem::path& path);

/// Writes `text` to `path`, creating parent directories.
void write_file(const std::filesystem::path& path, const std::string& text);

/// Run manifest kept in `<out>/manifest.json` (`manifest-<command>.json`
/// for single-stage commands). Written on construction,
/// before any stage executes, and rewritten after each stage.
class RunManifest {
 public:
  RunManifest(std::filesystem::path out_dir, const ExperimentConfig& config, std::string command);
  void stage_done(const std::string& stage, double seconds);
  /// Attaches a checksum to the most recent stage called `stage`.
  void record_checksum(const std::string& stage, std::uint64_t checksum);
  void stage_failed(const std::string& stage, const std::string& message);
  void add_output(const std::filesystem::path& file);
  void finish();

 private:
  void write() const;
  struct Stage {
    std::string name;
    std::string status;
    double seconds = 0;
    std::optional<std::uint64_t> checksum;
    std::string message;
  };
  std::filesystem::path out_dir_;
  std::string config_text_;
  std::string command_;
  std::string started_;
  std::string finished_;
  std::string status_ = "running";
  std::vector<Stage> stages_;
  std::vector<std::filesystem::path> outputs_;
};

/// Runs `body` as pipeline stage `name`: errors keep their kind but gain the
/// stage name, and are recorded in the manifest when there is one.
template <class Fn>
auto run_stage(const std::string& name, RunManifest* manifest, Fn&& body) -> decltype(body());

}  // namespace fedcache

#include "fedcache/pipeline_stage.hpp"
