// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedcache/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fedcache/diffusion.hpp"
#include "fedcache/error.hpp"
#include "fedcache/format.hpp"
#include "fedcache/synthetic.hpp"

#ifndef FEDCACHE_VERSION
#define FEDCACHE_VERSION "unknown"
#endif

namespace fedcache {

namespace {

enum SeedTag : std::uint64_t { kSplit = 1, kAutoencoder = 2, kFederation = 3, kInit = 4, kSampling = 5 };
constexpr std::uint64_t kLatentVariant = 0;
constexpr std::uint64_t kRawVariant = 1;

void note(std::ostream* log, const std::string& line) {
  if (log) *log << line << std::endl;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

RatingsDataset load_ratings(const ExperimentConfig& config) {
  std::string path = config.data_path;
  if (path.empty() && config.dataset == "ml-1m") {
    if (const char* env = std::getenv("FEDCACHE_DATA")) path = env;
  }
  if (!path.empty()) {
    auto dataset = parse_movielens(std::filesystem::path(path), config.F);
    if (config.dataset == "ml-1m") require_canonical_ml1m(dataset);
    return dataset;
  }
  if (config.dataset == "ml-1m") {
    throw IoError("no ratings file: set data_path or FEDCACHE_DATA, or use dataset = synthetic");
  }
  SyntheticSpec spec;
  spec.movies = config.F;
  spec.seed = config.synthetic_seed;
  const auto records = generate_synthetic_ratings(spec);
  std::ostringstream text;
  for (const auto& r : records) {
    text << r.user << "::" << r.movie << "::" << static_cast<unsigned>(r.value) << "::" << r.timestamp << '\n';
  }
  std::istringstream in(text.str());
  return parse_movielens(in, config.F);
}

DataSplit split_dataset(const RatingsDataset& dataset, const ExperimentConfig& config) {
  SplitPlan plan;
  plan.seed = derive_seed(config.seed, {kSplit});
  plan.public_fraction = config.public_fraction;
  plan.clients = config.I;
  plan.train_fraction = config.train_fraction;
  return make_split(dataset, plan);
}

AutoencoderModel pretrain_stage(const ExperimentConfig& config, const DataSplit& split) {
  if (split.public_vectors.empty()) throw ConfigError("public_fraction leaves no users for autoencoder pre-training");
  AutoencoderTraining training;
  training.hidden = config.ae_hidden;
  training.latent = config.latent_dim;
  training.epochs = config.ae_epochs;
  training.learning_rate = static_cast<Real>(config.ae_lr);
  training.batch_size = config.ae_batch_size;
  training.seed = derive_seed(config.seed, {kAutoencoder});
  return pretrain_autoencoder(stack_dense(split.public_vectors, config.F), training);
}

EncodedClients encode_clients(const ExperimentConfig& config, const AutoencoderModel& autoencoder, DataSplit& split,
                              bool with_raw) {
  if (autoencoder.features != config.F || autoencoder.latent != config.latent_dim) {
    throw ConfigError("autoencoder shape does not match F / latent_dim");
  }
  EncodedClients out;
  const auto latent_seed = derive_seed(config.seed, {kFederation, kLatentVariant});
  const auto raw_seed = derive_seed(config.seed, {kFederation, kRawVariant});
  for (std::size_t k = 0; k < split.clients.size(); ++k) {
    Tensor raw = stack_dense(split.clients[k], config.F);
    out.latent.push_back(make_client(k, encode_standardized(autoencoder, raw), latent_seed));
    if (with_raw) out.raw.push_back(make_client(k, std::move(raw), raw_seed));
  }
  split.clients.clear();
  split.clients.shrink_to_fit();
  return out;
}

DenoiserConfig latent_denoiser_config(const ExperimentConfig& config) {
  DenoiserConfig d;
  d.length = config.latent_dim;
  d.channels = 1;
  d.steps = config.T;
  return d;
}

DenoiserConfig raw_denoiser_config(const ExperimentConfig& config) {
  if (config.F % kRawLength != 0) throw ConfigError("raw-space baseline needs F divisible by 16");
  DenoiserConfig d;
  d.length = kRawLength;
  d.channels = config.F / kRawLength;
  d.steps = config.T;
  return d;
}

FederationConfig federation_config(const ExperimentConfig& config, std::uint64_t seed, unsigned workers) {
  FederationConfig f;
  f.rounds = config.R_max;
  f.local_iterations = config.e;
  f.batch_size = config.batch_size;
  f.eta_d = static_cast<Real>(config.eta_d);
  f.server_lr = static_cast<Real>(config.server_lr);
  f.steps = config.T;
  f.beta_start = config.beta_start;
  f.beta_end = config.beta_end;
  f.seed = seed;
  f.mode = config.aggregation_mode;
  f.workers = workers;
  return f;
}

TrainedModel train_stage(const ExperimentConfig& config, std::span<const ClientState> clients,
                         const DenoiserConfig& shape, std::uint64_t variant, unsigned workers, std::ostream* log) {
  DenoiserModel initial = make_denoiser(shape, derive_seed(config.seed, {kInit, variant}));
  const auto fed = federation_config(config, derive_seed(config.seed, {kFederation, variant}), workers);
  auto outcome = run_training(clients, initial, fed, [&](const RoundReport& r) {
    note(log, "  round " + std::to_string(r.round) + "/" + std::to_string(config.R_max) +
                  " loss=" + format_fixed(r.client_mean_loss, 5) + " (" + format_fixed(r.seconds, 2) + " s)");
  });
  initial.params = std::move(outcome.global);
  return {std::move(initial), std::move(outcome.reports), outcome.seconds};
}

Tensor generate_stage(const ExperimentConfig& config, const DenoiserModel& model, std::uint64_t variant,
                      unsigned workers) {
  const auto schedule = build_schedule(config.T, config.beta_start, config.beta_end);
  return sample(schedule, graph_epsilon(model.graph, model.params), model.config.dim(), config.U,
                derive_seed(config.seed, {kSampling, variant}), workers);
}

PopularityScores latent_popularity(const AutoencoderModel& autoencoder, const Tensor& samples) {
  return predict_popularity([&](const Tensor& z) { return decode_standardized(autoencoder, z); }, samples);
}

PopularityScores raw_popularity(const Tensor& samples) {
  return predict_popularity(
      [](const Tensor& x) {
        Tensor out = x;
        for (auto& v : out.values()) v = std::clamp(v, Real(0), Real(1));
        return out;
      },
      samples);
}

std::vector<SweepRow> evaluate_stage(const ExperimentConfig& config,
                                     const std::map<std::string, PopularityScores>& scores,
                                     const RequestTrace& trace, unsigned workers) {
  std::vector<std::unique_ptr<CachePolicy>> owned;
  for (const auto& name : config.policies) {
    if (name == kPolicyOracle) {
      owned.push_back(make_oracle_policy(config.F));
    } else if (name == kPolicyThompson) {
      owned.push_back(make_thompson_policy(config.F, config.thompson_epochs));
    } else if (name == kPolicyRandom) {
      owned.push_back(make_random_policy(config.F));
    } else {
      const auto it = scores.find(name);
      if (it == scores.end()) throw UsageError("no popularity scores for policy " + name);
      if (it->second.scores.size() != config.F) throw UsageError("popularity scores for " + name + " have wrong size");
      owned.push_back(make_score_policy(name, it->second));
    }
  }
  std::vector<const CachePolicy*> policies;
  for (const auto& p : owned) policies.push_back(p.get());
  return sweep(policies, config.capacities, trace, DelayModel{config.d_hit, config.d_miss}, config.seed, workers);
}

namespace {

std::string samples_csv(const Tensor& samples) {
  std::string out = "sample";
  for (std::size_t j = 0; j < samples.dim(1); ++j) out += ",z" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < samples.dim(0); ++i) {
    out += std::to_string(i);
    for (Real v : samples.row(i)) out += "," + format_real(static_cast<double>(v));
    out += '\n';
  }
  return out;
}

std::string rounds_csv(std::span<const RoundReport> reports) {
  std::string out = std::string(kRoundsCsvHeader) + "\n";
  for (const auto& r : reports) {
    out += std::to_string(r.round) + "," + format_real(static_cast<double>(r.client_mean_loss)) + "," +
           format_fixed(r.seconds, 3) + "," + checksum_hex(r.checksum) + "\n";
  }
  return out;
}

struct Variant {
  const char* policy;
  const char* stem;
  std::uint64_t tag;
};

}  // namespace

PipelineResult run_pipeline(const ExperimentConfig& config, const PipelineOptions& options,
                            const AutoencoderModel* autoencoder) {
  validate(config);
  const bool to_disk = !options.out_dir.empty();
  std::optional<RunManifest> manifest_store;
  if (to_disk) manifest_store.emplace(options.out_dir, config, "all");
  RunManifest* manifest = to_disk ? &*manifest_store : nullptr;
  const auto out = [&](const char* name) { return options.out_dir / name; };
  const auto emit = [&](const char* name, const std::string& text) {
    if (!to_disk) return;
    write_file(out(name), text);
    manifest->add_output(out(name));
  };

  PipelineResult result;
  note(options.log, "ingest");
  const RatingsDataset dataset = run_stage("ingest", manifest, [&] { return load_ratings(config); });
  DataSplit split = run_stage("split", manifest, [&] { return split_dataset(dataset, config); });
  if (to_disk) {
    write_split_manifest(out("split.csv"), split);
    write_request_trace(out("trace.csv"), split.test_trace);
    manifest->add_output(out("split.csv"));
    manifest->add_output(out("trace.csv"));
  }

  AutoencoderModel trained_ae;
  if (!autoencoder) {
    note(options.log, "pretrain autoencoder on " + std::to_string(split.public_vectors.size()) + " public users");
    trained_ae = run_stage("pretrain", manifest, [&] { return pretrain_stage(config, split); });
    autoencoder = &trained_ae;
  }
  if (to_disk) {
    save_autoencoder(*autoencoder, out("autoencoder"));
    manifest->add_output(out("autoencoder.flpm"));
    manifest->add_output(out("autoencoder.arch.txt"));
    if (autoencoder == &trained_ae) manifest->record_checksum("pretrain", autoencoder->params.checksum());
  }

  const bool want_raw = config.has_policy(kPolicyRaw);
  EncodedClients clients =
      run_stage("encode", manifest, [&] { return encode_clients(config, *autoencoder, split, want_raw); });
  const RequestTrace trace = std::move(split.test_trace);
  result.test_requests = trace.requests.size();

  const Variant variants[] = {{kPolicyFederated, "denoiser", kLatentVariant}, {kPolicyRaw, "raw_denoiser", kRawVariant}};
  for (const auto& v : variants) {
    if (!config.has_policy(v.policy)) continue;
    const bool raw = v.tag == kRawVariant;
    const auto shape = raw ? raw_denoiser_config(config) : latent_denoiser_config(config);
    const std::string train_name = raw ? "train-raw" : "train";
    const std::string sample_name = raw ? "sample-raw" : "sample";
    note(options.log, train_name + ": " + std::to_string(config.R_max) + " rounds, " + std::to_string(config.I) +
                          " clients");
    TrainedModel trained = run_stage(train_name, manifest, [&] {
      return train_stage(config, raw ? clients.raw : clients.latent, shape, v.tag, options.workers, options.log);
    });
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor samples =
        run_stage(sample_name, manifest, [&] { return generate_stage(config, trained.model, v.tag, options.workers); });
    const double seconds = trained.train_seconds + seconds_since(t0);
    PopularityScores scores = raw ? raw_popularity(samples) : latent_popularity(*autoencoder, samples);
    if (raw) {
      result.raw_training_seconds = seconds;
    } else {
      result.training_seconds = seconds;
      result.reports = trained.reports;
    }
    if (to_disk) {
      save_denoiser(trained.model, options.out_dir / v.stem);
      manifest->add_output(options.out_dir / (std::string(v.stem) + ".flpm"));
      manifest->add_output(options.out_dir / (std::string(v.stem) + ".arch.txt"));
      manifest->record_checksum(train_name, trained.model.params.checksum());
      const std::string pop = raw ? "popularity_raw.csv" : "popularity.csv";
      write_popularity_csv(options.out_dir / pop, scores);
      manifest->add_output(options.out_dir / pop);
      manifest->record_checksum(sample_name, file_checksum(options.out_dir / pop));
      emit(raw ? "rounds_raw.csv" : "rounds.csv", rounds_csv(trained.reports));
      if (options.dump_latents && !raw) emit("latents.csv", samples_csv(samples));
    }
    result.scores.emplace(v.policy, std::move(scores));
  }
  clients = {};

  note(options.log, "evaluate " + std::to_string(trace.requests.size()) + " requests");
  result.rows = run_stage("evaluate", manifest, [&] { return evaluate_stage(config, result.scores, trace, options.workers); });
  if (to_disk) {
    emit("results.csv", sweep_csv(result.rows));
    manifest->record_checksum("evaluate", file_checksum(out("results.csv")));
    manifest->finish();
  }
  return result;
}

SweepAxis parse_sweep_axis(std::string_view name) {
  if (name == "T") return SweepAxis::T;
  if (name == "capacity") return SweepAxis::Capacity;
  if (name == "clients") return SweepAxis::Clients;
  throw ConfigError("unknown sweep axis '" + std::string(name) + "' (expected T, capacity or clients)");
}

std::string_view sweep_axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::T: return "T";
    case SweepAxis::Capacity: return "capacity";
    case SweepAxis::Clients: return "clients";
  }
  return "?";
}

std::vector<AxisRun> run_sweep(const ExperimentConfig& config, SweepAxis axis, const std::vector<std::size_t>& values,
                               const PipelineOptions& options) {
  if (values.empty()) throw ConfigError("sweep axis values are empty");
  validate(config);
  std::vector<AxisRun> runs;
  if (axis == SweepAxis::Capacity) {
    ExperimentConfig c = config;
    c.capacities = values;
    validate(c);
    runs.push_back({0, run_pipeline(c, options)});
    return runs;
  }
  // The public users, and so the autoencoder, do not depend on T or I.
  const AutoencoderModel autoencoder = run_stage("pretrain", nullptr, [&] {
    return pretrain_stage(config, split_dataset(load_ratings(config), config));
  });
  for (const std::size_t value : values) {
    ExperimentConfig c = config;
    if (axis == SweepAxis::T) {
      c.T = static_cast<int>(value);
    } else {
      c.I = value;
    }
    validate(c);
    PipelineOptions o = options;
    if (!o.out_dir.empty()) o.out_dir /= std::string(sweep_axis_name(axis)) + "_" + std::to_string(value);
    note(options.log, std::string(sweep_axis_name(axis)) + " = " + std::to_string(value));
    runs.push_back({value, run_pipeline(c, o, &autoencoder)});
  }
  return runs;
}

std::string axis_csv(SweepAxis axis, const std::vector<AxisRun>& runs) {
  std::string out = std::string(kAxisCsvHeader) + "\n";
  for (const auto& run : runs) {
    const std::string value = axis == SweepAxis::Capacity ? "" : std::to_string(run.value);
    for (const auto& r : run.result.rows) {
      out += std::string(sweep_axis_name(axis)) + "," + value + "," + r.policy + "," + std::to_string(r.capacity) + "," +
             format_real(r.result.hit_percentage) + "," + format_real(r.result.mean_delay_ms) + "," +
             std::to_string(r.seed) + "\n";
    }
  }
  return out;
}

std::string timing_csv(SweepAxis axis, const std::vector<AxisRun>& runs, std::uint64_t seed) {
  std::string out = std::string(kTimingCsvHeader) + "\n";
  for (const auto& run : runs) {
    out += std::string(sweep_axis_name(axis)) + "," + std::to_string(run.value) + "," + std::to_string(seed) + "," +
           format_fixed(run.result.training_seconds, 3) + "\n";
  }
  return out;
}

void write_popularity_csv(const std::filesystem::path& path, const PopularityScores& scores) {
  std::string out = std::string(kPopularityCsvHeader) + "\n";
  for (std::size_t f = 0; f < scores.scores.size(); ++f) {
    out += std::to_string(f + 1) + "," + format_real(static_cast<double>(scores.scores[f])) + "\n";
  }
  write_file(path, out);
}

PopularityScores read_popularity_csv(const std::filesystem::path& path, std::size_t features) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kPopularityCsvHeader) throw FormatError(path.string() + ": bad header");
  PopularityScores scores{std::vector<Real>(features, Real(0))};
  std::vector<bool> seen(features, false);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comma = line.find(',');
    std::size_t id = 0;
    double value = 0;
    const char* end = line.data() + line.size();
    if (comma == std::string::npos ||
        std::from_chars(line.data(), line.data() + comma, id).ptr != line.data() + comma ||
        std::from_chars(line.data() + comma + 1, end, value).ptr != end || id < 1 || id > features || seen[id - 1]) {
      throw FormatError(path.string() + ": malformed line " + std::to_string(line_no));
    }
    seen[id - 1] = true;
    scores.scores[id - 1] = static_cast<Real>(value);
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw FormatError(path.string() + ": expected one score per content id");
  }
  return scores;
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return fnv1a(bytes.str());
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

RunManifest::RunManifest(std::filesystem::path out_dir, const ExperimentConfig& config, std::string command)
    : out_dir_(std::move(out_dir)), config_text_(to_text(config)), command_(std::move(command)), started_(utc_now()) {
  write();
}

void RunManifest::stage_done(const std::string& stage, double seconds) {
  stages_.push_back({stage, "done", seconds, std::nullopt, {}});
  write();
}

void RunManifest::record_checksum(const std::string& stage, std::uint64_t checksum) {
  for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) {
    if (it->name == stage) {
      it->checksum = checksum;
      write();
      return;
    }
  }
}

void RunManifest::stage_failed(const std::string& stage, const std::string& message) {
  stages_.push_back({stage, "failed", 0, std::nullopt, message});
  status_ = "partial";
  write();
}

void RunManifest::add_output(const std::filesystem::path& file) {
  if (std::find(outputs_.begin(), outputs_.end(), file) == outputs_.end()) outputs_.push_back(file);
}

void RunManifest::finish() {
  status_ = "complete";
  finished_ = utc_now();
  write();
}

void RunManifest::write() const {
  nlohmann::ordered_json j;
  j["tool"] = "fedcache";
  j["version"] = FEDCACHE_VERSION;
  j["command"] = command_;
  j["status"] = status_;
  j["started_utc"] = started_;
  if (!finished_.empty()) j["finished_utc"] = finished_;
  j["config_text"] = config_text_;
  auto& cfg = j["config"] = nlohmann::ordered_json::object();
  std::istringstream lines(config_text_);
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) cfg[line.substr(0, eq)] = line.substr(eq + 3);
  }
  auto& stages = j["stages"] = nlohmann::ordered_json::array();
  for (const auto& s : stages_) {
    nlohmann::ordered_json e{{"name", s.name}, {"status", s.status}, {"seconds", s.seconds}};
    if (s.checksum) e["checksum"] = checksum_hex(*s.checksum);
    if (!s.message.empty()) e["error"] = s.message;
    stages.push_back(std::move(e));
  }
  auto& outputs = j["outputs"] = nlohmann::ordered_json::array();
  for (const auto& f : outputs_) outputs.push_back(f.lexically_relative(out_dir_).generic_string());
  const std::string name = command_ == "all" ? "manifest.json" : "manifest-" + command_ + ".json";
  write_file(out_dir_ / name, j.dump(2) + "\n");
}

}  // namespace fedcache
