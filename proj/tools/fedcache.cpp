// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment driver: ingest, pre-train, federate, predict, evaluate, sweep.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fedcache/config.hpp"
#include "fedcache/error.hpp"
#include "fedcache/format.hpp"
#include "fedcache/pipeline.hpp"
#include "fedcache/synthetic.hpp"

namespace fs = std::filesystem;
using namespace fedcache;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  unsigned workers = 1;
  std::string out = "out";
  bool dump_latents = false;
  bool quiet = false;
};

ExperimentConfig resolve_config(const Options& o) {
  std::string text;
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + o.config_path);
    std::ostringstream s;
    s << in.rdbuf();
    text = s.str();
    if (!text.empty() && text.back() != '\n') text += '\n';
  }
  for (const auto& kv : o.overrides) text += kv + "\n";
  ExperimentConfig config = parse_config(text);
  if (o.seed) config.seed = *o.seed;
  validate(config);
  return config;
}

PipelineOptions pipeline_options(const Options& o) {
  PipelineOptions p;
  p.out_dir = o.out;
  p.workers = o.workers;
  p.dump_latents = o.dump_latents;
  p.log = o.quiet ? nullptr : &std::cerr;
  return p;
}

const char* kSchemas = R"(Output files (CSV, header line first):
  results.csv         policy,capacity,hit_percentage,mean_delay_ms,seed
  sweep.csv           axis,value,policy,capacity,hit_percentage,mean_delay_ms,seed
  timing.csv          axis,value,seed,training_seconds
  popularity.csv      movie_id,score            (popularity_raw.csv for ldpm-raw)
  rounds.csv          round,client_mean_loss,seconds,checksum
  split.csv           user_id,assignment        (public | client_<k>)
  trace.csv           movie_id                  (held-out requests, time order)
  latents.csv         sample,z0,...             (--dump-latents)
Models: autoencoder.{flpm,arch.txt}, denoiser.{flpm,arch.txt}, raw_denoiser.{flpm,arch.txt}
Run record: manifest.json (all) or manifest-<command>.json

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error, 1 other.
Environment: FEDCACHE_DATA supplies data_path when the config leaves it empty.

Config keys (key = value, '#' comments; defaults shown):
)";

DataSplit ingest(const ExperimentConfig& config, RunManifest* manifest, bool report) {
  const RatingsDataset dataset = run_stage("ingest", manifest, [&] { return load_ratings(config); });
  if (report) {
    std::cout << "records " << dataset.records.size() << ", users " << dataset.n_users << ", movies "
              << dataset.n_movies << ", malformed lines " << dataset.malformed_lines << "\n";
  }
  return run_stage("split", manifest, [&] { return split_dataset(dataset, config); });
}

void write_split_files(const fs::path& out, const DataSplit& split, RunManifest& manifest) {
  write_split_manifest(out / "split.csv", split);
  write_request_trace(out / "trace.csv", split.test_trace);
  manifest.add_output(out / "split.csv");
  manifest.add_output(out / "trace.csv");
}

AutoencoderModel obtain_autoencoder(const ExperimentConfig& config, const DataSplit& split, const fs::path& out,
                                    RunManifest& manifest) {
  if (fs::exists(out / "autoencoder.flpm")) return load_autoencoder(out / "autoencoder");
  auto ae = run_stage("pretrain", &manifest, [&] { return pretrain_stage(config, split); });
  save_autoencoder(ae, out / "autoencoder");
  manifest.add_output(out / "autoencoder.flpm");
  manifest.add_output(out / "autoencoder.arch.txt");
  manifest.record_checksum("pretrain", ae.params.checksum());
  return ae;
}

int cmd_ingest(const Options& o) {
  const auto config = resolve_config(o);
  fs::create_directories(o.out);
  RunManifest manifest(o.out, config, "ingest");
  const DataSplit split = ingest(config, &manifest, true);
  write_split_files(o.out, split, manifest);
  std::cout << "public users " << split.public_vectors.size() << ", clients " << split.clients.size()
            << ", train ratings " << split.train_ratings << ", test requests " << split.test_ratings << "\n";
  manifest.finish();
  return 0;
}

int cmd_pretrain(const Options& o) {
  const auto config = resolve_config(o);
  fs::create_directories(o.out);
  RunManifest manifest(o.out, config, "pretrain-ae");
  const DataSplit split = ingest(config, &manifest, false);
  const auto ae = run_stage("pretrain", &manifest, [&] { return pretrain_stage(config, split); });
  save_autoencoder(ae, fs::path(o.out) / "autoencoder");
  manifest.add_output(fs::path(o.out) / "autoencoder.flpm");
  manifest.add_output(fs::path(o.out) / "autoencoder.arch.txt");
  manifest.record_checksum("pretrain", ae.params.checksum());
  const Tensor data = stack_dense(split.public_vectors, config.F);
  std::cout << "reconstruction error " << format_real(reconstruction_error(ae, data)) << "\n";
  manifest.finish();
  return 0;
}

int cmd_train(const Options& o) {
  const auto config = resolve_config(o);
  const fs::path out = o.out;
  fs::create_directories(out);
  RunManifest manifest(out, config, "train");
  DataSplit split = ingest(config, &manifest, false);
  const auto ae = obtain_autoencoder(config, split, out, manifest);
  const bool want_raw = config.has_policy(kPolicyRaw);
  auto clients = run_stage("encode", &manifest, [&] { return encode_clients(config, ae, split, want_raw); });
  auto log = o.quiet ? nullptr : &std::cerr;
  const auto train = [&](const char* stage, std::span<const ClientState> c, const DenoiserConfig& shape,
                         std::uint64_t variant, const char* stem, const char* rounds) {
    auto trained = run_stage(stage, &manifest, [&] { return train_stage(config, c, shape, variant, o.workers, log); });
    save_denoiser(trained.model, out / stem);
    write_round_reports(out / rounds, trained.reports);
    manifest.add_output(out / (std::string(stem) + ".flpm"));
    manifest.add_output(out / (std::string(stem) + ".arch.txt"));
    manifest.add_output(out / rounds);
    manifest.record_checksum(stage, trained.model.params.checksum());
    std::cout << stage << ": " << format_fixed(trained.train_seconds, 2) << " s\n";
  };
  if (config.has_policy(kPolicyFederated)) {
    train("train", clients.latent, latent_denoiser_config(config), 0, "denoiser", "rounds.csv");
  }
  if (want_raw) train("train-raw", clients.raw, raw_denoiser_config(config), 1, "raw_denoiser", "rounds_raw.csv");
  manifest.finish();
  return 0;
}

int cmd_predict(const Options& o) {
  const auto config = resolve_config(o);
  const fs::path out = o.out;
  RunManifest manifest(out, config, "predict");
  if (config.has_policy(kPolicyFederated)) {
    const auto ae = load_autoencoder(out / "autoencoder");
    const auto model = load_denoiser(out / "denoiser");
    if (model.config.steps != config.T) throw ConfigError("denoiser was trained with a different T");
    const Tensor samples = run_stage("sample", &manifest, [&] { return generate_stage(config, model, 0, o.workers); });
    write_popularity_csv(out / "popularity.csv", latent_popularity(ae, samples));
    manifest.add_output(out / "popularity.csv");
    manifest.record_checksum("sample", file_checksum(out / "popularity.csv"));
    if (o.dump_latents) {
      std::string text = "sample";
      for (std::size_t j = 0; j < samples.dim(1); ++j) text += ",z" + std::to_string(j);
      text += "\n";
      for (std::size_t i = 0; i < samples.dim(0); ++i) {
        text += std::to_string(i);
        for (Real v : samples.row(i)) text += "," + format_real(static_cast<double>(v));
        text += "\n";
      }
      write_file(out / "latents.csv", text);
      manifest.add_output(out / "latents.csv");
    }
  }
  if (config.has_policy(kPolicyRaw)) {
    const auto model = load_denoiser(out / "raw_denoiser");
    const Tensor samples =
        run_stage("sample-raw", &manifest, [&] { return generate_stage(config, model, 1, o.workers); });
    write_popularity_csv(out / "popularity_raw.csv", raw_popularity(samples));
    manifest.add_output(out / "popularity_raw.csv");
    manifest.record_checksum("sample-raw", file_checksum(out / "popularity_raw.csv"));
  }
  manifest.finish();
  return 0;
}

void print_headline(const std::vector<SweepRow>& rows, std::size_t n) {
  for (const auto& r : rows) {
    if (r.capacity == n) {
      std::cout << r.policy << " @ N=" << n << ": hit " << format_fixed(r.result.hit_percentage, 2) << "%, delay "
                << format_fixed(r.result.mean_delay_ms, 2) << " ms\n";
    }
  }
}

int cmd_evaluate(const Options& o) {
  const auto config = resolve_config(o);
  const fs::path out = o.out;
  fs::create_directories(out);
  RunManifest manifest(out, config, "evaluate");
  const DataSplit split = ingest(config, &manifest, false);
  std::map<std::string, PopularityScores> scores;
  if (config.has_policy(kPolicyFederated)) {
    scores.emplace(kPolicyFederated, read_popularity_csv(out / "popularity.csv", config.F));
  }
  if (config.has_policy(kPolicyRaw)) {
    scores.emplace(kPolicyRaw, read_popularity_csv(out / "popularity_raw.csv", config.F));
  }
  const auto rows =
      run_stage("evaluate", &manifest, [&] { return evaluate_stage(config, scores, split.test_trace, o.workers); });
  write_sweep_csv(out / "results.csv", rows);
  manifest.add_output(out / "results.csv");
  manifest.record_checksum("evaluate", file_checksum(out / "results.csv"));
  print_headline(rows, config.N);
  manifest.finish();
  return 0;
}

int cmd_all(const Options& o) {
  const auto config = resolve_config(o);
  const auto result = run_pipeline(config, pipeline_options(o));
  print_headline(result.rows, config.N);
  std::cout << "training time " << format_fixed(result.training_seconds, 2) << " s\n";
  return 0;
}

int cmd_sweep(const Options& o, const std::string& axis_name, const std::vector<std::size_t>& values) {
  const auto config = resolve_config(o);
  const auto axis = parse_sweep_axis(axis_name);
  const auto runs = run_sweep(config, axis, values, pipeline_options(o));
  write_file(fs::path(o.out) / "sweep.csv", axis_csv(axis, runs));
  write_file(fs::path(o.out) / "timing.csv", timing_csv(axis, runs, config.seed));
  for (const auto& run : runs) {
    if (axis != SweepAxis::Capacity) std::cout << axis_name << " = " << run.value << "\n";
    print_headline(run.result.rows, config.N);
  }
  return 0;
}

int cmd_synth(const std::string& path, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.seed = seed;
  const auto ratings = generate_synthetic_ratings(spec);
  write_ratings_dat(path, ratings);
  std::cout << "wrote " << ratings.size() << " ratings to " << path << "\n";
  return 0;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UsageError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated latent-diffusion popularity prediction for edge caching"};
  app.footer(std::string(kSchemas) + config_reference());
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config_path, "config file (key = value lines)");
  app.add_option("--set", o.overrides, "extra 'key=value' config line, applied after --config");
  app.add_option("--seed", o.seed, "master seed (overrides the config)");
  app.add_option("--workers", o.workers, "worker threads")->check(CLI::Range(1u, 1024u));
  app.add_option("--out", o.out, "output directory")->capture_default_str();
  app.add_flag("--dump-latents", o.dump_latents, "also write generated latents");
  app.add_flag("-q,--quiet", o.quiet, "no progress lines on stderr");

  auto* ingest_cmd = app.add_subcommand("ingest", "parse ratings, split users, write split.csv and trace.csv");
  auto* pretrain_cmd = app.add_subcommand("pretrain-ae", "pre-train the autoencoder on public users");
  auto* train_cmd = app.add_subcommand("train", "federated training of the denoiser(s)");
  auto* predict_cmd = app.add_subcommand("predict", "sample U latents and write popularity scores");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "sweep cache policies over the capacities");
  auto* all_cmd = app.add_subcommand("all", "run every stage end to end");
  auto* sweep_cmd = app.add_subcommand("sweep", "one pipeline per axis value, merged into sweep.csv");
  std::string axis;
  std::vector<std::size_t> values;
  sweep_cmd->add_option("--axis", axis, "T, capacity or clients")->required();
  sweep_cmd->add_option("--values", values, "axis values")->required()->delimiter(',');
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic ratings.dat stand-in");
  std::string synth_path = "ratings.dat";
  std::uint64_t synth_seed = 1;
  synth_cmd->add_option("--file", synth_path, "output path")->capture_default_str();
  synth_cmd->add_option("--synthetic-seed", synth_seed, "generator seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*ingest_cmd) return cmd_ingest(o);
    if (*pretrain_cmd) return cmd_pretrain(o);
    if (*train_cmd) return cmd_train(o);
    if (*predict_cmd) return cmd_predict(o);
    if (*evaluate_cmd) return cmd_evaluate(o);
    if (*all_cmd) return cmd_all(o);
    if (*sweep_cmd) return cmd_sweep(o, axis, values);
    if (*synth_cmd) return cmd_synth(synth_path, synth_seed);
  } catch (const std::exception& e) {
    std::cerr << "fedcache: " << e.what() << "\n";
    return exit_code(e);
  }
  return 1;
}
