// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedcache/models.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fedcache/error.hpp"
#include "fedcache/loss.hpp"
#include "fedcache/rng.hpp"

namespace fedcache {

namespace {

// Accepts (D) or (B, D); returns a (B, D) view copy plus whether it was unbatched.
std::pair<Tensor, bool> as_batch(const Tensor& x, std::size_t width, const char* what) {
  if (x.rank() == 1 && x.dim(0) == width) return {x.reshaped({1, width}), true};
  if (x.rank() == 2 && x.dim(1) == width) return {x, false};
  throw ConfigError(std::string(what) + " expects dimension " + std::to_string(width) + ", got shape " +
                    shape_string(x.shape()));
}

Tensor unbatch(Tensor t, bool single) {
  if (single) t.reshape({t.dim(1)});
  return t;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

// Splits "[section]" blocks of an architecture file.
std::string section(const std::string& text, const std::string& name) {
  const std::string tag = "[" + name + "]\n";
  auto begin = text.find(tag);
  if (begin == std::string::npos) throw FormatError("architecture file lacks section " + tag);
  begin += tag.size();
  auto end = text.find("\n[", begin);
  return text.substr(begin, end == std::string::npos ? std::string::npos : end + 1 - begin);
}

std::size_t header_value(const std::string& header, const std::string& key) {
  std::istringstream in(header);
  std::string field;
  while (in >> field) {
    if (field.rfind(key + "=", 0) == 0) return std::stoul(field.substr(key.size() + 1));
  }
  throw FormatError("architecture header lacks '" + key + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// Autoencoder

AutoencoderModel make_autoencoder(std::size_t features, std::size_t hidden, std::size_t latent, std::uint64_t seed) {
  AutoencoderModel m;
  m.features = features;
  m.hidden = hidden;
  m.latent = latent;

  m.encoder = Graph({features});
  auto h = m.encoder.add("enc.fc1", LayerSpec::dense(features, hidden), m.encoder.input());
  h = m.encoder.add("enc.relu1", LayerSpec::relu(), h);
  m.encoder.add("enc.fc2", LayerSpec::dense(hidden, latent), h);

  m.decoder = Graph({latent});
  auto d = m.decoder.add("dec.fc1", LayerSpec::dense(latent, hidden), m.decoder.input());
  d = m.decoder.add("dec.relu1", LayerSpec::relu(), d);
  d = m.decoder.add("dec.fc2", LayerSpec::dense(hidden, features), d);
  m.decoder.add("dec.sigmoid", LayerSpec::sigmoid(), d);

  Rng rng(seed);
  m.encoder.init_parameters(m.params, rng);
  m.decoder.init_parameters(m.params, rng);
  m.latent_mean = Tensor({latent}, Real(0));
  m.latent_std = Tensor({latent}, Real(1));
  return m;
}

Tensor encode(const AutoencoderModel& model, const Tensor& ratings) {
  auto [batch, single] = as_batch(ratings, model.features, "encode");
  return unbatch(infer(model.params, model.encoder, batch), single);
}

Tensor decode(const AutoencoderModel& model, const Tensor& latent) {
  auto [batch, single] = as_batch(latent, model.latent, "decode");
  return unbatch(infer(model.params, model.decoder, batch), single);
}

Tensor encode_standardized(const AutoencoderModel& model, const Tensor& ratings) {
  Tensor z = encode(model, ratings);
  const std::size_t width = model.latent;
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = (z[i] - model.latent_mean[i % width]) / model.latent_std[i % width];
  }
  return z;
}

Tensor decode_standardized(const AutoencoderModel& model, const Tensor& latent) {
  Tensor z = latent;
  const std::size_t width = model.latent;
  if (z.shape().back() != width) {
    throw ConfigError("decode expects dimension " + std::to_string(width) + ", got shape " +
                      shape_string(z.shape()));
  }
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = z[i] * model.latent_std[i % width] + model.latent_mean[i % width];
  return decode(model, z);
}

AutoencoderModel pretrain_autoencoder(const Tensor& public_data, const AutoencoderTraining& training) {
  if (public_data.rank() != 2 || public_data.empty()) {
    throw ConfigError("autoencoder pre-training needs a non-empty (n, F) matrix");
  }
  if (training.batch_size == 0) throw ConfigError("autoencoder batch size must be positive");
  for (Real v : public_data.values()) {
    if (!(v >= Real(0) && v <= Real(1))) throw ConfigError("autoencoder training data must lie in [0, 1]");
  }
  const std::size_t n = public_data.dim(0);
  AutoencoderModel model = make_autoencoder(public_data.dim(1), training.hidden, training.latent,
                                            derive_seed(training.seed, {0xAE}));
  Rng rng(derive_seed(training.seed, {0xAE, 1}));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < training.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < n; start += training.batch_size) {
      const std::size_t count = std::min(training.batch_size, n - start);
      Tensor batch = gather_rows(public_data, std::span<const std::size_t>(order).subspan(start, count));
      auto enc = forward(model.params, model.encoder, batch);
      auto dec = forward(model.params, model.decoder, enc.output);
      auto loss = row_squared_error(dec.output, batch);
      Tensor dlatent = backward(dec.tape, loss.grad, model.params);
      backward(enc.tape, dlatent, model.params);
      sgd_step(model.params, training.learning_rate);
    }
  }
  fit_latent_standardization(model, public_data);
  return model;
}

Real reconstruction_error(const AutoencoderModel& model, const Tensor& data) {
  constexpr std::size_t kChunk = 256;
  const std::size_t n = data.dim(0);
  double total = 0;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < n; start += kChunk) {
    rows.resize(std::min(kChunk, n - start));
    std::iota(rows.begin(), rows.end(), start);
    Tensor batch = gather_rows(data, rows);
    Tensor recon = decode(model, encode(model, batch));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double diff = recon[i] - batch[i];
      total += diff * diff;
    }
  }
  return static_cast<Real>(total / static_cast<double>(data.size()));
}

void fit_latent_standardization(AutoencoderModel& model, const Tensor& data) {
  const Tensor z = encode(model, data.rank() == 1 ? data.reshaped({1, data.dim(0)}) : data);
  const std::size_t n = z.dim(0);
  const std::size_t width = model.latent;
  std::vector<double> mean(width, 0.0), var(width, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < width; ++c) mean[c] += z[r * width + c];
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const double d = z[r * width + c] - mean[c];
      var[c] += d * d;
    }
  }
  for (std::size_t c = 0; c < width; ++c) {
    const double sd = std::sqrt(var[c] / static_cast<double>(n));
    model.latent_mean[c] = static_cast<Real>(mean[c]);
    // Collapsed coordinates keep unit scale rather than dividing by ~0.
    model.latent_std[c] = static_cast<Real>(sd > 1e-6 ? sd : 1.0);
  }
}

// ---------------------------------------------------------------------------
// Denoiser

namespace {

struct UnetBuilder {
  Graph& g;
  const DenoiserConfig& cfg;
  std::size_t time_features = 0;

  std::size_t res_block(const std::string& name, std::size_t x, std::size_t in, std::size_t out) {
    auto h = g.add(name + ".norm1", LayerSpec::layer_norm(in), x);
    h = g.add(name + ".act1", LayerSpec::silu(), h);
    h = g.add(name + ".conv1", LayerSpec::conv1d(in, out, cfg.kernel), h);
    auto t = g.add(name + ".time", LayerSpec::dense(cfg.time_hidden, out), time_features);
    h = g.add(name + ".add_time", LayerSpec::add(), {h, t});
    h = g.add(name + ".norm2", LayerSpec::layer_norm(out), h);
    h = g.add(name + ".act2", LayerSpec::silu(), h);
    h = g.add(name + ".conv2", LayerSpec::conv1d(out, out, cfg.kernel), h);
    auto skip = x;
    if (in != out) skip = g.add(name + ".skip", LayerSpec::conv1d(in, out, 1), x);
    return g.add(name + ".residual", LayerSpec::add(), {h, skip});
  }
};

}  // namespace

Graph build_unet(const DenoiserConfig& cfg) {
  if (cfg.length % 4 != 0) throw ConfigError("denoiser length must be divisible by 4 (three resolutions)");
  if (cfg.steps < 1) throw ConfigError("denoiser steps must be positive");
  const auto [w0, w1, w2] = cfg.widths;
  Graph g({cfg.dim()});
  UnetBuilder b{g, cfg};

  auto t = g.add("time.embed", LayerSpec::time_embedding(cfg.time_dim), std::vector<std::size_t>{});
  t = g.add("time.fc1", LayerSpec::dense(cfg.time_dim, cfg.time_hidden), t);
  t = g.add("time.act1", LayerSpec::silu(), t);
  t = g.add("time.fc2", LayerSpec::dense(cfg.time_hidden, cfg.time_hidden), t);
  b.time_features = g.add("time.act2", LayerSpec::silu(), t);

  auto x = g.add("reshape_in", LayerSpec::reshape({cfg.length, cfg.channels}), g.input());
  x = g.add("conv_in", LayerSpec::conv1d(cfg.channels, w0, cfg.kernel), x);

  const auto skip0 = b.res_block("down0", x, w0, w0);
  x = g.add("down0.sample", LayerSpec::downsample(w0, w0, cfg.kernel), skip0);
  const auto skip1 = b.res_block("down1", x, w0, w1);
  x = g.add("down1.sample", LayerSpec::downsample(w1, w1, cfg.kernel), skip1);
  const auto skip2 = b.res_block("down2", x, w1, w2);

  x = b.res_block("mid", skip2, w2, w2);

  x = g.add("up2.concat", LayerSpec::concat(), {x, skip2});
  x = b.res_block("up2", x, 2 * w2, w2);
  x = g.add("up2.sample", LayerSpec::upsample(), x);
  x = g.add("up2.conv", LayerSpec::conv1d(w2, w1, cfg.kernel), x);

  x = g.add("up1.concat", LayerSpec::concat(), {x, skip1});
  x = b.res_block("up1", x, 2 * w1, w1);
  x = g.add("up1.sample", LayerSpec::upsample(), x);
  x = g.add("up1.conv", LayerSpec::conv1d(w1, w0, cfg.kernel), x);

  x = g.add("up0.concat", LayerSpec::concat(), {x, skip0});
  x = b.res_block("up0", x, 2 * w0, w0);

  x = g.add("out.norm", LayerSpec::layer_norm(w0), x);
  x = g.add("out.act", LayerSpec::silu(), x);
  x = g.add("conv_out", LayerSpec::conv1d(w0, cfg.channels, cfg.kernel), x);
  g.add("reshape_out", LayerSpec::reshape({cfg.dim()}), x);
  return g;
}

DenoiserModel make_denoiser(const DenoiserConfig& config, std::uint64_t seed) {
  DenoiserModel m{config, build_unet(config), {}};
  Rng rng(seed);
  m.graph.init_parameters(m.params, rng);
  return m;
}

Tensor denoise(const DenoiserModel& model, const Tensor& x_t, int t) {
  if (t < 1 || t > model.config.steps) {
    throw UsageError("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(model.config.steps) +
                     "]");
  }
  auto [batch, single] = as_batch(x_t, model.config.dim(), "denoise");
  Tensor time({batch.dim(0)}, static_cast<Real>(t));
  return unbatch(infer(model.params, model.graph, batch, &time), single);
}

// ---------------------------------------------------------------------------
// Persistence

void save_autoencoder(const AutoencoderModel& model, const std::filesystem::path& stem) {
  ParameterSet all = model.params;
  all.add("latent.mean", model.latent_mean);
  all.add("latent.std", model.latent_std);
  save_parameters(all, with_suffix(stem, ".flpm"));
  std::ostringstream arch;
  arch << "autoencoder features=" << model.features << " hidden=" << model.hidden << " latent=" << model.latent
       << "\n[encoder]\n"
       << model.encoder.describe() << "[decoder]\n"
       << model.decoder.describe();
  write_text(with_suffix(stem, ".arch.txt"), arch.str());
}

AutoencoderModel load_autoencoder(const std::filesystem::path& stem) {
  const std::string arch = read_text(with_suffix(stem, ".arch.txt"));
  const std::string header = arch.substr(0, arch.find('\n'));
  if (header.rfind("autoencoder ", 0) != 0) throw FormatError("not an autoencoder architecture file");
  AutoencoderModel m;
  m.features = header_value(header, "features");
  m.hidden = header_value(header, "hidden");
  m.latent = header_value(header, "latent");
  m.encoder = Graph::parse(section(arch, "encoder"));
  m.decoder = Graph::parse(section(arch, "decoder"));
  ParameterSet all = load_parameters(with_suffix(stem, ".flpm"));
  for (const auto& p : all.entries()) {
    if (p.name == "latent.mean") m.latent_mean = p.value;
    else if (p.name == "latent.std") m.latent_std = p.value;
    else m.params.add(p.name, p.value);
  }
  if (m.latent_mean.size() != m.latent || m.latent_std.size() != m.latent) {
    throw FormatError("autoencoder file lacks latent standardization");
  }
  return m;
}

void save_denoiser(const DenoiserModel& model, const std::filesystem::path& stem) {
  save_parameters(model.params, with_suffix(stem, ".flpm"));
  const auto& c = model.config;
  std::ostringstream arch;
  arch << "denoiser length=" << c.length << " channels=" << c.channels << " width0=" << c.widths[0]
       << " width1=" << c.widths[1] << " width2=" << c.widths[2] << " time_dim=" << c.time_dim
       << " time_hidden=" << c.time_hidden << " kernel=" << c.kernel << " steps=" << c.steps << "\n[graph]\n"
       << model.graph.describe();
  write_text(with_suffix(stem, ".arch.txt"), arch.str());
}

DenoiserModel load_denoiser(const std::filesystem::path& stem) {
  const std::string arch = read_text(with_suffix(stem, ".arch.txt"));
  const std::string header = arch.substr(0, arch.find('\n'));
  if (header.rfind("denoiser ", 0) != 0) throw FormatError("not a denoiser architecture file");
  DenoiserModel m;
  auto& c = m.config;
  c.length = header_value(header, "length");
  c.channels = header_value(header, "channels");
  c.widths = {header_value(header, "width0"), header_value(header, "width1"), header_value(header, "width2")};
  c.time_dim = header_value(header, "time_dim");
  c.time_hidden = header_value(header, "time_hidden");
  c.kernel = header_value(header, "kernel");
  c.steps = static_cast<int>(header_value(header, "steps"));
  m.graph = Graph::parse(section(arch, "graph"));
  m.params = load_parameters(with_suffix(stem, ".flpm"));
  if (m.params.scalar_count() != m.graph.parameter_count()) {
    throw FormatError("denoiser parameters do not match its architecture");
  }
  return m;
}

}  // namespace fedcache
