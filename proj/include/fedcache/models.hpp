// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "fedcache/graph.hpp"
#include "fedcache/parameter_set.hpp"
#include "fedcache/tensor.hpp"

namespace fedcache {

inline constexpr std::size_t kDefaultContentCount = 3952;
inline constexpr std::size_t kDefaultHidden = 100;
inline constexpr std::size_t kDefaultLatent = 16;

/// Pre-trained bridge between rating space and the diffusion latent space.
/// Encoder: F -> hidden (ReLU) -> latent. Decoder: latent -> hidden (ReLU)
/// -> F (sigmoid), so decoded values always lie in [0, 1].
///
/// `latent_mean` / `latent_std` standardize encoder outputs per coordinate
/// (fitted on the pre-training data) so the diffusion model sees unit-scale
/// latents; they default to the identity transform.
struct AutoencoderModel {
  std::size_t features = kDefaultContentCount;
  std::size_t hidden = kDefaultHidden;
  std::size_t latent = kDefaultLatent;
  Graph encoder;
  Graph decoder;
  ParameterSet params;
  Tensor latent_mean;
  Tensor latent_std;
};

AutoencoderModel make_autoencoder(std::size_t features = kDefaultContentCount, std::size_t hidden = kDefaultHidden,
                                  std::size_t latent = kDefaultLatent, std::uint64_t seed = 0);

/// (F) -> (latent) or (B, F) -> (B, latent). Raw encoder output, unscaled.
Tensor encode(const AutoencoderModel& model, const Tensor& ratings);
/// (latent) -> (F) or (B, latent) -> (B, F).
Tensor decode(const AutoencoderModel& model, const Tensor& latent);

/// Encoder output mapped through the latent standardization.
Tensor encode_standardized(const AutoencoderModel& model, const Tensor& ratings);
/// Inverse standardization followed by the decoder.
Tensor decode_standardized(const AutoencoderModel& model, const Tensor& latent);

struct AutoencoderTraining {
  std::size_t hidden = kDefaultHidden;
  std::size_t latent = kDefaultLatent;
  std::size_t epochs = 200;
  Real learning_rate = Real(0.01);
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

/// Trains a freshly initialized autoencoder with minibatch SGD on
/// reconstruction error (squared error summed over the F coordinates,
/// averaged over the batch) and fits the latent standardization.
/// `public_data` is (n, F) with values in [0, 1].
AutoencoderModel pretrain_autoencoder(const Tensor& public_data, const AutoencoderTraining& training);

/// Mean elementwise squared reconstruction error over the rows of `data`.
Real reconstruction_error(const AutoencoderModel& model, const Tensor& data);

/// Per-coordinate mean and standard deviation of encoder outputs on `data`.
void fit_latent_standardization(AutoencoderModel& model, const Tensor& data);

// ---------------------------------------------------------------------------

/// Shape of the 1D U-Net noise predictor. A D-dim input (D = length *
/// channels) is viewed as a (length, channels) sequence; three resolutions
/// length -> length/2 -> length/4 with the given channel widths.
struct DenoiserConfig {
  std::size_t length = 16;
  std::size_t channels = 1;
  std::array<std::size_t, 3> widths{32, 64, 128};
  std::size_t time_dim = 64;
  std::size_t time_hidden = 256;
  std::size_t kernel = 3;
  int steps = 50;  // diffusion steps T the model is trained for

  std::size_t dim() const noexcept { return length * channels; }
};

struct DenoiserModel {
  DenoiserConfig config;
  Graph graph;
  ParameterSet params;

  std::size_t param_count() const { return params.scalar_count(); }
};

Graph build_unet(const DenoiserConfig& config);
DenoiserModel make_denoiser(const DenoiserConfig& config, std::uint64_t seed);

/// Predicted noise for x_t of shape (D) or (B, D) at step t in [1, T].
Tensor denoise(const DenoiserModel& model, const Tensor& x_t, int t);

/// Model files: "<stem>.flpm" (parameters) and "<stem>.arch.txt"
/// (self-describing architecture text).
void save_autoencoder(const AutoencoderModel& model, const std::filesystem::path& stem);
AutoencoderModel load_autoencoder(const std::filesystem::path& stem);
void save_denoiser(const DenoiserModel& model, const std::filesystem::path& stem);
DenoiserModel load_denoiser(const std::filesystem::path& stem);

}  // namespace fedcache
