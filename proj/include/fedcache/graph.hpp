// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "fedcache/parameter_set.hpp"
#include "fedcache/rng.hpp"
#include "fedcache/tensor.hpp"

namespace fedcache {

// Per-sample layouts: feature vectors are rank-1 (D); sequences are rank-2
// (length, channels), channels contiguous. Every batched tensor carries a
// leading batch dimension on top of these.

enum class LayerKind {
  Input,          // graph entry point
  Dense,          // (D_in) -> (D_out)
  Conv1d,         // (L, C_in) -> (L', C_out), odd kernel, zero "same" padding
  Downsample,     // strided Conv1d, stride 2
  Upsample,       // nearest-neighbour, length x2
  LayerNorm,      // normalizes the last axis of each sample position
  SiLU,
  ReLU,
  Sigmoid,
  TimeEmbedding,  // reads the time input (B) -> (B, dim) sinusoidal features
  Concat,         // joins inputs along the last axis
  Add,            // elementwise; a rank-1 (C) second input broadcasts over L
  Reshape,        // per-sample shape change, same element count
};

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

struct LayerSpec {
  LayerKind kind = LayerKind::Input;
  std::size_t in = 0;   // dense fan-in or conv input channels
  std::size_t out = 0;  // dense fan-out or conv output channels
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t dim = 0;  // time-embedding width
  Shape shape;          // reshape target / input shape

  static LayerSpec dense(std::size_t in, std::size_t out);
  static LayerSpec conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1);
  static LayerSpec downsample(std::size_t in, std::size_t out, std::size_t kernel = 3);
  static LayerSpec upsample();
  static LayerSpec layer_norm(std::size_t features);
  static LayerSpec silu();
  static LayerSpec relu();
  static LayerSpec sigmoid();
  static LayerSpec time_embedding(std::size_t dim);
  static LayerSpec concat();
  static LayerSpec add();
  static LayerSpec reshape(Shape shape);
};

struct Node {
  std::string name;
  LayerSpec spec;
  std::vector<std::size_t> inputs;
  Shape shape;  // per-sample output shape
};

/// Static layer graph. Nodes are appended in topological order; node 0 is
/// the input. Parameters live outside the graph, in a ParameterSet, under
/// "<node>.weight"/"<node>.bias" (dense, conv) or "<node>.gain"/"<node>.bias"
/// (layer norm).
class Graph {
 public:
  Graph() = default;
  explicit Graph(Shape input_shape);

  std::size_t input() const noexcept { return 0; }
  /// Appends a node and returns its id. Throws ConfigError when the LayerSpec is
  /// inconsistent with the shapes of its inputs.
  std::size_t add(std::string name, LayerSpec spec, std::vector<std::size_t> inputs);
  std::size_t add(std::string name, LayerSpec spec, std::size_t input) {
    return add(std::move(name), std::move(spec), std::vector<std::size_t>{input});
  }
  void set_output(std::size_t node);

  const Shape& input_shape() const { return nodes_.at(0).shape; }
  const Shape& output_shape() const { return nodes_.at(output_).shape; }
  std::size_t output() const noexcept { return output_; }
  bool uses_time() const noexcept { return uses_time_; }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }

  /// Registers this graph's parameters in `params` with He-normal weights,
  /// zero biases and unit norm gains. Order follows node order.
  void init_parameters(ParameterSet& params, Rng& rng) const;
  std::size_t parameter_count() const;

  /// Plain-text, line-oriented architecture descriptor; parse() inverts it.
  std::string describe() const;
  static Graph parse(std::string_view text);

 private:
  std::vector<Node> nodes_;
  std::size_t output_ = 0;
  bool uses_time_ = false;
};

/// Activation record of one forward pass, consumed by exactly one backward.
class Tape {
 public:
  bool consumed() const noexcept { return consumed_; }
  /// Gradient w.r.t. the time input, filled by backward when the graph has a
  /// time embedding.
  const Tensor& time_gradient() const noexcept { return time_grad_; }

 private:
  friend struct TapeAccess;
  const Graph* graph_ = nullptr;
  std::size_t batch_ = 0;
  std::vector<Tensor> outputs_;
  std::vector<std::vector<Tensor>> saved_;
  std::vector<std::size_t> param_index_;  // first parameter of each node
  Tensor time_;
  Tensor time_grad_;
  bool consumed_ = false;
};

struct ForwardResult {
  Tensor output;
  Tape tape;
};

/// Runs the graph on a batch. `input` has shape (B, input_shape...); `time`,
/// required iff the graph has a time embedding, has shape (B).
ForwardResult forward(const ParameterSet& params, const Graph& graph, const Tensor& input,
                      const Tensor* time = nullptr);

/// Forward pass without keeping a tape.
Tensor infer(const ParameterSet& params, const Graph& graph, const Tensor& input, const Tensor* time = nullptr);

/// Backpropagates `output_grad` through the recorded pass, accumulating
/// parameter gradients into `params`, and returns d(loss)/d(input).
Tensor backward(Tape& tape, const Tensor& output_grad, ParameterSet& params);

}  // namespace fedcache
