// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedcache/graph.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "fedcache/error.hpp"

namespace fedcache {

namespace {

using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<Mat>;
using ConstMapMat = Eigen::Map<const Mat>;
using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;
using MapRow = Eigen::Map<RowVec>;
using ConstMapRow = Eigen::Map<const RowVec>;

MapMat as_matrix(Tensor& t, std::size_t rows) {
  return MapMat(t.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(t.size() / rows));
}
ConstMapMat as_matrix(const Tensor& t, std::size_t rows) {
  return ConstMapMat(t.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(t.size() / rows));
}
MapRow as_row(Tensor& t) { return MapRow(t.raw(), static_cast<Eigen::Index>(t.size())); }
ConstMapRow as_row(const Tensor& t) { return ConstMapRow(t.raw(), static_cast<Eigen::Index>(t.size())); }

using Arr = Eigen::Array<Real, Eigen::Dynamic, 1>;
Eigen::Map<Arr> as_array(Tensor& t) { return Eigen::Map<Arr>(t.raw(), static_cast<Eigen::Index>(t.size())); }
Eigen::Map<const Arr> as_array(const Tensor& t) {
  return Eigen::Map<const Arr>(t.raw(), static_cast<Eigen::Index>(t.size()));
}

Shape batched(std::size_t batch, const Shape& per_sample) {
  Shape s{batch};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

constexpr Real kNormEps = Real(1e-5);
constexpr double kTimeBase = 10000.0;

bool has_params(LayerKind kind) {
  return kind == LayerKind::Dense || kind == LayerKind::Conv1d || kind == LayerKind::Downsample ||
         kind == LayerKind::LayerNorm;
}

struct ParamShapes {
  std::string first_name, second_name;
  Shape first, second;
};

ParamShapes param_shapes(const Node& node) {
  const auto& s = node.spec;
  switch (s.kind) {
    case LayerKind::Dense:
      return {node.name + ".weight", node.name + ".bias", {s.out, s.in}, {s.out}};
    case LayerKind::Conv1d:
    case LayerKind::Downsample:
      return {node.name + ".weight", node.name + ".bias", {s.out, s.kernel, s.in}, {s.out}};
    case LayerKind::LayerNorm:
      return {node.name + ".gain", node.name + ".bias", {s.in}, {s.in}};
    default:
      return {};
  }
}

std::size_t conv_out_length(std::size_t length, std::size_t kernel, std::size_t stride) {
  const std::size_t pad = kernel / 2;
  return (length + 2 * pad - kernel) / stride + 1;
}

Real sigmoid(Real x) { return Real(1) / (Real(1) + std::exp(-x)); }

}  // namespace

// ---------------------------------------------------------------------------
// LayerSpec

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Input: return "input";
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv1d: return "conv1d";
    case LayerKind::Downsample: return "strided-downsample";
    case LayerKind::Upsample: return "nearest-upsample";
    case LayerKind::LayerNorm: return "layer-norm";
    case LayerKind::SiLU: return "silu";
    case LayerKind::ReLU: return "relu";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::TimeEmbedding: return "sinusoidal-time-embedding";
    case LayerKind::Concat: return "skip-concat";
    case LayerKind::Add: return "add";
    case LayerKind::Reshape: return "reshape";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
  static constexpr LayerKind kAll[] = {
      LayerKind::Input,   LayerKind::Dense,         LayerKind::Conv1d, LayerKind::Downsample, LayerKind::Upsample,
      LayerKind::LayerNorm, LayerKind::SiLU,        LayerKind::ReLU,   LayerKind::Sigmoid,    LayerKind::TimeEmbedding,
      LayerKind::Concat,  LayerKind::Add,           LayerKind::Reshape};
  for (auto k : kAll) {
    if (layer_kind_name(k) == name) return k;
  }
  throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.in = in;
  s.out = out;
  return s;
}

LayerSpec LayerSpec::conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::Conv1d;
  s.in = in;
  s.out = out;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::downsample(std::size_t in, std::size_t out, std::size_t kernel) {
  LayerSpec s = conv1d(in, out, kernel, 2);
  s.kind = LayerKind::Downsample;
  return s;
}

namespace {
LayerSpec plain(LayerKind kind) {
  LayerSpec s;
  s.kind = kind;
  return s;
}
}  // namespace

LayerSpec LayerSpec::upsample() { return plain(LayerKind::Upsample); }

LayerSpec LayerSpec::layer_norm(std::size_t features) {
  LayerSpec s;
  s.kind = LayerKind::LayerNorm;
  s.in = features;
  return s;
}

LayerSpec LayerSpec::silu() { return plain(LayerKind::SiLU); }
LayerSpec LayerSpec::relu() { return plain(LayerKind::ReLU); }
LayerSpec LayerSpec::sigmoid() { return plain(LayerKind::Sigmoid); }

LayerSpec LayerSpec::time_embedding(std::size_t dim) {
  LayerSpec s;
  s.kind = LayerKind::TimeEmbedding;
  s.dim = dim;
  return s;
}

LayerSpec LayerSpec::concat() { return plain(LayerKind::Concat); }
LayerSpec LayerSpec::add() { return plain(LayerKind::Add); }

LayerSpec LayerSpec::reshape(Shape shape) {
  LayerSpec s;
  s.kind = LayerKind::Reshape;
  s.shape = std::move(shape);
  return s;
}

// ---------------------------------------------------------------------------
// Graph construction

Graph::Graph(Shape input_shape) {
  if (input_shape.empty() || input_shape.size() > 2 || shape_numel(input_shape) == 0) {
    throw ConfigError("graph input must be rank 1 or 2 with positive dims, got " + shape_string(input_shape));
  }
  LayerSpec spec;
  spec.kind = LayerKind::Input;
  spec.shape = input_shape;
  nodes_.push_back({"input", spec, {}, std::move(input_shape)});
}

std::size_t Graph::add(std::string name, LayerSpec spec, std::vector<std::size_t> inputs) {
  if (nodes_.empty()) throw ConfigError("graph has no input node");
  for (const auto& n : nodes_) {
    if (n.name == name) throw ConfigError("duplicate layer name '" + name + "'");
  }
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw ConfigError("layer '" + name + "' wired to unknown node");
  }
  auto fail = [&](const std::string& why) {
    return ConfigError("layer '" + name + "' (" + std::string(layer_kind_name(spec.kind)) + "): " + why);
  };
  auto expect_inputs = [&](std::size_t n) {
    if (inputs.size() != n) throw fail("expects " + std::to_string(n) + " input(s)");
  };
  auto in_shape = [&](std::size_t i) -> const Shape& { return nodes_[inputs.at(i)].shape; };

  Shape out;
  switch (spec.kind) {
    case LayerKind::Input:
      throw fail("only one input node is allowed");
    case LayerKind::Dense:
      expect_inputs(1);
      if (spec.in == 0 || spec.out == 0) throw fail("features must be positive");
      if (in_shape(0) != Shape{spec.in}) {
        throw fail("input shape " + shape_string(in_shape(0)) + " != (" + std::to_string(spec.in) + ")");
      }
      out = {spec.out};
      break;
    case LayerKind::Conv1d:
    case LayerKind::Downsample: {
      expect_inputs(1);
      if (spec.kernel == 0 || spec.kernel % 2 == 0) throw fail("kernel width must be odd");
      if (spec.stride == 0) throw fail("stride must be positive");
      if (spec.kind == LayerKind::Downsample && spec.stride != 2) throw fail("downsample stride must be 2");
      if (spec.in == 0 || spec.out == 0) throw fail("channels must be positive");
      const auto& s = in_shape(0);
      if (s.size() != 2 || s[1] != spec.in) {
        throw fail("input shape " + shape_string(s) + " is not (L, " + std::to_string(spec.in) + ")");
      }
      out = {conv_out_length(s[0], spec.kernel, spec.stride), spec.out};
      break;
    }
    case LayerKind::Upsample: {
      expect_inputs(1);
      const auto& s = in_shape(0);
      if (s.size() != 2) throw fail("expects a (L, C) input");
      out = {s[0] * 2, s[1]};
      break;
    }
    case LayerKind::LayerNorm:
      expect_inputs(1);
      if (in_shape(0).back() != spec.in) throw fail("feature count mismatch");
      out = in_shape(0);
      break;
    case LayerKind::SiLU:
    case LayerKind::ReLU:
    case LayerKind::Sigmoid:
      expect_inputs(1);
      out = in_shape(0);
      break;
    case LayerKind::TimeEmbedding:
      expect_inputs(0);
      if (spec.dim < 2 || spec.dim % 2 != 0) throw fail("embedding dimension must be even and >= 2");
      out = {spec.dim};
      uses_time_ = true;
      break;
    case LayerKind::Concat: {
      if (inputs.size() < 2) throw fail("expects at least 2 inputs");
      out = in_shape(0);
      for (std::size_t i = 1; i < inputs.size(); ++i) {
        const auto& s = in_shape(i);
        if (s.size() != out.size() || !std::equal(s.begin(), s.end() - 1, out.begin())) {
          throw fail("inputs disagree outside the last axis");
        }
        out.back() += s.back();
      }
      break;
    }
    case LayerKind::Add: {
      expect_inputs(2);
      const auto& a = in_shape(0);
      const auto& b = in_shape(1);
      const bool broadcast = a.size() == 2 && b.size() == 1 && b[0] == a[1];
      if (a != b && !broadcast) throw fail("cannot add " + shape_string(a) + " and " + shape_string(b));
      out = a;
      break;
    }
    case LayerKind::Reshape:
      expect_inputs(1);
      if (spec.shape.empty() || shape_numel(spec.shape) != shape_numel(in_shape(0))) {
        throw fail("cannot reshape " + shape_string(in_shape(0)) + " to " + shape_string(spec.shape));
      }
      out = spec.shape;
      break;
  }
  nodes_.push_back({std::move(name), std::move(spec), std::move(inputs), std::move(out)});
  output_ = nodes_.size() - 1;
  return output_;
}

void Graph::set_output(std::size_t node) {
  if (node >= nodes_.size()) throw ConfigError("output node out of range");
  output_ = node;
}

void Graph::init_parameters(ParameterSet& params, Rng& rng) const {
  for (const auto& node : nodes_) {
    if (!has_params(node.spec.kind)) continue;
    auto shapes = param_shapes(node);
    Tensor first(shapes.first);
    Tensor second(shapes.second);
    if (node.spec.kind == LayerKind::LayerNorm) {
      first.fill(Real(1));
    } else {
      const std::size_t fan_in = shape_numel(shapes.first) / shapes.first[0];
      const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (auto& w : first.values()) w = static_cast<Real>(stddev * rng.normal());
    }
    params.add(shapes.first_name, std::move(first));
    params.add(shapes.second_name, std::move(second));
  }
}

std::size_t Graph::parameter_count() const {
  std::size_t n = 0;
  for (const auto& node : nodes_) {
    if (!has_params(node.spec.kind)) continue;
    auto shapes = param_shapes(node);
    n += shape_numel(shapes.first) + shape_numel(shapes.second);
  }
  return n;
}

// ---------------------------------------------------------------------------
// Descriptor text

namespace {

std::string join_dims(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(s[i]);
  }
  return out;
}

std::size_t parse_size(std::string_view text, std::string_view key) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw FormatError("bad integer '" + std::string(text) + "' for " + std::string(key));
  }
  return value;
}

std::vector<std::size_t> parse_list(std::string_view text, std::string_view key) {
  std::vector<std::size_t> out;
  while (!text.empty()) {
    auto comma = text.find(',');
    out.push_back(parse_size(text.substr(0, comma), key));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace

std::string Graph::describe() const {
  std::ostringstream out;
  out << "fedcache-graph 1\n";
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    const auto& s = n.spec;
    out << "node " << i << ' ' << n.name << ' ' << layer_kind_name(s.kind);
    switch (s.kind) {
      case LayerKind::Input:
      case LayerKind::Reshape:
        out << " shape=" << join_dims(s.shape);
        break;
      case LayerKind::Dense:
        out << " in=" << s.in << " out=" << s.out;
        break;
      case LayerKind::Conv1d:
      case LayerKind::Downsample:
        out << " in=" << s.in << " out=" << s.out << " kernel=" << s.kernel << " stride=" << s.stride;
        break;
      case LayerKind::LayerNorm:
        out << " in=" << s.in;
        break;
      case LayerKind::TimeEmbedding:
        out << " dim=" << s.dim;
        break;
      default:
        break;
    }
    if (!n.inputs.empty()) out << " inputs=" << join_dims(Shape(n.inputs.begin(), n.inputs.end()));
    out << '\n';
  }
  out << "output " << output_ << '\n';
  return out.str();
}

Graph Graph::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != "fedcache-graph 1") throw FormatError("missing graph descriptor header");
  Graph graph;
  bool have_output = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string tag;
    fields >> tag;
    if (tag == "output") {
      std::string id;
      fields >> id;
      graph.set_output(parse_size(id, "output"));
      have_output = true;
      continue;
    }
    if (tag != "node") throw FormatError("unexpected descriptor line: " + line);
    std::string id, name, kind_name;
    fields >> id >> name >> kind_name;
    if (parse_size(id, "node id") != graph.nodes_.size()) throw FormatError("node ids must be sequential");
    LayerSpec spec;
    spec.kind = parse_layer_kind(kind_name);
    std::vector<std::size_t> inputs;
    std::string kv;
    while (fields >> kv) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw FormatError("bad field '" + kv + "'");
      const std::string key = kv.substr(0, eq);
      const std::string_view value = std::string_view(kv).substr(eq + 1);
      if (key == "in") spec.in = parse_size(value, key);
      else if (key == "out") spec.out = parse_size(value, key);
      else if (key == "kernel") spec.kernel = parse_size(value, key);
      else if (key == "stride") spec.stride = parse_size(value, key);
      else if (key == "dim") spec.dim = parse_size(value, key);
      else if (key == "shape") spec.shape = parse_list(value, key);
      else if (key == "inputs") inputs = parse_list(value, key);
      else throw FormatError("unknown descriptor field '" + key + "'");
    }
    if (spec.kind == LayerKind::Input) {
      if (!graph.nodes_.empty()) throw FormatError("input must be node 0");
      graph = Graph(spec.shape);
    } else {
      graph.add(name, spec, inputs);
    }
  }
  if (graph.nodes_.empty() || !have_output) throw FormatError("incomplete graph descriptor");
  return graph;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct TapeAccess {
  static Tape run(const ParameterSet& params, const Graph& graph, const Tensor& input, const Tensor* time,
                  bool keep);
  static Tensor back(Tape& tape, const Tensor& output_grad, ParameterSet& params);
  static Tensor& output(Tape& tape) { return tape.outputs_[tape.graph_->output()]; }
};

namespace {

const Tensor& param(const ParameterSet& params, std::size_t index) { return params.at(index).value; }

std::size_t resolve_params(const ParameterSet& params, const Node& node) {
  const auto shapes = param_shapes(node);
  const auto first = params.index_of(shapes.first_name);
  const auto second = params.index_of(shapes.second_name);
  if (first == params.size() || second == params.size()) {
    throw ConfigError("parameters for layer '" + node.name + "' are missing");
  }
  if (params.at(first).value.shape() != shapes.first || params.at(second).value.shape() != shapes.second) {
    throw ConfigError("parameter shapes for layer '" + node.name + "' do not match the layer");
  }
  if (second != first + 1) throw ConfigError("parameters for layer '" + node.name + "' are not adjacent");
  return first;
}

void im2col(const Tensor& x, std::size_t batch, std::size_t length, std::size_t channels, std::size_t kernel,
            std::size_t stride, std::size_t out_length, Tensor& col) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel / 2);
  const std::size_t width = kernel * channels;
  Real* dst = col.raw();
  const Real* src = x.raw();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t lo = 0; lo < out_length; ++lo) {
      Real* row = dst + (b * out_length + lo) * width;
      for (std::size_t j = 0; j < kernel; ++j) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(lo * stride + j) - pad;
        Real* cell = row + j * channels;
        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(length)) {
          std::fill(cell, cell + channels, Real(0));
        } else {
          const Real* from = src + (b * length + static_cast<std::size_t>(pos)) * channels;
          std::copy(from, from + channels, cell);
        }
      }
    }
  }
}

void col2im_add(const Tensor& col, std::size_t batch, std::size_t length, std::size_t channels, std::size_t kernel,
                std::size_t stride, std::size_t out_length, Tensor& dx) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel / 2);
  const std::size_t width = kernel * channels;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t lo = 0; lo < out_length; ++lo) {
      const Real* row = col.raw() + (b * out_length + lo) * width;
      for (std::size_t j = 0; j < kernel; ++j) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(lo * stride + j) - pad;
        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(length)) continue;
        Real* to = dx.raw() + (b * length + static_cast<std::size_t>(pos)) * channels;
        const Real* cell = row + j * channels;
        for (std::size_t c = 0; c < channels; ++c) to[c] += cell[c];
      }
    }
  }
}

Tensor& grad_slot(std::vector<Tensor>& grads, std::size_t node, const Shape& shape) {
  if (grads[node].empty()) grads[node] = Tensor(shape);
  return grads[node];
}

}  // namespace

Tape TapeAccess::run(const ParameterSet& params, const Graph& graph, const Tensor& input, const Tensor* time,
                     bool keep) {
  const auto& nodes = graph.nodes();
  if (nodes.empty()) throw ConfigError("empty graph");
  if (input.rank() != graph.input_shape().size() + 1 ||
      !std::equal(graph.input_shape().begin(), graph.input_shape().end(), input.shape().begin() + 1)) {
    throw ConfigError("input shape " + shape_string(input.shape()) + " does not match graph input " +
                      shape_string(graph.input_shape()) + " with a batch dimension");
  }
  const std::size_t batch = input.dim(0);
  if (graph.uses_time()) {
    if (time == nullptr) throw ConfigError("graph has a time embedding but no time input was given");
    if (time->shape() != Shape{batch}) throw ConfigError("time input must have shape (batch)");
  } else if (time != nullptr) {
    throw ConfigError("time input given to a graph without a time embedding");
  }

  Tape tape;
  tape.graph_ = &graph;
  tape.batch_ = batch;
  tape.outputs_.resize(nodes.size());
  tape.saved_.resize(nodes.size());
  tape.param_index_.assign(nodes.size(), 0);
  if (time) tape.time_ = *time;
  tape.outputs_[0] = input;

  for (std::size_t i = 1; i < nodes.size(); ++i) {
    const Node& node = nodes[i];
    const LayerSpec& s = node.spec;
    Tensor y(batched(batch, node.shape));
    auto& saved = tape.saved_[i];
    auto x_of = [&](std::size_t k) -> const Tensor& { return tape.outputs_[node.inputs[k]]; };

    if (has_params(s.kind)) tape.param_index_[i] = resolve_params(params, node);
    const std::size_t pi = tape.param_index_[i];

    switch (s.kind) {
      case LayerKind::Input:
        break;
      case LayerKind::Dense: {
        const Tensor& x = x_of(0);
        auto Y = as_matrix(y, batch);
        Y.noalias() = as_matrix(x, batch) * as_matrix(param(params, pi), s.out).transpose();
        Y.rowwise() += as_row(param(params, pi + 1));
        break;
      }
      case LayerKind::Conv1d:
      case LayerKind::Downsample: {
        const Tensor& x = x_of(0);
        const auto& in_shape = nodes[node.inputs[0]].shape;
        const std::size_t length = in_shape[0];
        const std::size_t out_length = node.shape[0];
        const std::size_t rows = batch * out_length;
        Tensor col({rows, s.kernel * s.in});
        im2col(x, batch, length, s.in, s.kernel, s.stride, out_length, col);
        auto Y = as_matrix(y, rows);
        Y.noalias() = as_matrix(col, rows) * as_matrix(param(params, pi), s.out).transpose();
        Y.rowwise() += as_row(param(params, pi + 1));
        if (keep) saved.push_back(std::move(col));
        break;
      }
      case LayerKind::Upsample: {
        const Tensor& x = x_of(0);
        const std::size_t length = nodes[node.inputs[0]].shape[0];
        const std::size_t channels = node.shape[1];
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t l = 0; l < length; ++l) {
            const Real* from = x.raw() + (b * length + l) * channels;
            Real* to = y.raw() + (b * 2 * length + 2 * l) * channels;
            std::copy(from, from + channels, to);
            std::copy(from, from + channels, to + channels);
          }
        }
        break;
      }
      case LayerKind::LayerNorm: {
        const Tensor& x = x_of(0);
        const std::size_t features = s.in;
        const std::size_t rows = x.size() / features;
        Tensor xhat(x.shape());
        Tensor rstd({rows});
        const auto X = as_matrix(x, rows).array();
        auto H = as_matrix(xhat, rows).array();
        auto R = as_array(rstd);
        const Arr mean = X.rowwise().mean();
        H = X.colwise() - mean;
        R = (H.square().rowwise().mean() + kNormEps).rsqrt();
        H.colwise() *= R;
        as_matrix(y, rows).array() =
            (H.rowwise() * as_row(param(params, pi)).array()).rowwise() + as_row(param(params, pi + 1)).array();
        if (keep) {
          saved.push_back(std::move(xhat));
          saved.push_back(std::move(rstd));
        }
        break;
      }
      case LayerKind::SiLU: {
        const Tensor& x = x_of(0);
        Tensor sg(x.shape());
        as_array(sg) = (Real(1) + (-as_array(x)).exp()).inverse();
        as_array(y) = as_array(x) * as_array(sg);
        if (keep) saved.push_back(std::move(sg));
        break;
      }
      case LayerKind::ReLU: {
        const Tensor& x = x_of(0);
        for (std::size_t k = 0; k < x.size(); ++k) y[k] = x[k] > Real(0) ? x[k] : Real(0);
        break;
      }
      case LayerKind::Sigmoid: {
        const Tensor& x = x_of(0);
        for (std::size_t k = 0; k < x.size(); ++k) y[k] = sigmoid(x[k]);
        break;
      }
      case LayerKind::TimeEmbedding: {
        const std::size_t half = s.dim / 2;
        for (std::size_t b = 0; b < batch; ++b) {
          const double t = static_cast<double>(tape.time_[b]);
          for (std::size_t k = 0; k < half; ++k) {
            const double freq = std::exp(-std::log(kTimeBase) * static_cast<double>(k) / static_cast<double>(half));
            y[b * s.dim + k] = static_cast<Real>(std::sin(t * freq));
            y[b * s.dim + half + k] = static_cast<Real>(std::cos(t * freq));
          }
        }
        break;
      }
      case LayerKind::Concat: {
        const std::size_t total = node.shape.back();
        const std::size_t rows = y.size() / total;
        std::size_t offset = 0;
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
          const Tensor& x = x_of(k);
          const std::size_t width = nodes[node.inputs[k]].shape.back();
          for (std::size_t r = 0; r < rows; ++r) {
            std::copy(x.raw() + r * width, x.raw() + (r + 1) * width, y.raw() + r * total + offset);
          }
          offset += width;
        }
        break;
      }
      case LayerKind::Add: {
        const Tensor& a = x_of(0);
        const Tensor& b = x_of(1);
        if (a.size() == b.size()) {
          for (std::size_t k = 0; k < a.size(); ++k) y[k] = a[k] + b[k];
        } else {
          const std::size_t channels = node.shape[1];
          const std::size_t length = node.shape[0];
          for (std::size_t bi = 0; bi < batch; ++bi) {
            const Real* bv = b.raw() + bi * channels;
            for (std::size_t l = 0; l < length; ++l) {
              const std::size_t base = (bi * length + l) * channels;
              for (std::size_t c = 0; c < channels; ++c) y[base + c] = a[base + c] + bv[c];
            }
          }
        }
        break;
      }
      case LayerKind::Reshape: {
        const Tensor& x = x_of(0);
        std::copy(x.raw(), x.raw() + x.size(), y.raw());
        break;
      }
    }
    if (!y.all_finite()) throw NumericError("non-finite activation in layer '" + node.name + "'");
    tape.outputs_[i] = std::move(y);
  }
  return tape;
}

Tensor TapeAccess::back(Tape& tape, const Tensor& output_grad, ParameterSet& params) {
  if (tape.graph_ == nullptr) throw UsageError("backward called with an empty tape");
  if (tape.consumed_) throw UsageError("tape already consumed by a previous backward pass");
  tape.consumed_ = true;
  const Graph& graph = *tape.graph_;
  const auto& nodes = graph.nodes();
  const std::size_t batch = tape.batch_;
  if (output_grad.shape() != tape.outputs_[graph.output()].shape()) {
    throw ConfigError("output gradient shape " + shape_string(output_grad.shape()) + " != output shape " +
                      shape_string(tape.outputs_[graph.output()].shape()));
  }

  std::vector<Tensor> grads(nodes.size());
  grads[graph.output()] = output_grad;
  if (graph.uses_time()) tape.time_grad_ = Tensor({batch});

  for (std::size_t i = nodes.size() - 1; i >= 1; --i) {
    if (grads[i].empty()) continue;
    const Node& node = nodes[i];
    const LayerSpec& s = node.spec;
    const Tensor& g = grads[i];
    const Tensor& y = tape.outputs_[i];
    auto& saved = tape.saved_[i];
    const std::size_t pi = tape.param_index_[i];
    auto input_grad = [&](std::size_t k) -> Tensor& {
      const std::size_t src = node.inputs[k];
      return grad_slot(grads, src, tape.outputs_[src].shape());
    };
    auto x_of = [&](std::size_t k) -> const Tensor& { return tape.outputs_[node.inputs[k]]; };

    switch (s.kind) {
      case LayerKind::Input:
        break;
      case LayerKind::Dense: {
        const auto G = as_matrix(g, batch);
        as_matrix(params.at(pi).grad, s.out).noalias() += G.transpose() * as_matrix(x_of(0), batch);
        as_row(params.at(pi + 1).grad) += G.colwise().sum();
        as_matrix(input_grad(0), batch).noalias() += G * as_matrix(param(params, pi), s.out);
        break;
      }
      case LayerKind::Conv1d:
      case LayerKind::Downsample: {
        const std::size_t length = nodes[node.inputs[0]].shape[0];
        const std::size_t out_length = node.shape[0];
        const std::size_t rows = batch * out_length;
        const Tensor& col = saved.at(0);
        const auto G = as_matrix(g, rows);
        as_matrix(params.at(pi).grad, s.out).noalias() += G.transpose() * as_matrix(col, rows);
        as_row(params.at(pi + 1).grad) += G.colwise().sum();
        Tensor dcol(col.shape());
        as_matrix(dcol, rows).noalias() = G * as_matrix(param(params, pi), s.out);
        col2im_add(dcol, batch, length, s.in, s.kernel, s.stride, out_length, input_grad(0));
        break;
      }
      case LayerKind::Upsample: {
        Tensor& dx = input_grad(0);
        const std::size_t length = nodes[node.inputs[0]].shape[0];
        const std::size_t channels = node.shape[1];
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t l = 0; l < length; ++l) {
            Real* to = dx.raw() + (b * length + l) * channels;
            const Real* from = g.raw() + (b * 2 * length + 2 * l) * channels;
            for (std::size_t c = 0; c < channels; ++c) to[c] += from[c] + from[channels + c];
          }
        }
        break;
      }
      case LayerKind::LayerNorm: {
        const std::size_t features = s.in;
        const Tensor& xhat = saved.at(0);
        const Tensor& rstd = saved.at(1);
        const std::size_t rows = xhat.size() / features;
        const auto G = as_matrix(g, rows).array();
        const auto H = as_matrix(xhat, rows).array();
        as_row(params.at(pi).grad).array() += (G * H).colwise().sum();
        as_row(params.at(pi + 1).grad).array() += G.colwise().sum();
        Tensor dh_store(g.shape());
        auto DH = as_matrix(dh_store, rows).array();
        DH = G.rowwise() * as_row(param(params, pi)).array();
        const Arr mean_dh = DH.rowwise().mean();
        const Arr mean_dh_h = (DH * H).rowwise().mean();
        Tensor& dx = input_grad(0);
        as_matrix(dx, rows).array() +=
            ((DH.colwise() - mean_dh) - H.colwise() * mean_dh_h).colwise() * as_array(rstd);
        break;
      }
      case LayerKind::SiLU: {
        const Tensor& x = x_of(0);
        const auto sg = as_array(saved.at(0));
        Tensor& dx = input_grad(0);
        as_array(dx) += as_array(g) * sg * (Real(1) + as_array(x) * (Real(1) - sg));
        break;
      }
      case LayerKind::ReLU: {
        const Tensor& x = x_of(0);
        Tensor& dx = input_grad(0);
        for (std::size_t k = 0; k < x.size(); ++k) {
          if (x[k] > Real(0)) dx[k] += g[k];
        }
        break;
      }
      case LayerKind::Sigmoid: {
        Tensor& dx = input_grad(0);
        for (std::size_t k = 0; k < y.size(); ++k) dx[k] += g[k] * y[k] * (Real(1) - y[k]);
        break;
      }
      case LayerKind::TimeEmbedding: {
        const std::size_t half = s.dim / 2;
        for (std::size_t b = 0; b < batch; ++b) {
          double acc = 0;
          for (std::size_t k = 0; k < half; ++k) {
            const double freq = std::exp(-std::log(kTimeBase) * static_cast<double>(k) / static_cast<double>(half));
            // d sin(t f)/dt = f cos(t f) = f * y_cos ; d cos(t f)/dt = -f sin(t f) = -f * y_sin
            acc += g[b * s.dim + k] * freq * y[b * s.dim + half + k];
            acc -= g[b * s.dim + half + k] * freq * y[b * s.dim + k];
          }
          tape.time_grad_[b] += static_cast<Real>(acc);
        }
        break;
      }
      case LayerKind::Concat: {
        const std::size_t total = node.shape.back();
        const std::size_t rows = g.size() / total;
        std::size_t offset = 0;
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
          const std::size_t width = nodes[node.inputs[k]].shape.back();
          Tensor& dx = input_grad(k);
          for (std::size_t r = 0; r < rows; ++r) {
            const Real* from = g.raw() + r * total + offset;
            Real* to = dx.raw() + r * width;
            for (std::size_t c = 0; c < width; ++c) to[c] += from[c];
          }
          offset += width;
        }
        break;
      }
      case LayerKind::Add: {
        Tensor& da = input_grad(0);
        for (std::size_t k = 0; k < g.size(); ++k) da[k] += g[k];
        Tensor& db = input_grad(1);
        if (db.size() == g.size()) {
          for (std::size_t k = 0; k < g.size(); ++k) db[k] += g[k];
        } else {
          const std::size_t channels = node.shape[1];
          const std::size_t length = node.shape[0];
          for (std::size_t bi = 0; bi < batch; ++bi) {
            Real* bv = db.raw() + bi * channels;
            for (std::size_t l = 0; l < length; ++l) {
              const Real* gr = g.raw() + (bi * length + l) * channels;
              for (std::size_t c = 0; c < channels; ++c) bv[c] += gr[c];
            }
          }
        }
        break;
      }
      case LayerKind::Reshape: {
        Tensor& dx = input_grad(0);
        for (std::size_t k = 0; k < g.size(); ++k) dx[k] += g[k];
        break;
      }
    }
    grads[i] = Tensor();
    tape.saved_[i].clear();
  }
  if (grads[0].empty()) return Tensor(tape.outputs_[0].shape());
  return std::move(grads[0]);
}

ForwardResult forward(const ParameterSet& params, const Graph& graph, const Tensor& input, const Tensor* time) {
  Tape tape = TapeAccess::run(params, graph, input, time, true);
  Tensor out = TapeAccess::output(tape);
  return {std::move(out), std::move(tape)};
}

Tensor infer(const ParameterSet& params, const Graph& graph, const Tensor& input, const Tensor* time) {
  Tape tape = TapeAccess::run(params, graph, input, time, false);
  return std::move(TapeAccess::output(tape));
}

Tensor backward(Tape& tape, const Tensor& output_grad, ParameterSet& params) {
  return TapeAccess::back(tape, output_grad, params);
}

}  // namespace fedcache
