// Copyright 2026 The CPD Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cpd/encoder.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <string>

#include "cpd/binary_io.hpp"
#include "cpd/errors.hpp"

namespace cpd {
namespace {

constexpr std::uint32_t kParamsVersion = 1;
constexpr double kDegenerateNorm = 1e-12;

std::uint64_t next_generation() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename F>
void for_each_pair(std::vector<Layer>& a, const std::vector<Layer>& b, F&& f) {
  for (std::size_t l = 0; l < a.size(); ++l) {
    f(a[l].weight, b[l].weight);
    f(a[l].bias, b[l].bias);
  }
}

bool same_shapes(const std::vector<Layer>& a, const std::vector<Layer>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (a[l].weight.rows() != b[l].weight.rows() || a[l].weight.cols() != b[l].weight.cols() ||
        a[l].bias.size() != b[l].bias.size())
      return false;
  }
  return true;
}

void write_matrix_row_major(std::ostream& out, const Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) binio::write_f64(out, m(r, c));
}

void read_matrix_row_major(std::istream& in, Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = binio::read_f64(in);
}

void write_layers(std::ostream& out, const std::vector<Layer>& layers) {
  for (const auto& layer : layers) {
    write_matrix_row_major(out, layer.weight);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) binio::write_f64(out, layer.bias[i]);
  }
}

void read_layers(std::istream& in, std::vector<Layer>& layers) {
  for (auto& layer : layers) {
    read_matrix_row_major(in, layer.weight);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = binio::read_f64(in);
  }
}

}  // namespace

int EncoderParams::input_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols());
}

int EncoderParams::embed_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows());
}

std::vector<int> EncoderParams::layer_dims() const {
  std::vector<int> dims;
  if (layers.empty()) return dims;
  dims.push_back(input_dim());
  for (const auto& layer : layers) dims.push_back(static_cast<int>(layer.weight.rows()));
  return dims;
}

bool EncoderParams::all_finite() const {
  for (const auto& layer : layers)
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  return true;
}

ParamGrads ParamGrads::zeros_like(const EncoderParams& params) {
  ParamGrads g;
  g.layers.reserve(params.layers.size());
  for (const auto& layer : params.layers) {
    g.layers.push_back({Mat::Zero(layer.weight.rows(), layer.weight.cols()),
                        Vec::Zero(layer.bias.size())});
  }
  return g;
}

ParamGrads& ParamGrads::operator+=(const ParamGrads& other) {
  if (!same_shapes(layers, other.layers)) throw ShapeError("gradient shapes differ");
  for_each_pair(layers, other.layers, [](auto& a, const auto& b) { a += b; });
  return *this;
}

ParamGrads& ParamGrads::operator*=(double s) {
  for (auto& layer : layers) {
    layer.weight *= s;
    layer.bias *= s;
  }
  return *this;
}

bool ParamGrads::all_finite() const {
  for (const auto& layer : layers)
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  return true;
}

EncoderParams init_params(std::span<const int> layer_dims, std::uint64_t seed) {
  if (layer_dims.size() < 2) throw ConfigError("encoder needs at least an input and an output dim");
  for (int d : layer_dims)
    if (d <= 0) throw ConfigError("encoder layer dims must be positive");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  EncoderParams params;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const int fan_in = layer_dims[l];
    const int fan_out = layer_dims[l + 1];
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Layer layer{Mat(fan_out, fan_in), Vec::Zero(fan_out)};
    // Row-major fill so the draw order matches the on-disk layout.
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c) layer.weight(r, c) = scale * normal(rng);
    params.layers.push_back(std::move(layer));
  }
  params.generation = next_generation();
  return params;
}

Vec l2_normalize(const Vec& v) {
  const double norm = v.norm();
  if (!(norm >= kDegenerateNorm)) throw DegenerateVectorError("cannot normalize a vector of norm " + std::to_string(norm));
  return v / norm;
}

ForwardCache forward(const EncoderParams& params, const Vec& x) {
  if (params.layers.empty()) throw ConfigError("encoder has no layers");
  if (x.size() != params.input_dim()) {
    throw ShapeError("encoder expects input dim " + std::to_string(params.input_dim()) + ", got " +
                     std::to_string(x.size()));
  }
  ForwardCache cache;
  cache.generation = params.generation;
  cache.dims = params.layer_dims();
  cache.inputs.reserve(params.layers.size());
  cache.pre.reserve(params.layers.size());

  Vec act = x;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Vec z = layer.weight * act + layer.bias;
    cache.inputs.push_back(std::move(act));
    if (l + 1 < params.layers.size()) {
      act = z.cwiseMax(0.0);
    } else {
      act = z;
    }
    cache.pre.push_back(std::move(z));
  }
  cache.raw_norm = act.norm();
  cache.embedding = l2_normalize(act);
  return cache;
}

Vec embed(const EncoderParams& params, const Vec& x) { return forward(params, x).embedding; }

RowMat embed_rows(const EncoderParams& params, const RowMat& inputs) {
  RowMat out(inputs.rows(), params.embed_dim());
  for (Eigen::Index r = 0; r < inputs.rows(); ++r) out.row(r) = embed(params, inputs.row(r).transpose()).transpose();
  return out;
}

RowMat penultimate_rows(const EncoderParams& params, const RowMat& inputs) {
  const int width = static_cast<int>(params.layers.back().weight.cols());
  RowMat out(inputs.rows(), width);
  for (Eigen::Index r = 0; r < inputs.rows(); ++r) {
    const ForwardCache cache = forward(params, inputs.row(r).transpose());
    out.row(r) = cache.inputs.back().transpose();
  }
  return out;
}

BackwardResult backward(const EncoderParams& params, const ForwardCache& cache,
                         const Vec& grad_embedding) {
  if (cache.generation != params.generation || cache.dims != params.layer_dims() ||
      cache.pre.size() != params.layers.size()) {
    throw ContractViolation("forward cache does not belong to these parameters");
  }
  if (grad_embedding.size() != cache.embedding.size()) throw ShapeError("grad_embedding dim mismatch");

  const Vec& u = cache.embedding;
  Vec delta = (grad_embedding - u * u.dot(grad_embedding)) / cache.raw_norm;

  BackwardResult result{ParamGrads::zeros_like(params), Vec()};
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    result.grads.layers[l].weight.noalias() = delta * cache.inputs[l].transpose();
    result.grads.layers[l].bias = delta;
    Vec grad_in = params.layers[l].weight.transpose() * delta;
    if (l == 0) {
      result.grad_input = std::move(grad_in);
    } else {
      const Vec& z_prev = cache.pre[l - 1];
      for (Eigen::Index i = 0; i < grad_in.size(); ++i)
        if (z_prev[i] <= 0.0) grad_in[i] = 0.0;
      delta = std::move(grad_in);
    }
  }
  return result;
}

OptimizerState make_optimizer(const EncoderParams& params, double momentum, double weight_decay) {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("sgd momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  return OptimizerState{ParamGrads::zeros_like(params), momentum, weight_decay};
}

void sgd_step(EncoderParams& params, const ParamGrads& grads, OptimizerState& state, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and >= 0");
  if (!same_shapes(params.layers, grads.layers) || !same_shapes(params.layers, state.buffers.layers))
    throw ShapeError("optimizer shapes do not match parameters");
  if (!grads.all_finite()) throw NumericFault("non-finite gradient; parameters left untouched");

  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& p = params.layers[l];
    auto& b = state.buffers.layers[l];
    const auto& g = grads.layers[l];
    b.weight = state.momentum * b.weight + g.weight + state.weight_decay * p.weight;
    b.bias = state.momentum * b.bias + g.bias + state.weight_decay * p.bias;
    p.weight -= lr * b.weight;
    p.bias -= lr * b.bias;
  }
  params.generation = next_generation();
}

std::uint64_t param_hash(const EncoderParams& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const double* data, Eigen::Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& layer : params.layers) {
    mix(layer.weight.data(), layer.weight.size());
    mix(layer.bias.data(), layer.bias.size());
  }
  return h;
}

void write_params(std::ostream& out, const EncoderParams& params) {
  out.write("CPDE", 4);
  binio::write_u32(out, kParamsVersion);
  const auto dims = params.layer_dims();
  binio::write_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (int d : dims) binio::write_u32(out, static_cast<std::uint32_t>(d));
  write_layers(out, params.layers);
  if (!out) throw IoError("failed writing encoder parameters");
}

EncoderParams read_params(std::istream& in) {
  binio::expect_magic(in, "CPDE");
  const auto version = binio::read_u32(in);
  if (version != kParamsVersion) throw IoError("unsupported encoder version " + std::to_string(version));
  const auto count = binio::read_u32(in);
  if (count < 2 || count > 64) throw IoError("implausible encoder depth in checkpoint");
  std::vector<int> dims(count);
  for (auto& d : dims) {
    d = static_cast<int>(binio::read_u32(in));
    if (d <= 0 || d > (1 << 20)) throw IoError("implausible layer width in checkpoint");
  }
  EncoderParams params;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    params.layers.push_back({Mat(dims[l + 1], dims[l]), Vec(dims[l + 1])});
  read_layers(in, params.layers);
  params.generation = next_generation();
  return params;
}

void write_optimizer(std::ostream& out, const OptimizerState& state) {
  out.write("CPDO", 4);
  binio::write_f64(out, state.momentum);
  binio::write_f64(out, state.weight_decay);
  write_layers(out, state.buffers.layers);
}

OptimizerState read_optimizer(std::istream& in, const EncoderParams& params) {
  binio::expect_magic(in, "CPDO");
  OptimizerState state;
  state.momentum = binio::read_f64(in);
  state.weight_decay = binio::read_f64(in);
  state.buffers = ParamGrads::zeros_like(params);
  read_layers(in, state.buffers.layers);
  return state;
}

}  // namespace cpd
