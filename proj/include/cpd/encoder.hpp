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

#pragma once

// Feed-forward modality encoders mapping raw features onto the unit sphere,
// with exact backpropagation and an SGD optimizer with momentum and weight
// decay.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "cpd/linalg.hpp"

namespace cpd {

struct Layer {
  Mat weight;  // out x in
  Vec bias;    // out
};

// Hidden layers use a rectifier, the final layer is affine and its output is
// l2-normalized into the embedding.
struct EncoderParams {
  std::vector<Layer> layers;
  // Bumped by every in-place update; forward caches remember the value they
  // were produced under so backward can reject stale caches.
  std::uint64_t generation = 0;

  int input_dim() const;
  int embed_dim() const;
  std::vector<int> layer_dims() const;
  bool all_finite() const;
};

// Parameter-shaped gradient (or momentum) storage.
struct ParamGrads {
  std::vector<Layer> layers;

  static ParamGrads zeros_like(const EncoderParams& params);
  ParamGrads& operator+=(const ParamGrads& other);
  ParamGrads& operator*=(double s);
  bool all_finite() const;
};

struct ForwardCache {
  std::vector<Vec> inputs;  // inputs[l] feeds layer l; inputs[0] is x
  std::vector<Vec> pre;     // pre-activation of each layer
  double raw_norm = 0.0;    // norm of the final pre-activation
  Vec embedding;
  std::uint64_t generation = 0;
  std::vector<int> dims;
};

struct BackwardResult {
  ParamGrads grads;
  Vec grad_input;
};

struct OptimizerState {
  ParamGrads buffers;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

EncoderParams init_params(std::span<const int> layer_dims, std::uint64_t seed);

// Throws DegenerateVectorError when ||v|| < 1e-12.
Vec l2_normalize(const Vec& v);

ForwardCache forward(const EncoderParams& params, const Vec& x);

// Embedding only, for evaluation paths that never backpropagate.
Vec embed(const EncoderParams& params, const Vec& x);

// Rows of `inputs` are encoded independently.
RowMat embed_rows(const EncoderParams& params, const RowMat& inputs);

// Activations entering the final layer (the representation just before the
// embedding projection), one row per input.
RowMat penultimate_rows(const EncoderParams& params, const RowMat& inputs);

// Gradients of <grad_embedding, embedding> with respect to every parameter
// and to the input. Includes the normalization Jacobian (I - uu^T)/||z||.
BackwardResult backward(const EncoderParams& params, const ForwardCache& cache,
                         const Vec& grad_embedding);

OptimizerState make_optimizer(const EncoderParams& params, double momentum,
                              double weight_decay);

// buffer <- momentum*buffer + grad + weight_decay*param
// param  <- param - lr*buffer
// Non-finite gradients raise NumericFault before anything is modified.
void sgd_step(EncoderParams& params, const ParamGrads& grads, OptimizerState& state,
              double lr);

// Stable fingerprint of the parameter values (FNV-1a over the raw bytes).
std::uint64_t param_hash(const EncoderParams& params);

// Layout: "CPDE", u32 version, u32 layer count + 1, u32 dims..., then per
// layer the row-major weight followed by the bias, all little-endian f64.
void write_params(std::ostream& out, const EncoderParams& params);
EncoderParams read_params(std::istream& in);

void write_optimizer(std::ostream& out, const OptimizerState& state);
OptimizerState read_optimizer(std::istream& in, const EncoderParams& params);

}  // namespace cpd
