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

// Training objectives over unit-norm embeddings: the cross-modal pair
// discrimination softmax in both conditional directions, the joint
// multi-modal instance discrimination softmax, the bidirectional hinge
// ranking loss, and the noise-contrastive approximation of the cross-modal
// softmax. Memory-bank rows are constants: gradients flow only into the query
// embeddings.

#include "cpd/linalg.hpp"

namespace cpd {

class Temperature {
 public:
  explicit Temperature(double tau = 0.07);
  double value() const { return tau_; }

 private:
  double tau_;
};

struct NceConfig {
  int m = 4096;              // noise samples per positive
  int n = 1;                 // instances in the bank; noise density is 1/n
  double z_estimate = 0.0;   // partition-function estimate, 0 means uncalibrated
  bool exclude_positive = true;

  void validate() const;
};

struct RankingConfig {
  double delta = 0.5;
};

// Loss and gradients with respect to both query embeddings.
struct PairLoss {
  double loss = 0.0;
  double loss_v2t = 0.0;
  double loss_t2v = 0.0;
  Vec grad_v;
  Vec grad_t;
};

struct QueryLoss {
  double loss = 0.0;
  Vec grad;
  int saturated = 0;  // log terms that hit the 1e-30 clamp
};

struct RankingResult {
  double loss = 0.0;  // mean over anchors of (video->text + text->video)
  RowMat grad_v;
  RowMat grad_t;
  int active_terms = 0;
};

double log_sum_exp(const Vec& scores);

// Softmax over bank rows of <row, query>/tau.
Vec softmax_over_bank(const Vec& query, const RowMat& bank, Temperature tau);

// p(i | query) under the full softmax over the bank.
double cpd_prob_exact(const Vec& query, const RowMat& bank, int i, Temperature tau);

// -log p(i_t | v) - log p(i_v | t) with the full softmax over both banks.
PairLoss cpd_loss_exact(const Vec& f_v, const Vec& f_t, int i, const RowMat& bank_v,
                        const RowMat& bank_t, Temperature tau);

// -log of the joint softmax whose logits are <bank_v[j], f_v>/tau + <bank_t[j], f_t>/tau.
PairLoss mmid_loss_exact(const Vec& f_v, const Vec& f_t, int i, const RowMat& bank_v,
                         const RowMat& bank_t, Temperature tau);

// Parametric instance classifier with free per-instance weights. Kept as a
// reference for tests only; it is not a training path.
double parametric_instance_prob(const RowMat& w_v, const RowMat& w_t, const Vec& f_v,
                                const Vec& f_t, int i);

// Rows of batch_v and batch_t are paired by position. Similarity is the dot
// product of unit vectors. Each anchor averages its hinge terms over the n-1
// in-batch negatives; both directions are summed and the result averaged over
// anchors.
RankingResult ranking_loss(const RowMat& batch_v, const RowMat& batch_t, double delta);

// h = p / (p + m/n): posterior that a candidate came from the data rather than
// from the uniform noise distribution.
double nce_posterior(double p, int m, int n);

// -log h(pos) - sum_noise log(1 - h(noise)), with p = exp(<x, query>/tau)/z_estimate.
QueryLoss nce_loss(const Vec& query, const Vec& pos, const RowMat& noise, const NceConfig& cfg,
                   Temperature tau);

// Closed-form negative gradient of nce_loss:
//   (1 - h(pos))/tau * pos - sum_noise h(noise)/tau * noise
// evaluated directly from the posterior, independent of nce_loss.
Vec cpd_grad_formula(const Vec& query, const Vec& pos, const RowMat& noise, const NceConfig& cfg,
                     Temperature tau);

}  // namespace cpd
