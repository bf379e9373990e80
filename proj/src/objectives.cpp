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

#include "cpd/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cpd/errors.hpp"

namespace cpd {
namespace {

constexpr double kLogFloor = 1e-30;

void check_bank(const Vec& query, const RowMat& bank, int i) {
  if (bank.rows() == 0) throw ConfigError("memory bank is empty");
  if (bank.cols() != query.size()) throw ShapeError("query dim does not match bank dim");
  if (i < 0 || i >= bank.rows())
    throw ContractViolation("instance index " + std::to_string(i) + " outside bank of size " +
                            std::to_string(bank.rows()));
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Temperature::Temperature(double tau) : tau_(tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("temperature must be positive and finite");
}

void NceConfig::validate() const {
  if (m < 1) throw ConfigError("nce: m must be >= 1");
  if (n < 1) throw ConfigError("nce: n must be >= 1");
  if (m > n) throw ConfigError("nce: m must not exceed the bank size");
  if (!(z_estimate > 0.0) || !std::isfinite(z_estimate))
    throw ConfigError("nce: z_estimate is not calibrated");
}

double log_sum_exp(const Vec& scores) {
  const double top = scores.maxCoeff();
  return top + std::log((scores.array() - top).exp().sum());
}

Vec softmax_over_bank(const Vec& query, const RowMat& bank, Temperature tau) {
  if (bank.rows() == 0) throw ConfigError("memory bank is empty");
  if (bank.cols() != query.size()) throw ShapeError("query dim does not match bank dim");
  Vec scores = (bank * query) / tau.value();
  const double top = scores.maxCoeff();
  Vec e = (scores.array() - top).exp().matrix();
  return e / e.sum();
}

double cpd_prob_exact(const Vec& query, const RowMat& bank, int i, Temperature tau) {
  check_bank(query, bank, i);
  return softmax_over_bank(query, bank, tau)[i];
}

PairLoss cpd_loss_exact(const Vec& f_v, const Vec& f_t, int i, const RowMat& bank_v,
                        const RowMat& bank_t, Temperature tau) {
  check_bank(f_v, bank_t, i);
  check_bank(f_t, bank_v, i);
  const double inv_tau = 1.0 / tau.value();
  PairLoss out;

  const Vec s_v2t = (bank_t * f_v) * inv_tau;
  out.loss_v2t = log_sum_exp(s_v2t) - s_v2t[i];
  const Vec p_v2t = softmax_over_bank(f_v, bank_t, tau);
  out.grad_v = (bank_t.transpose() * p_v2t - bank_t.row(i).transpose()) * inv_tau;

  const Vec s_t2v = (bank_v * f_t) * inv_tau;
  out.loss_t2v = log_sum_exp(s_t2v) - s_t2v[i];
  const Vec p_t2v = softmax_over_bank(f_t, bank_v, tau);
  out.grad_t = (bank_v.transpose() * p_t2v - bank_v.row(i).transpose()) * inv_tau;

  out.loss = out.loss_v2t + out.loss_t2v;
  return out;
}

PairLoss mmid_loss_exact(const Vec& f_v, const Vec& f_t, int i, const RowMat& bank_v,
                         const RowMat& bank_t, Temperature tau) {
  check_bank(f_v, bank_v, i);
  check_bank(f_t, bank_t, i);
  if (bank_v.rows() != bank_t.rows()) throw ShapeError("visual and text banks differ in size");
  const double inv_tau = 1.0 / tau.value();

  const Vec scores = (bank_v * f_v + bank_t * f_t) * inv_tau;
  const double lse = log_sum_exp(scores);
  const Vec p = (scores.array() - lse).exp().matrix();

  PairLoss out;
  out.loss = lse - scores[i];
  out.grad_v = (bank_v.transpose() * p - bank_v.row(i).transpose()) * inv_tau;
  out.grad_t = (bank_t.transpose() * p - bank_t.row(i).transpose()) * inv_tau;
  return out;
}

double parametric_instance_prob(const RowMat& w_v, const RowMat& w_t, const Vec& f_v,
                                const Vec& f_t, int i) {
  check_bank(f_v, w_v, i);
  check_bank(f_t, w_t, i);
  const Vec scores = w_v * f_v + w_t * f_t;
  return std::exp(scores[i] - log_sum_exp(scores));
}

RankingResult ranking_loss(const RowMat& batch_v, const RowMat& batch_t, double delta) {
  const Eigen::Index n = batch_v.rows();
  if (n < 2) throw ConfigError("ranking loss needs a batch of at least 2 pairs");
  if (batch_t.rows() != n || batch_t.cols() != batch_v.cols())
    throw ShapeError("ranking loss batches must have identical shapes");
  if (!(delta >= 0.0)) throw ConfigError("ranking margin must be >= 0");

  const RowMat sim = batch_v * batch_t.transpose();  // sim(i, j) = <v_i, t_j>
  const double w = 1.0 / static_cast<double>(n - 1);
  RankingResult out;
  out.grad_v = RowMat::Zero(n, batch_v.cols());
  out.grad_t = RowMat::Zero(n, batch_t.cols());

  for (Eigen::Index i = 0; i < n; ++i) {
    const double pos = sim(i, i);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      // video anchor i against text negative j
      const double hv = delta + sim(i, j) - pos;
      if (hv > 0.0) {
        out.loss += w * hv;
        out.grad_v.row(i) += w * (batch_t.row(j) - batch_t.row(i));
        out.grad_t.row(j) += w * batch_v.row(i);
        out.grad_t.row(i) -= w * batch_v.row(i);
        ++out.active_terms;
      }
      // text anchor i against video negative j
      const double ht = delta + sim(j, i) - pos;
      if (ht > 0.0) {
        out.loss += w * ht;
        out.grad_t.row(i) += w * (batch_v.row(j) - batch_v.row(i));
        out.grad_v.row(j) += w * batch_t.row(i);
        out.grad_v.row(i) -= w * batch_t.row(i);
        ++out.active_terms;
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  out.loss *= inv_n;
  out.grad_v *= inv_n;
  out.grad_t *= inv_n;
  return out;
}

double nce_posterior(double p, int m, int n) {
  if (!(p > 0.0) || m < 1 || n < 1) throw ContractViolation("nce_posterior requires p > 0, m >= 1, n >= 1");
  if (std::isinf(p)) return 1.0;
  const double noise = static_cast<double>(m) / static_cast<double>(n);
  return p / (p + noise);
}

QueryLoss nce_loss(const Vec& query, const Vec& pos, const RowMat& noise, const NceConfig& cfg,
                   Temperature tau) {
  cfg.validate();
  if (pos.size() != query.size() || (noise.rows() > 0 && noise.cols() != query.size()))
    throw ShapeError("nce: query, positive and noise dims differ");
  if (noise.rows() != cfg.m) throw ShapeError("nce: expected " + std::to_string(cfg.m) + " noise rows");

  const double inv_tau = 1.0 / tau.value();
  // h = sigmoid(s - offset) with offset = log(z * m / n).
  const double offset = std::log(cfg.z_estimate) + std::log(static_cast<double>(cfg.m)) -
                        std::log(static_cast<double>(cfg.n));
  const double max_term = -std::log(kLogFloor);

  QueryLoss out;
  out.grad = Vec::Zero(query.size());

  const double a_pos = pos.dot(query) * inv_tau - offset;
  const double nll_pos = softplus(-a_pos);  // -log h
  if (nll_pos > max_term) {
    out.loss += max_term;
    ++out.saturated;
  } else {
    out.loss += nll_pos;
    out.grad -= (1.0 - sigmoid(a_pos)) * inv_tau * pos;
  }

  for (Eigen::Index k = 0; k < noise.rows(); ++k) {
    const double a = noise.row(k).dot(query) * inv_tau - offset;
    const double nll = softplus(a);  // -log(1 - h)
    if (nll > max_term) {
      out.loss += max_term;
      ++out.saturated;
    } else {
      out.loss += nll;
      out.grad += sigmoid(a) * inv_tau * noise.row(k).transpose();
    }
  }
  return out;
}

Vec cpd_grad_formula(const Vec& query, const Vec& pos, const RowMat& noise, const NceConfig& cfg,
                     Temperature tau) {
  cfg.validate();
  const double t = tau.value();
  auto posterior = [&](const Vec& x) {
    const double p = std::exp(x.dot(query) / t) / cfg.z_estimate;
    return nce_posterior(p, cfg.m, cfg.n);
  };
  Vec g = (1.0 - posterior(pos)) / t * pos;
  for (Eigen::Index k = 0; k < noise.rows(); ++k) {
    const Vec x = noise.row(k).transpose();
    g -= posterior(x) / t * x;
  }
  return g;
}

}  // namespace cpd
