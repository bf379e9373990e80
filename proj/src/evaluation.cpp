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

#include "cpd/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

#include "cpd/errors.hpp"

namespace cpd {
namespace {

// Rows scaled to unit norm; zero rows stay zero and score 0 against anything.
RowMat unit_rows(const RowMat& m) {
  RowMat out = m;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double n = out.row(r).norm();
    if (n > 1e-12) out.row(r) /= n;
  }
  return out;
}

int argmax_lowest(const Eigen::Ref<const Vec>& v) {
  int best = 0;
  for (Eigen::Index j = 1; j < v.size(); ++j)
    if (v[j] > v[best]) best = static_cast<int>(j);
  return best;
}

}  // namespace

const char* to_string(LayerTag tag) { return tag == LayerTag::embedding ? "embedding" : "penultimate"; }

int LabeledFeatureSet::num_classes() const {
  int c = 0;
  for (int l : labels) c = std::max(c, l + 1);
  return c;
}

void LabeledFeatureSet::validate() const {
  if (features.rows() != static_cast<Eigen::Index>(labels.size()))
    throw ShapeError("feature rows and labels differ in count");
  if (!features.allFinite()) throw NumericFault("non-finite features");
  for (int l : labels)
    if (l < 0) throw ConfigError("feature set has an unlabeled row");
}

std::vector<int> knn_classify(const LabeledFeatureSet& train, const RowMat& queries, int k) {
  train.validate();
  const auto m = train.features.rows();
  if (m == 0) throw ConfigError("kNN needs a non-empty training set");
  if (k < 1 || k > m) throw ConfigError("kNN k=" + std::to_string(k) + " outside [1, " + std::to_string(m) + "]");
  if (queries.cols() != train.features.cols()) throw ShapeError("kNN query dim differs from training dim");

  const RowMat bank = unit_rows(train.features);
  const RowMat q = unit_rows(queries);
  const int classes = train.num_classes();

  std::vector<int> order(static_cast<std::size_t>(m));
  std::vector<int> preds;
  preds.reserve(static_cast<std::size_t>(q.rows()));
  for (Eigen::Index r = 0; r < q.rows(); ++r) {
    const Vec sims = bank * q.row(r).transpose();
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&sims](int a, int b) {
      return sims[a] > sims[b] || (sims[a] == sims[b] && a < b);
    });
    std::vector<int> votes(static_cast<std::size_t>(classes), 0);
    std::vector<double> mass(static_cast<std::size_t>(classes), 0.0);
    for (int j = 0; j < k; ++j) {
      const int label = train.labels[order[j]];
      ++votes[label];
      mass[label] += sims[order[j]];
    }
    int best = 0;
    for (int c = 1; c < classes; ++c) {
      if (votes[c] > votes[best] || (votes[c] == votes[best] && mass[c] > mass[best])) best = c;
    }
    preds.push_back(best);
  }
  return preds;
}

void ProbeConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("probe lr must be positive");
  if (epochs < 1) throw ConfigError("probe epochs must be >= 1");
  if (decay_every < 1) throw ConfigError("probe decay_every must be >= 1");
  if (batch_size < 1) throw ConfigError("probe batch_size must be >= 1");
}

ProbeResult linear_probe(const LabeledFeatureSet& train, const LabeledFeatureSet& test,
                         const ProbeConfig& cfg) {
  cfg.validate();
  train.validate();
  test.validate();
  if (train.features.cols() != test.features.cols()) throw ShapeError("probe splits differ in dim");
  if (train.features.rows() == 0 || test.features.rows() == 0) throw ConfigError("probe needs non-empty splits");
  const int classes = std::max(train.num_classes(), test.num_classes());
  const auto d = train.features.cols();

  ProbeResult result;
  Vec mean = Vec::Zero(d);
  Vec inv_std = Vec::Ones(d);
  if (cfg.standardize) {
    mean = train.features.colwise().mean().transpose();
    for (Eigen::Index k = 0; k < d; ++k) {
      double var = (train.features.col(k).array() - mean[k]).square().mean();
      if (var < 1e-8) {
        var = 1e-8;
        ++result.clamped_dims;
      }
      inv_std[k] = 1.0 / std::sqrt(var);
    }
    if (result.clamped_dims > 0)
      std::cerr << "warning: linear probe clamped the variance of " << result.clamped_dims << " dimension(s)\n";
  }
  auto prepare = [&](const RowMat& x) -> RowMat {
    return ((x.rowwise() - mean.transpose()).array().rowwise() * inv_std.transpose().array()).matrix();
  };
  const RowMat xtr = prepare(train.features);
  const RowMat xte = prepare(test.features);

  Mat w = Mat::Zero(classes, d);
  Vec b = Vec::Zero(classes);
  Mat mw = Mat::Zero(classes, d), vw = Mat::Zero(classes, d);
  Vec mb = Vec::Zero(classes), vb = Vec::Zero(classes);
  std::mt19937_64 rng(cfg.seed);
  std::vector<int> order(static_cast<std::size_t>(xtr.rows()));
  std::iota(order.begin(), order.end(), 0);
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr * std::pow(cfg.decay, epoch / cfg.decay_every);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Mat gw = Mat::Zero(classes, d);
      Vec gb = Vec::Zero(classes);
      for (std::size_t j = start; j < end; ++j) {
        const int row = order[j];
        const Vec x = xtr.row(row).transpose();
        Vec logits = w * x + b;
        logits.array() -= logits.maxCoeff();
        Vec p = logits.array().exp().matrix();
        p /= p.sum();
        p[train.labels[row]] -= 1.0;
        gw.noalias() += p * x.transpose();
        gb += p;
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      gw *= scale;
      gb *= scale;

      ++step;
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      mw = cfg.beta1 * mw + (1.0 - cfg.beta1) * gw;
      vw = cfg.beta2 * vw + (1.0 - cfg.beta2) * gw.cwiseProduct(gw);
      mb = cfg.beta1 * mb + (1.0 - cfg.beta1) * gb;
      vb = cfg.beta2 * vb + (1.0 - cfg.beta2) * gb.cwiseProduct(gb);
      w.array() -= lr * (mw.array() / c1) / ((vw.array() / c2).sqrt() + cfg.eps);
      b.array() -= lr * (mb.array() / c1) / ((vb.array() / c2).sqrt() + cfg.eps);
    }
  }

  auto predict = [&](const RowMat& x) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index r = 0; r < x.rows(); ++r) out.push_back(argmax_lowest(w * x.row(r).transpose() + b));
    return out;
  };
  result.train_accuracy = accuracy(predict(xtr), train.labels);
  result.test_accuracy = accuracy(predict(xte), test.labels);
  return result;
}

std::vector<int> zero_shot_from_embeddings(const RowMat& class_embeddings, const RowMat& video_embeddings) {
  if (class_embeddings.rows() < 1) throw ConfigError("zero-shot needs at least one class");
  if (class_embeddings.cols() != video_embeddings.cols()) throw ShapeError("zero-shot embedding dims differ");
  const RowMat classes = unit_rows(class_embeddings);
  const RowMat videos = unit_rows(video_embeddings);
  const RowMat sims = videos * classes.transpose();
  std::vector<int> preds;
  preds.reserve(static_cast<std::size_t>(sims.rows()));
  for (Eigen::Index r = 0; r < sims.rows(); ++r) preds.push_back(argmax_lowest(sims.row(r).transpose()));
  return preds;
}

std::vector<int> zero_shot_classify(const RowMat& class_texts, const RowMat& videos,
                                    const EncoderParams& text_encoder,
                                    const EncoderParams& visual_encoder) {
  return zero_shot_from_embeddings(embed_rows(text_encoder, class_texts), embed_rows(visual_encoder, videos));
}

RetrievalRecall retrieval_recall(const RowMat& f_v, const RowMat& f_t, std::span<const int> ks) {
  const auto m = f_v.rows();
  if (f_t.rows() != m || f_t.cols() != f_v.cols()) throw ShapeError("retrieval sets must be paired row-for-row");
  if (m == 0) throw ConfigError("retrieval needs at least one pair");
  for (int k : ks)
    if (k < 1 || k > m) throw ConfigError("recall@" + std::to_string(k) + " exceeds set size " + std::to_string(m));

  const RowMat sims = f_v * f_t.transpose();  // sims(i, j) = <v_i, t_j>
  std::vector<long> rank_v2t(static_cast<std::size_t>(m)), rank_t2v(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    const double target = sims(i, i);
    long rv = 1, rt = 1;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == i) continue;
      if (sims(i, j) > target || (sims(i, j) == target && j < i)) ++rv;
      if (sims(j, i) > target || (sims(j, i) == target && j < i)) ++rt;
    }
    rank_v2t[static_cast<std::size_t>(i)] = rv;
    rank_t2v[static_cast<std::size_t>(i)] = rt;
  }

  RetrievalRecall out;
  out.ks.assign(ks.begin(), ks.end());
  for (int k : ks) {
    auto frac = [&](const std::vector<long>& ranks) {
      return static_cast<double>(std::count_if(ranks.begin(), ranks.end(), [k](long r) { return r <= k; })) /
             static_cast<double>(m);
    };
    out.video_to_text.push_back(frac(rank_v2t));
    out.text_to_video.push_back(frac(rank_t2v));
  }
  return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("prediction and label counts differ");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace cpd
