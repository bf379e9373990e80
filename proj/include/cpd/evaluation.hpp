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

// Frozen-feature evaluation: cosine kNN, a linear softmax probe trained with
// Adam, zero-shot classification through class-text embeddings, and
// bidirectional retrieval recall@k.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cpd/encoder.hpp"
#include "cpd/linalg.hpp"

namespace cpd {

enum class LayerTag { embedding, penultimate };

const char* to_string(LayerTag tag);

struct LabeledFeatureSet {
  RowMat features;
  std::vector<int> labels;
  LayerTag layer_tag = LayerTag::embedding;

  int num_classes() const;
  void validate() const;
};

inline constexpr int kDefaultKnnK = 25;

// Majority vote among the k most cosine-similar training rows. Vote ties go
// to the class with the larger summed similarity, then the lower class id.
// Neighbor ties at equal similarity prefer the lower training index.
std::vector<int> knn_classify(const LabeledFeatureSet& train, const RowMat& queries,
                              int k = kDefaultKnnK);

struct ProbeConfig {
  double lr = 1e-3;
  int epochs = 30;
  int decay_every = 10;
  double decay = 0.1;
  int batch_size = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool standardize = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ProbeResult {
  double test_accuracy = 0.0;
  double train_accuracy = 0.0;
  int clamped_dims = 0;  // dimensions whose variance hit the 1e-8 floor
};

ProbeResult linear_probe(const LabeledFeatureSet& train, const LabeledFeatureSet& test,
                         const ProbeConfig& cfg = {});

// Argmax cosine between each video embedding and the class embeddings.
std::vector<int> zero_shot_from_embeddings(const RowMat& class_embeddings,
                                           const RowMat& video_embeddings);

std::vector<int> zero_shot_classify(const RowMat& class_texts, const RowMat& videos,
                                    const EncoderParams& text_encoder,
                                    const EncoderParams& visual_encoder);

struct RetrievalRecall {
  std::vector<int> ks;
  std::vector<double> video_to_text;
  std::vector<double> text_to_video;

  // Mean of both directions at ks[idx].
  double mean(std::size_t idx) const { return 0.5 * (video_to_text[idx] + text_to_video[idx]); }
};

// Rows of f_v and f_t are paired by index. Rank of the true partner counts
// strictly better candidates plus equal-scored candidates with a lower index.
RetrievalRecall retrieval_recall(const RowMat& f_v, const RowMat& f_t, std::span<const int> ks);

double accuracy(std::span<const int> predicted, std::span<const int> truth);

}  // namespace cpd
