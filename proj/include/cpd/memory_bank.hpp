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

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "cpd/linalg.hpp"

namespace cpd {

enum class Modality { visual, text };

// Per-instance embedding stores for both modalities. Rows are kept on the
// unit sphere; N and d are fixed at construction.
class MemoryBank {
 public:
  MemoryBank() = default;

  // Random unit rows, deterministic in seed.
  static MemoryBank random(int n, int d, double momentum, std::uint64_t seed);

  int size() const { return static_cast<int>(visual_.rows()); }
  int dim() const { return static_cast<int>(visual_.cols()); }
  double momentum() const { return momentum_; }

  const RowMat& store(Modality m) const { return m == Modality::visual ? visual_ : text_; }

  // row_i <- normalize(momentum*row_i + (1 - momentum)*embedding)
  void update(Modality m, int i, const Vec& embedding, double momentum);
  void update(Modality m, int i, const Vec& embedding) { update(m, i, embedding, momentum_); }

  // Copies of the requested rows.
  RowMat lookup(Modality m, std::span<const int> indices) const;
  Vec row(Modality m, int i) const;

  void write(std::ostream& out) const;
  static MemoryBank read(std::istream& in);

 private:
  RowMat& mutable_store(Modality m) { return m == Modality::visual ? visual_ : text_; }
  void check_index(int i) const;

  RowMat visual_;
  RowMat text_;
  double momentum_ = 0.5;
};

struct NoiseDraw {
  std::vector<int> indices;
};

// m indices drawn i.i.d. from the uniform distribution over [0, n). With
// exclude_positive, draws equal to `positive` are rejected and redrawn.
NoiseDraw sample_noise(int n, int m, int positive, bool exclude_positive, std::mt19937_64& rng);

inline NoiseDraw sample_noise(const MemoryBank& bank, int m, int positive, bool exclude_positive,
                              std::mt19937_64& rng) {
  return sample_noise(bank.size(), m, positive, exclude_positive, rng);
}

}  // namespace cpd
