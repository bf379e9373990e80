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

#include "cpd/memory_bank.hpp"

#include <istream>
#include <ostream>
#include <string>

#include "cpd/binary_io.hpp"
#include "cpd/encoder.hpp"
#include "cpd/errors.hpp"

namespace cpd {

MemoryBank MemoryBank::random(int n, int d, double momentum, std::uint64_t seed) {
  if (n < 1 || d < 1) throw ConfigError("memory bank needs n >= 1 and d >= 1");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("bank momentum must lie in [0, 1]");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  MemoryBank bank;
  bank.momentum_ = momentum;
  for (RowMat* store : {&bank.visual_, &bank.text_}) {
    store->resize(n, d);
    for (int i = 0; i < n; ++i) {
      Vec v(d);
      // Gaussian draws are rotation invariant; normalizing gives a uniform
      // point on the sphere. A zero draw is practically impossible.
      do {
        for (int k = 0; k < d; ++k) v[k] = normal(rng);
      } while (v.norm() < 1e-12);
      store->row(i) = (v / v.norm()).transpose();
    }
  }
  return bank;
}

void MemoryBank::check_index(int i) const {
  if (i < 0 || i >= size())
    throw ContractViolation("bank index " + std::to_string(i) + " outside [0, " +
                            std::to_string(size()) + ")");
}

void MemoryBank::update(Modality m, int i, const Vec& embedding, double momentum) {
  check_index(i);
  if (embedding.size() != dim()) throw ShapeError("bank update has wrong dim");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("bank momentum must lie in [0, 1]");
  if (!embedding.allFinite()) throw NumericFault("non-finite embedding written to memory bank");
  auto row = mutable_store(m).row(i);
  if (momentum == 0.0) {
    row = l2_normalize(embedding).transpose();
    return;
  }
  if (momentum == 1.0) return;
  const Vec blended = momentum * row.transpose() + (1.0 - momentum) * embedding;
  // Exactly antipodal inputs cancel; take the new embedding in that case.
  if (blended.norm() < 1e-12) {
    row = l2_normalize(embedding).transpose();
  } else {
    row = l2_normalize(blended).transpose();
  }
}

RowMat MemoryBank::lookup(Modality m, std::span<const int> indices) const {
  const RowMat& src = store(m);
  RowMat out(static_cast<Eigen::Index>(indices.size()), dim());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    check_index(indices[k]);
    out.row(static_cast<Eigen::Index>(k)) = src.row(indices[k]);
  }
  return out;
}

Vec MemoryBank::row(Modality m, int i) const {
  check_index(i);
  return store(m).row(i).transpose();
}

void MemoryBank::write(std::ostream& out) const {
  out.write("CPDB", 4);
  binio::write_u64(out, static_cast<std::uint64_t>(size()));
  binio::write_u64(out, static_cast<std::uint64_t>(dim()));
  binio::write_f64(out, momentum_);
  for (const RowMat* store : {&visual_, &text_})
    for (Eigen::Index r = 0; r < store->rows(); ++r)
      for (Eigen::Index c = 0; c < store->cols(); ++c) binio::write_f64(out, (*store)(r, c));
  if (!out) throw IoError("failed writing memory bank");
}

MemoryBank MemoryBank::read(std::istream& in) {
  binio::expect_magic(in, "CPDB");
  const auto n = binio::read_u64(in);
  const auto d = binio::read_u64(in);
  if (n == 0 || d == 0 || n > (1u << 26) || d > (1u << 16)) throw IoError("implausible bank shape in checkpoint");
  MemoryBank bank;
  bank.momentum_ = binio::read_f64(in);
  for (RowMat* store : {&bank.visual_, &bank.text_}) {
    store->resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index r = 0; r < store->rows(); ++r)
      for (Eigen::Index c = 0; c < store->cols(); ++c) (*store)(r, c) = binio::read_f64(in);
  }
  return bank;
}

NoiseDraw sample_noise(int n, int m, int positive, bool exclude_positive, std::mt19937_64& rng) {
  if (n < 1 || m < 0) throw ConfigError("noise sampling needs n >= 1 and m >= 0");
  // Draws are with replacement, so only the excluding sampler is bounded.
  if (exclude_positive && m > n - 1)
    throw ConfigError("cannot draw m=" + std::to_string(m) + " noise samples from " +
                      std::to_string(n - 1) + " candidates");
  if (exclude_positive && (positive < 0 || positive >= n))
    throw ContractViolation("positive index outside the bank");

  std::uniform_int_distribution<int> pick(0, n - 1);
  NoiseDraw draw;
  draw.indices.reserve(static_cast<std::size_t>(m));
  while (static_cast<int>(draw.indices.size()) < m) {
    const int j = pick(rng);
    if (exclude_positive && j == positive) continue;
    draw.indices.push_back(j);
  }
  return draw;
}

}  // namespace cpd
