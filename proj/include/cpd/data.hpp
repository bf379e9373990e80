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

// Paired two-modality feature data: synthetic generation with controllable
// feature and caption noise, the text file format for pre-extracted pairs,
// and deterministic stratified splits.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cpd/linalg.hpp"

namespace cpd {

struct PairedInstance {
  int id = 0;
  int label = -1;  // -1 when unlabeled; labels are never used for training
  Vec visual;
  Vec text;
};

struct Splits {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;

  bool operator==(const Splits&) const = default;
};

enum class Provenance { synthetic, file };

struct PairedDataset {
  std::vector<PairedInstance> instances;
  Splits splits;
  Provenance provenance = Provenance::file;
  int dv = 0;
  int dt = 0;
  bool labeled = false;
  // Clean per-class text prototypes, known only for synthetic data.
  RowMat text_prototypes;

  int size() const { return static_cast<int>(instances.size()); }
  int num_classes() const;

  RowMat visual_rows(std::span<const int> idx) const;
  RowMat text_rows(std::span<const int> idx) const;
  std::vector<int> labels(std::span<const int> idx) const;
};

// Instance content equality (ids, labels, features, dims). Splits and
// provenance are ignored.
bool same_instances(const PairedDataset& a, const PairedDataset& b);

struct SyntheticSpec {
  int classes = 10;
  int per_class = 60;
  int dv = 48;
  int dt = 48;
  double sigma = 0.1;  // per-modality additive noise scale
  double rho = 0.2;    // probability that a caption describes another class
  std::uint64_t seed = 0;

  void validate() const;
};

// Each class owns a pair of unit prototypes. An instance draws one latent
// gaussian vector; each modality sees prototype + sigma * (fixed rotation of
// the latent), so instance identity is shared across modalities while each
// modality's noise is marginally isotropic N(0, sigma^2 I). With probability
// rho the caption is replaced by a fresh draw around a different class's
// text prototype, carrying no information about the instance.
PairedDataset generate(const SyntheticSpec& spec);

// Header: "cpdpairs v1 N=<n> dv=<dv> dt=<dt> labeled=<0|1>", then one line
// per record: id,label,<dv floats>,<dt floats>. Floats are written in
// shortest round-trip form.
void write_dataset(const std::filesystem::path& path, const PairedDataset& ds);
PairedDataset load_dataset(const std::filesystem::path& path);

void write_splits(const std::filesystem::path& path, const Splits& splits);
Splits read_splits(const std::filesystem::path& path);

// "cpdprotos v1 C=<c> dt=<dt>" followed by one "class,<dt floats>" line per class.
void write_prototypes(const std::filesystem::path& path, const RowMat& protos);
RowMat read_prototypes(const std::filesystem::path& path);

// Seeded shuffle then contiguous assignment by cumulative fractions
// (train, val, test), done per class when the data is labeled.
Splits make_splits(const PairedDataset& ds, std::array<double, 3> fractions, std::uint64_t seed);
PairedDataset split(PairedDataset ds, std::array<double, 3> fractions, std::uint64_t seed);

}  // namespace cpd
