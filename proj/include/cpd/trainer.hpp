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

// End-to-end training: batch assembly, objective dispatch, memory-bank
// maintenance, partition-function calibration for NCE, and the two-stage
// curriculum (text encoder frozen, then joint training at reduced learning
// rates once validation retrieval stops improving).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cpd/data.hpp"
#include "cpd/encoder.hpp"
#include "cpd/evaluation.hpp"
#include "cpd/memory_bank.hpp"
#include "cpd/objectives.hpp"

namespace cpd {

enum class Objective { cpd_nce, cpd_exact, mmid, ranking };
enum class Stage { stage1_text_frozen = 1, stage2_joint = 2 };
// two_stage: text frozen until plateau, then joint at reduced rates.
// direct: both encoders trained at stage1_lr from the first epoch.
enum class CurriculumMode { two_stage, direct };
// How the text encoder starts: autoencoder warmup on training-split captions
// (a stand-in for a pre-trained language model) or plain random init.
enum class TextInit { warmup, random };

const char* to_string(Objective o);
const char* to_string(CurriculumMode m);
const char* to_string(TextInit t);
Objective parse_objective(const std::string& s);
CurriculumMode parse_curriculum(const std::string& s);
TextInit parse_text_init(const std::string& s);

struct TrainingConfig {
  Objective objective = Objective::cpd_nce;
  double tau = 0.07;
  int m = 4096;
  double delta = 0.5;
  int batch_size = 32;
  double stage1_lr = 0.1;
  double stage2_lr_text = 3e-5;
  double stage2_lr_rest = 0.01;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  int max_epochs = 300;
  int plateau_patience = 5;
  double plateau_min_delta = 0.002;
  std::uint64_t seed = 0;
  double bank_momentum = 0.5;
  bool exclude_positive = true;
  int hidden_dim = 128;
  int embed_dim = 64;
  CurriculumMode curriculum = CurriculumMode::two_stage;
  TextInit text_init = TextInit::warmup;
  int warmup_epochs = 60;
  double warmup_lr = 0.05;

  void validate() const;
};

struct CurriculumState {
  Stage stage = Stage::stage1_text_frozen;
  double best_val_recall = -1.0;
  int epochs_since_improvement = 0;
  bool stopped = false;

  bool operator==(const CurriculumState&) const = default;
};

// One validation report. Improvement beyond best + min_delta resets the
// counter; otherwise it grows, and reaching `patience` moves Stage 1 to
// Stage 2 (counter reset) or stops training in Stage 2.
CurriculumState plateau_step(CurriculumState cur, double val_recall, int patience, double min_delta);

struct MetricsRecord {
  int epoch = 0;
  Stage stage = Stage::stage1_text_frozen;
  Objective objective = Objective::cpd_nce;
  double train_loss = 0.0;
  double val_recall_at_1 = 0.0;  // mean of both retrieval directions
  double val_recall_at_5 = 0.0;
  double wall_time = 0.0;  // seconds spent in the epoch

  // Everything except wall_time.
  bool same_values(const MetricsRecord& o) const;
};

// Mean over queries of sum_j exp(<bank_j, q>/tau). Throws NumericFault if the
// sum overflows a double.
double calibrate_z(const RowMat& bank, const RowMat& queries, Temperature tau);

// Per-instance state that fully determines the rest of a run.
struct TrainState {
  EncoderParams visual;
  EncoderParams text;
  OptimizerState visual_opt;
  OptimizerState text_opt;
  MemoryBank bank;
  CurriculumState curriculum;
  double z_v2t = 0.0;  // video queries against the text bank
  double z_t2v = 0.0;
  int epoch = 0;
  std::mt19937_64 shuffle_rng;
  std::mt19937_64 noise_rng;
};

class Trainer {
 public:
  // The dataset must carry non-empty train and val splits. Bank row k holds
  // the k-th training-split instance.
  Trainer(const PairedDataset& data, TrainingConfig config);

  // One pass over the shuffled training split followed by validation. A
  // non-finite loss restores the pre-epoch state and throws NumericFault.
  MetricsRecord train_epoch();

  // Applies a validation report to the curriculum, recalibrating z on the
  // Stage 1 -> Stage 2 switch. Returns the new state.
  const CurriculumState& report_validation(double val_recall);

  RetrievalRecall validate() const;

  // Mean per-instance loss of the configured objective for the given
  // training positions, on the current state, without mutating anything.
  double batch_loss(std::span<const int> positions) const;

  // Recomputes both partition-function estimates from the first batch of
  // training positions against the current banks.
  void calibrate();

  bool text_trainable() const;
  double visual_lr() const;
  double text_lr() const;

  const TrainState& state() const { return state_; }
  const TrainingConfig& config() const { return config_; }
  int train_size() const { return static_cast<int>(train_ids_.size()); }
  const RowMat& train_visual() const { return train_v_; }
  const RowMat& train_text() const { return train_t_; }

  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

 private:
  struct BatchEval {
    double loss = 0.0;
    std::vector<ForwardCache> cache_v;
    std::vector<ForwardCache> cache_t;
    RowMat grad_v;  // gradient of the batch-mean loss w.r.t. each embedding
    RowMat grad_t;
  };
  BatchEval evaluate_batch(std::span<const int> positions, std::mt19937_64& noise_rng) const;
  void warmup_text_encoder();

  TrainingConfig config_;
  std::vector<int> train_ids_;
  RowMat train_v_, train_t_;
  RowMat val_v_, val_t_;
  TrainState state_;
};

struct CurriculumResult {
  EncoderParams visual;
  EncoderParams text;
  MemoryBank bank;
  std::vector<MetricsRecord> history;
};

using EpochObserver = std::function<void(const Trainer&, const MetricsRecord&)>;

// Trains until the curriculum stops or max_epochs is reached.
CurriculumResult run_curriculum(const PairedDataset& data, const TrainingConfig& config,
                                const EpochObserver& observer = {});

// Drives an existing trainer (fresh or resumed) to completion.
std::vector<MetricsRecord> run_curriculum(Trainer& trainer, const EpochObserver& observer = {});

// Encoders stored in a trainer checkpoint.
struct EncoderPair {
  EncoderParams visual;
  EncoderParams text;
};
EncoderPair read_checkpoint_encoders(const std::filesystem::path& path);

}  // namespace cpd
