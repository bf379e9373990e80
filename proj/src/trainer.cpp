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

#include "cpd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "cpd/binary_io.hpp"
#include "cpd/errors.hpp"

namespace cpd {
namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over (seed, stream)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

void set_rng_state(std::mt19937_64& rng, const std::string& s) {
  std::istringstream ss(s);
  ss >> rng;
  if (!ss) throw IoError("corrupt rng state in checkpoint");
}

// Batches of batch_size; a trailing single item joins the previous batch so
// every batch has at least two pairs.
std::vector<std::span<const int>> make_batches(const std::vector<int>& order, int batch_size) {
  std::vector<std::span<const int>> out;
  const std::size_t n = order.size();
  const std::size_t b = static_cast<std::size_t>(batch_size);
  std::size_t start = 0;
  while (start < n) {
    std::size_t end = std::min(n, start + b);
    if (n - end == 1) end = n;
    out.emplace_back(order.data() + start, end - start);
    start = end;
  }
  return out;
}

}  // namespace

const char* to_string(Objective o) {
  switch (o) {
    case Objective::cpd_nce: return "cpd_nce";
    case Objective::cpd_exact: return "cpd_exact";
    case Objective::mmid: return "mmid";
    case Objective::ranking: return "ranking";
  }
  return "?";
}

const char* to_string(CurriculumMode m) { return m == CurriculumMode::two_stage ? "two_stage" : "direct"; }
const char* to_string(TextInit t) { return t == TextInit::warmup ? "warmup" : "random"; }

Objective parse_objective(const std::string& s) {
  for (auto o : {Objective::cpd_nce, Objective::cpd_exact, Objective::mmid, Objective::ranking})
    if (s == to_string(o)) return o;
  throw ConfigError("unknown objective '" + s + "' (expected cpd_nce, cpd_exact, mmid or ranking)");
}

CurriculumMode parse_curriculum(const std::string& s) {
  if (s == "two_stage") return CurriculumMode::two_stage;
  if (s == "direct") return CurriculumMode::direct;
  throw ConfigError("unknown curriculum '" + s + "' (expected two_stage or direct)");
}

TextInit parse_text_init(const std::string& s) {
  if (s == "warmup") return TextInit::warmup;
  if (s == "random") return TextInit::random;
  throw ConfigError("unknown text_init '" + s + "' (expected warmup or random)");
}

void TrainingConfig::validate() const {
  Temperature{tau};
  if (m < 1) throw ConfigError("m must be >= 1");
  if (!(delta >= 0.0)) throw ConfigError("delta must be >= 0");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  for (double lr : {stage1_lr, stage2_lr_text, stage2_lr_rest, warmup_lr})
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rates must be finite and >= 0");
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) throw ConfigError("sgd_momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (plateau_patience < 1) throw ConfigError("plateau_patience must be >= 1");
  if (!(plateau_min_delta >= 0.0)) throw ConfigError("plateau_min_delta must be >= 0");
  if (!(bank_momentum >= 0.0 && bank_momentum <= 1.0)) throw ConfigError("bank_momentum must lie in [0, 1]");
  if (hidden_dim < 1 || embed_dim < 1) throw ConfigError("encoder widths must be >= 1");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
}

CurriculumState plateau_step(CurriculumState cur, double val_recall, int patience, double min_delta) {
  if (cur.stopped) return cur;
  if (val_recall > cur.best_val_recall + min_delta) {
    cur.best_val_recall = val_recall;
    cur.epochs_since_improvement = 0;
    return cur;
  }
  ++cur.epochs_since_improvement;
  if (cur.epochs_since_improvement >= patience) {
    if (cur.stage == Stage::stage1_text_frozen) {
      cur.stage = Stage::stage2_joint;
      cur.epochs_since_improvement = 0;
    } else {
      cur.stopped = true;
    }
  }
  return cur;
}

bool MetricsRecord::same_values(const MetricsRecord& o) const {
  return epoch == o.epoch && stage == o.stage && objective == o.objective && train_loss == o.train_loss &&
         val_recall_at_1 == o.val_recall_at_1 && val_recall_at_5 == o.val_recall_at_5;
}

double calibrate_z(const RowMat& bank, const RowMat& queries, Temperature tau) {
  if (bank.rows() == 0) throw ConfigError("calibration needs a populated bank");
  if (queries.rows() == 0) throw ConfigError("calibration needs at least one query");
  if (queries.cols() != bank.cols()) throw ShapeError("calibration query dim differs from bank dim");
  std::vector<double> sums;
  sums.reserve(static_cast<std::size_t>(queries.rows()));
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    const Vec scores = (bank * queries.row(q).transpose()) / tau.value();
    const double s = std::exp(log_sum_exp(scores));
    if (!std::isfinite(s)) throw NumericFault("partition function overflows a double");
    sums.push_back(s);
  }
  // Sorted summation makes the mean independent of query order.
  std::sort(sums.begin(), sums.end());
  double total = 0.0;
  for (double s : sums) total += s;
  const double z = total / static_cast<double>(sums.size());
  if (!std::isfinite(z) || !(z > 0.0)) throw NumericFault("partition function estimate is not positive and finite");
  return z;
}

Trainer::Trainer(const PairedDataset& data, TrainingConfig config) : config_(std::move(config)) {
  config_.validate();
  if (data.splits.train.size() < 2) throw ConfigError("training split needs at least 2 pairs");
  if (data.splits.val.empty()) throw ConfigError("validation split is empty");
  train_ids_ = data.splits.train;
  train_v_ = data.visual_rows(train_ids_);
  train_t_ = data.text_rows(train_ids_);
  val_v_ = data.visual_rows(data.splits.val);
  val_t_ = data.text_rows(data.splits.val);

  const int n = train_size();
  if (config_.objective == Objective::cpd_nce) {
    const int available = config_.exclude_positive ? n - 1 : n;
    if (config_.m > available)
      throw ConfigError("m=" + std::to_string(config_.m) + " exceeds the " + std::to_string(available) +
                        " noise candidates in the training split");
  }

  const std::vector<int> dims_v{data.dv, config_.hidden_dim, config_.embed_dim};
  const std::vector<int> dims_t{data.dt, config_.hidden_dim, config_.embed_dim};
  state_.visual = init_params(dims_v, derive_seed(config_.seed, 1));
  state_.text = init_params(dims_t, derive_seed(config_.seed, 2));
  state_.visual_opt = make_optimizer(state_.visual, config_.sgd_momentum, config_.weight_decay);
  state_.text_opt = make_optimizer(state_.text, config_.sgd_momentum, config_.weight_decay);
  state_.bank = MemoryBank::random(n, config_.embed_dim, config_.bank_momentum, derive_seed(config_.seed, 3));
  state_.shuffle_rng.seed(derive_seed(config_.seed, 4));
  state_.noise_rng.seed(derive_seed(config_.seed, 5));
  state_.curriculum.stage =
      config_.curriculum == CurriculumMode::direct ? Stage::stage2_joint : Stage::stage1_text_frozen;

  if (config_.text_init == TextInit::warmup && config_.warmup_epochs > 0) warmup_text_encoder();
  if (config_.objective == Objective::cpd_nce) calibrate();
}

void Trainer::warmup_text_encoder() {
  // Autoencoder pre-fit of the text encoder on training-split captions only:
  // a linear decoder reconstructs the raw caption from the unit embedding.
  const int n = train_size();
  const int dt = static_cast<int>(train_t_.cols());
  std::mt19937_64 rng(derive_seed(config_.seed, 6));
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(config_.embed_dim)));
  Mat decoder(dt, config_.embed_dim);
  for (Eigen::Index r = 0; r < decoder.rows(); ++r)
    for (Eigen::Index c = 0; c < decoder.cols(); ++c) decoder(r, c) = normal(rng);
  Vec decoder_bias = Vec::Zero(dt);
  Mat decoder_buf = Mat::Zero(dt, config_.embed_dim);
  Vec decoder_bias_buf = Vec::Zero(dt);
  OptimizerState opt = make_optimizer(state_.text, config_.sgd_momentum, 0.0);

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config_.warmup_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (auto batch : make_batches(order, config_.batch_size)) {
      const double scale = 1.0 / static_cast<double>(batch.size());
      ParamGrads grads = ParamGrads::zeros_like(state_.text);
      Mat g_dec = Mat::Zero(dt, config_.embed_dim);
      Vec g_dec_bias = Vec::Zero(dt);
      for (int pos : batch) {
        const Vec x = train_t_.row(pos).transpose();
        const ForwardCache cache = forward(state_.text, x);
        const Vec residual = decoder * cache.embedding + decoder_bias - x;
        const Vec g_out = 2.0 * scale * residual;
        g_dec.noalias() += g_out * cache.embedding.transpose();
        g_dec_bias += g_out;
        grads += backward(state_.text, cache, decoder.transpose() * g_out).grads;
      }
      sgd_step(state_.text, grads, opt, config_.warmup_lr);
      decoder_buf = config_.sgd_momentum * decoder_buf + g_dec;
      decoder_bias_buf = config_.sgd_momentum * decoder_bias_buf + g_dec_bias;
      decoder -= config_.warmup_lr * decoder_buf;
      decoder_bias -= config_.warmup_lr * decoder_bias_buf;
    }
  }
}

void Trainer::calibrate() {
  const int count = std::min(config_.batch_size, train_size());
  RowMat fv(count, config_.embed_dim), ft(count, config_.embed_dim);
  for (int k = 0; k < count; ++k) {
    fv.row(k) = embed(state_.visual, train_v_.row(k).transpose()).transpose();
    ft.row(k) = embed(state_.text, train_t_.row(k).transpose()).transpose();
  }
  const Temperature tau(config_.tau);
  state_.z_v2t = calibrate_z(state_.bank.store(Modality::text), fv, tau);
  state_.z_t2v = calibrate_z(state_.bank.store(Modality::visual), ft, tau);
}

bool Trainer::text_trainable() const { return state_.curriculum.stage == Stage::stage2_joint; }

double Trainer::visual_lr() const {
  if (config_.curriculum == CurriculumMode::direct) return config_.stage1_lr;
  return state_.curriculum.stage == Stage::stage1_text_frozen ? config_.stage1_lr : config_.stage2_lr_rest;
}

double Trainer::text_lr() const {
  if (!text_trainable()) return 0.0;
  return config_.curriculum == CurriculumMode::direct ? config_.stage1_lr : config_.stage2_lr_text;
}

Trainer::BatchEval Trainer::evaluate_batch(std::span<const int> positions, std::mt19937_64& noise_rng) const {
  const auto b = static_cast<Eigen::Index>(positions.size());
  const int d = config_.embed_dim;
  const Temperature tau(config_.tau);
  BatchEval out;
  out.cache_v.reserve(positions.size());
  out.cache_t.reserve(positions.size());
  RowMat fv(b, d), ft(b, d);
  for (Eigen::Index k = 0; k < b; ++k) {
    const int pos = positions[static_cast<std::size_t>(k)];
    out.cache_v.push_back(forward(state_.visual, train_v_.row(pos).transpose()));
    out.cache_t.push_back(forward(state_.text, train_t_.row(pos).transpose()));
    fv.row(k) = out.cache_v.back().embedding.transpose();
    ft.row(k) = out.cache_t.back().embedding.transpose();
  }
  out.grad_v = RowMat::Zero(b, d);
  out.grad_t = RowMat::Zero(b, d);
  const double inv_b = 1.0 / static_cast<double>(b);
  const MemoryBank& bank = state_.bank;

  switch (config_.objective) {
    case Objective::cpd_nce: {
      NceConfig v2t{config_.m, train_size(), state_.z_v2t, config_.exclude_positive};
      NceConfig t2v{config_.m, train_size(), state_.z_t2v, config_.exclude_positive};
      for (Eigen::Index k = 0; k < b; ++k) {
        const int pos = positions[static_cast<std::size_t>(k)];
        const NoiseDraw draw_t = sample_noise(bank, config_.m, pos, config_.exclude_positive, noise_rng);
        const QueryLoss lv = nce_loss(fv.row(k).transpose(), bank.row(Modality::text, pos),
                                      bank.lookup(Modality::text, draw_t.indices), v2t, tau);
        const NoiseDraw draw_v = sample_noise(bank, config_.m, pos, config_.exclude_positive, noise_rng);
        const QueryLoss lt = nce_loss(ft.row(k).transpose(), bank.row(Modality::visual, pos),
                                      bank.lookup(Modality::visual, draw_v.indices), t2v, tau);
        out.loss += (lv.loss + lt.loss) * inv_b;
        out.grad_v.row(k) = lv.grad.transpose() * inv_b;
        out.grad_t.row(k) = lt.grad.transpose() * inv_b;
      }
      break;
    }
    case Objective::cpd_exact:
    case Objective::mmid: {
      const auto& bank_v = bank.store(Modality::visual);
      const auto& bank_t = bank.store(Modality::text);
      for (Eigen::Index k = 0; k < b; ++k) {
        const int pos = positions[static_cast<std::size_t>(k)];
        const PairLoss l = config_.objective == Objective::cpd_exact
                               ? cpd_loss_exact(fv.row(k).transpose(), ft.row(k).transpose(), pos, bank_v, bank_t, tau)
                               : mmid_loss_exact(fv.row(k).transpose(), ft.row(k).transpose(), pos, bank_v, bank_t, tau);
        out.loss += l.loss * inv_b;
        out.grad_v.row(k) = l.grad_v.transpose() * inv_b;
        out.grad_t.row(k) = l.grad_t.transpose() * inv_b;
      }
      break;
    }
    case Objective::ranking: {
      RankingResult r = ranking_loss(fv, ft, config_.delta);
      out.loss = r.loss;
      out.grad_v = std::move(r.grad_v);
      out.grad_t = std::move(r.grad_t);
      break;
    }
  }
  return out;
}

double Trainer::batch_loss(std::span<const int> positions) const {
  for (int p : positions)
    if (p < 0 || p >= train_size()) throw ContractViolation("training position out of range");
  std::mt19937_64 rng = state_.noise_rng;
  return evaluate_batch(positions, rng).loss;
}

MetricsRecord Trainer::train_epoch() {
  const auto started = std::chrono::steady_clock::now();
  const TrainState snapshot = state_;
  try {
    std::vector<int> order(static_cast<std::size_t>(train_size()));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), state_.shuffle_rng);

    const bool train_text = text_trainable();
    const double lr_v = visual_lr();
    const double lr_t = text_lr();
    double loss_total = 0.0;

    for (auto batch : make_batches(order, config_.batch_size)) {
      BatchEval eval = evaluate_batch(batch, state_.noise_rng);
      if (!std::isfinite(eval.loss) || !eval.grad_v.allFinite() || !eval.grad_t.allFinite())
        throw NumericFault("non-finite loss at epoch " + std::to_string(state_.epoch + 1));
      loss_total += eval.loss * static_cast<double>(batch.size());

      ParamGrads grads_v = ParamGrads::zeros_like(state_.visual);
      for (std::size_t k = 0; k < batch.size(); ++k)
        grads_v += backward(state_.visual, eval.cache_v[k], eval.grad_v.row(static_cast<Eigen::Index>(k)).transpose()).grads;
      sgd_step(state_.visual, grads_v, state_.visual_opt, lr_v);

      if (train_text) {
        ParamGrads grads_t = ParamGrads::zeros_like(state_.text);
        for (std::size_t k = 0; k < batch.size(); ++k)
          grads_t += backward(state_.text, eval.cache_t[k], eval.grad_t.row(static_cast<Eigen::Index>(k)).transpose()).grads;
        sgd_step(state_.text, grads_t, state_.text_opt, lr_t);
      }

      for (std::size_t k = 0; k < batch.size(); ++k) {
        state_.bank.update(Modality::visual, batch[k], eval.cache_v[k].embedding);
        state_.bank.update(Modality::text, batch[k], eval.cache_t[k].embedding);
      }
    }

    MetricsRecord rec;
    rec.epoch = ++state_.epoch;
    rec.stage = state_.curriculum.stage;
    rec.objective = config_.objective;
    rec.train_loss = loss_total / static_cast<double>(train_size());
    if (!std::isfinite(rec.train_loss)) throw NumericFault("non-finite epoch loss");
    const RetrievalRecall recall = validate();
    rec.val_recall_at_1 = recall.mean(0);
    rec.val_recall_at_5 = recall.mean(1);
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return rec;
  } catch (const NumericFault&) {
    state_ = snapshot;
    throw;
  } catch (const DegenerateVectorError& e) {
    state_ = snapshot;
    throw NumericFault(std::string("embedding collapsed: ") + e.what());
  }
}

const CurriculumState& Trainer::report_validation(double val_recall) {
  const Stage before = state_.curriculum.stage;
  state_.curriculum =
      plateau_step(state_.curriculum, val_recall, config_.plateau_patience, config_.plateau_min_delta);
  if (before == Stage::stage1_text_frozen && state_.curriculum.stage == Stage::stage2_joint &&
      config_.objective == Objective::cpd_nce) {
    calibrate();
  }
  return state_.curriculum;
}

RetrievalRecall Trainer::validate() const {
  const RowMat fv = embed_rows(state_.visual, val_v_);
  const RowMat ft = embed_rows(state_.text, val_t_);
  const int m = static_cast<int>(fv.rows());
  const std::vector<int> ks{1, std::min(5, m)};
  return retrieval_recall(fv, ft, ks);
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write("CPDK", 4);
    binio::write_u32(out, kCheckpointVersion);
    binio::write_u32(out, static_cast<std::uint32_t>(state_.epoch));
    binio::write_u32(out, static_cast<std::uint32_t>(state_.curriculum.stage));
    binio::write_f64(out, state_.curriculum.best_val_recall);
    binio::write_u32(out, static_cast<std::uint32_t>(state_.curriculum.epochs_since_improvement));
    binio::write_u32(out, state_.curriculum.stopped ? 1u : 0u);
    binio::write_f64(out, state_.z_v2t);
    binio::write_f64(out, state_.z_t2v);
    binio::write_string(out, rng_state(state_.shuffle_rng));
    binio::write_string(out, rng_state(state_.noise_rng));
    write_params(out, state_.visual);
    write_params(out, state_.text);
    write_optimizer(out, state_.visual_opt);
    write_optimizer(out, state_.text_opt);
    state_.bank.write(out);
    if (!out) throw IoError("failed writing checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

namespace {

struct CheckpointHeader {
  int epoch;
  CurriculumState curriculum;
  double z_v2t, z_t2v;
  std::string shuffle_rng, noise_rng;
};

CheckpointHeader read_header(std::istream& in) {
  binio::expect_magic(in, "CPDK");
  if (binio::read_u32(in) != kCheckpointVersion) throw IoError("unsupported checkpoint version");
  CheckpointHeader h;
  h.epoch = static_cast<int>(binio::read_u32(in));
  const auto stage = binio::read_u32(in);
  if (stage != 1 && stage != 2) throw IoError("corrupt curriculum stage in checkpoint");
  h.curriculum.stage = static_cast<Stage>(stage);
  h.curriculum.best_val_recall = binio::read_f64(in);
  h.curriculum.epochs_since_improvement = static_cast<int>(binio::read_u32(in));
  h.curriculum.stopped = binio::read_u32(in) != 0;
  h.z_v2t = binio::read_f64(in);
  h.z_t2v = binio::read_f64(in);
  h.shuffle_rng = binio::read_string(in);
  h.noise_rng = binio::read_string(in);
  return h;
}

std::ifstream open_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return in;
}

}  // namespace

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in = open_checkpoint(path);
  const CheckpointHeader h = read_header(in);
  TrainState s;
  s.epoch = h.epoch;
  s.curriculum = h.curriculum;
  s.z_v2t = h.z_v2t;
  s.z_t2v = h.z_t2v;
  set_rng_state(s.shuffle_rng, h.shuffle_rng);
  set_rng_state(s.noise_rng, h.noise_rng);
  s.visual = read_params(in);
  s.text = read_params(in);
  s.visual_opt = read_optimizer(in, s.visual);
  s.text_opt = read_optimizer(in, s.text);
  s.bank = MemoryBank::read(in);
  if (s.visual.layer_dims() != state_.visual.layer_dims() || s.text.layer_dims() != state_.text.layer_dims() ||
      s.bank.size() != state_.bank.size() || s.bank.dim() != state_.bank.dim())
    throw SchemaError("checkpoint shapes do not match this dataset/config");
  state_ = std::move(s);
}

EncoderPair read_checkpoint_encoders(const std::filesystem::path& path) {
  std::ifstream in = open_checkpoint(path);
  read_header(in);
  EncoderPair pair;
  pair.visual = read_params(in);
  pair.text = read_params(in);
  return pair;
}

std::vector<MetricsRecord> run_curriculum(Trainer& trainer, const EpochObserver& observer) {
  std::vector<MetricsRecord> history;
  while (!trainer.state().curriculum.stopped && trainer.state().epoch < trainer.config().max_epochs) {
    MetricsRecord rec = trainer.train_epoch();
    trainer.report_validation(rec.val_recall_at_1);
    history.push_back(rec);
    if (observer) observer(trainer, rec);
  }
  return history;
}

CurriculumResult run_curriculum(const PairedDataset& data, const TrainingConfig& config,
                                const EpochObserver& observer) {
  Trainer trainer(data, config);
  CurriculumResult result;
  result.history = run_curriculum(trainer, observer);
  result.visual = trainer.state().visual;
  result.text = trainer.state().text;
  result.bank = trainer.state().bank;
  return result;
}

}  // namespace cpd
