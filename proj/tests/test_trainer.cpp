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

#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "cpd/errors.hpp"
#include "cpd/trainer.hpp"
#include "support/oracles.hpp"
#include "support/tmpdir.hpp"

using namespace cpd;

namespace {

PairedDataset tiny_data(std::uint64_t seed = 0, double sigma = 0.1, double rho = 0.0) {
  SyntheticSpec spec;
  spec.classes = 4;
  spec.per_class = 12;
  spec.dv = spec.dt = 8;
  spec.sigma = sigma;
  spec.rho = rho;
  spec.seed = seed;
  return split(generate(spec), {0.5, 0.25, 0.25}, seed);
}

TrainingConfig tiny_config(Objective obj = Objective::cpd_nce) {
  TrainingConfig c;
  c.objective = obj;
  c.m = 8;
  c.batch_size = 8;
  c.hidden_dim = 16;
  c.embed_dim = 8;
  c.warmup_epochs = 5;
  c.max_epochs = 12;
  c.plateau_patience = 2;
  return c;
}

bool same_bank(const MemoryBank& a, const MemoryBank& b) {
  return a.store(Modality::visual) == b.store(Modality::visual) && a.store(Modality::text) == b.store(Modality::text);
}

}  // namespace

TEST_CASE("calibrate_z: orthogonal bank and hand sum") {
  const RowMat bank = RowMat::Identity(5, 6);
  RowMat q(1, 6);
  q << 0, 0, 0, 0, 0, 1;
  CHECK(calibrate_z(bank, q, Temperature(0.07)) == doctest::Approx(5.0));

  RowMat two(2, 2);
  two << 1, 0, 0, 1;
  RowMat q1(1, 2);
  q1 << 1, 0;
  const double tau = 0.07;
  CHECK(calibrate_z(two, q1, Temperature(tau)) == doctest::Approx(std::exp(1.0 / tau) + 1.0).epsilon(1e-12));

  std::mt19937_64 rng(1);
  const RowMat b = cpd::testing::unit_rows(20, 6, rng);
  RowMat qs = cpd::testing::unit_rows(9, 6, rng);
  const double z = calibrate_z(b, qs, Temperature(0.1));
  RowMat reversed = qs.colwise().reverse();
  CHECK(calibrate_z(b, reversed, Temperature(0.1)) == z);
  CHECK(z > 0.0);
  CHECK(std::isfinite(z));
  CHECK_THROWS_AS(calibrate_z(two, q1, Temperature(1e-4)), NumericFault);
  CHECK_THROWS(calibrate_z(two, RowMat(0, 2), Temperature(0.1)));
}

TEST_CASE("plateau_step: walking the counter") {
  CurriculumState s;
  for (double r : {0.1, 0.2, 0.3, 0.4, 0.5}) {
    s = plateau_step(s, r, 3, 0.002);
    CHECK(s.epochs_since_improvement == 0);
    CHECK(s.stage == Stage::stage1_text_frozen);
  }

  CurriculumState f;
  const double flat[] = {0.5, 0.5, 0.5, 0.5};
  for (int i = 0; i < 4; ++i) {
    f = plateau_step(f, flat[i], 3, 0.002);
    CHECK(f.stage == (i < 3 ? Stage::stage1_text_frozen : Stage::stage2_joint));
  }
  CHECK(f.epochs_since_improvement == 0);

  CurriculumState t;
  t = plateau_step(t, 0.500, 5, 0.01);
  t = plateau_step(t, 0.505, 5, 0.01);
  CHECK(t.epochs_since_improvement == 1);
  CHECK(t.best_val_recall == 0.5);
}

TEST_CASE("plateau_step: stage two plateau stops, and stages never go back") {
  CurriculumState s;
  s.stage = Stage::stage2_joint;
  s.best_val_recall = 0.4;
  for (int i = 0; i < 2; ++i) s = plateau_step(s, 0.3, 2, 0.0);
  CHECK(s.stopped);
  CHECK(s.stage == Stage::stage2_joint);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  CurriculumState w;
  int prev = 1;
  for (int i = 0; i < 500; ++i) {
    w = plateau_step(w, u(rng), 3, 0.01);
    CHECK(static_cast<int>(w.stage) >= prev);
    prev = static_cast<int>(w.stage);
  }
}

TEST_CASE("TrainingConfig validation and enum parsing") {
  auto c = tiny_config();
  c.stage1_lr = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.plateau_patience = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.tau = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_objective("cpd_exact") == Objective::cpd_exact);
  CHECK_THROWS_AS(parse_objective("bogus"), ConfigError);
  CHECK_THROWS_AS(parse_curriculum("sideways"), ConfigError);

  auto big = tiny_config();
  big.m = 1000;
  CHECK_THROWS_AS(Trainer(tiny_data(), big), ConfigError);
}

TEST_CASE("trainer: zero learning rates freeze the system") {
  auto c = tiny_config(Objective::cpd_exact);
  c.stage1_lr = c.stage2_lr_rest = c.stage2_lr_text = 0.0;
  c.bank_momentum = 1.0;
  Trainer t(tiny_data(), c);
  const auto hv = param_hash(t.state().visual), ht = param_hash(t.state().text);
  const auto a = t.train_epoch();
  const auto b = t.train_epoch();
  CHECK(param_hash(t.state().visual) == hv);
  CHECK(param_hash(t.state().text) == ht);
  CHECK(a.train_loss == doctest::Approx(b.train_loss).epsilon(1e-12));
  CHECK(a.val_recall_at_1 == b.val_recall_at_1);

  auto n = tiny_config();
  n.stage1_lr = 0.0;
  Trainer tn(tiny_data(), n);
  const auto hv2 = param_hash(tn.state().visual);
  tn.train_epoch();
  CHECK(param_hash(tn.state().visual) == hv2);
}

TEST_CASE("trainer: fixed seed gives bitwise-identical runs") {
  for (Objective obj : {Objective::cpd_nce, Objective::cpd_exact, Objective::mmid, Objective::ranking}) {
    const auto data = tiny_data(2);
    const auto a = run_curriculum(data, tiny_config(obj));
    const auto b = run_curriculum(data, tiny_config(obj));
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].same_values(b.history[i]));
    CHECK(param_hash(a.visual) == param_hash(b.visual));
    CHECK(param_hash(a.text) == param_hash(b.text));
    CHECK(same_bank(a.bank, b.bank));
  }
  auto other = tiny_config();
  other.seed = 1;
  CHECK(param_hash(run_curriculum(tiny_data(2), other).visual) != param_hash(run_curriculum(tiny_data(2), tiny_config()).visual));
}

TEST_CASE("trainer: stage one leaves the text encoder untouched") {
  auto c = tiny_config();
  c.plateau_patience = 100;
  Trainer t(tiny_data(), c);
  CHECK_FALSE(t.text_trainable());
  CHECK(t.text_lr() == 0.0);
  CHECK(t.visual_lr() == c.stage1_lr);
  const auto h = param_hash(t.state().text);
  for (int e = 0; e < 5; ++e) {
    const auto rec = t.train_epoch();
    t.report_validation(rec.val_recall_at_1);
    CHECK(rec.stage == Stage::stage1_text_frozen);
    CHECK(param_hash(t.state().text) == h);
  }
}

TEST_CASE("trainer: stage two switches learning rates and recalibrates") {
  auto c = tiny_config();
  Trainer t(tiny_data(), c);
  const double z0 = t.state().z_v2t;
  CHECK(z0 > 0.0);
  while (t.state().curriculum.stage == Stage::stage1_text_frozen) {
    const auto rec = t.train_epoch();
    t.report_validation(rec.val_recall_at_1);
    REQUIRE(t.state().epoch < 100);
  }
  CHECK(t.text_trainable());
  CHECK(t.visual_lr() == c.stage2_lr_rest);
  CHECK(t.text_lr() == c.stage2_lr_text);
  CHECK(t.state().z_v2t != z0);
  const auto h = param_hash(t.state().text);
  t.train_epoch();
  CHECK(param_hash(t.state().text) != h);
}

TEST_CASE("trainer: direct mode trains both encoders from the start") {
  auto c = tiny_config();
  c.curriculum = CurriculumMode::direct;
  Trainer t(tiny_data(), c);
  CHECK(t.state().curriculum.stage == Stage::stage2_joint);
  CHECK(t.text_lr() == c.stage1_lr);
  CHECK(t.visual_lr() == c.stage1_lr);
  const auto h = param_hash(t.state().text);
  t.train_epoch();
  CHECK(param_hash(t.state().text) != h);
}

TEST_CASE("property: metrics history has at most one stage transition") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    auto c = tiny_config();
    c.seed = seed;
    c.max_epochs = 30;
    const auto r = run_curriculum(tiny_data(seed), c);
    int transitions = 0;
    for (std::size_t i = 1; i < r.history.size(); ++i) {
      CHECK(static_cast<int>(r.history[i].stage) >= static_cast<int>(r.history[i - 1].stage));
      if (r.history[i].stage != r.history[i - 1].stage) ++transitions;
    }
    CHECK(transitions <= 1);
    for (const auto& rec : r.history) {
      CHECK(rec.val_recall_at_1 >= 0.0);
      CHECK(rec.val_recall_at_1 <= 1.0);
      CHECK(rec.val_recall_at_5 >= rec.val_recall_at_1);
    }
  }
}

TEST_CASE("trainer: exact-CPD batch loss equals direct summation") {
  auto c = tiny_config(Objective::cpd_exact);
  Trainer t(tiny_data(), c);
  t.train_epoch();
  t.train_epoch();
  std::vector<int> positions(static_cast<std::size_t>(t.train_size()));
  std::iota(positions.begin(), positions.end(), 0);
  const auto& bank = t.state().bank;
  double expected = 0.0;
  for (int p : positions) {
    const Vec fv = embed(t.state().visual, t.train_visual().row(p).transpose());
    const Vec ft = embed(t.state().text, t.train_text().row(p).transpose());
    expected += cpd::testing::cpd_loss_reference(fv, ft, p, bank.store(Modality::visual), bank.store(Modality::text), c.tau);
  }
  expected /= static_cast<double>(positions.size());
  CHECK(std::abs(t.batch_loss(positions) - expected) <= 1e-9);
}

TEST_CASE("trainer: checkpoint resume continues bitwise") {
  cpd::testing::TempDir dir;
  const auto data = tiny_data(3);
  Trainer a(data, tiny_config());
  a.train_epoch();
  a.save_checkpoint(dir / "ck.bin");
  const auto next_a = a.train_epoch();

  Trainer b(data, tiny_config());
  b.load_checkpoint(dir / "ck.bin");
  CHECK(b.state().epoch == 1);
  const auto next_b = b.train_epoch();
  CHECK(next_a.same_values(next_b));
  CHECK(param_hash(a.state().visual) == param_hash(b.state().visual));
  CHECK(same_bank(a.state().bank, b.state().bank));

  const auto enc = read_checkpoint_encoders(dir / "ck.bin");
  CHECK(enc.visual.embed_dim() == 8);

  auto wider = tiny_config();
  wider.hidden_dim = 20;
  Trainer c(data, wider);
  CHECK_THROWS_AS(c.load_checkpoint(dir / "ck.bin"), SchemaError);
  CHECK_THROWS_AS(c.load_checkpoint(dir / "missing.bin"), IoError);
}

TEST_CASE("trainer: a non-finite epoch is rolled back") {
  auto c = tiny_config(Objective::cpd_exact);
  c.stage1_lr = 1e300;
  c.sgd_momentum = 0.0;
  Trainer t(tiny_data(), c);
  bool faulted = false;
  for (int e = 0; e < 3 && !faulted; ++e) {
    const auto pre = param_hash(t.state().visual);
    const auto pre_epoch = t.state().epoch;
    try {
      t.train_epoch();
    } catch (const NumericFault&) {
      faulted = true;
      CHECK(param_hash(t.state().visual) == pre);
      CHECK(t.state().epoch == pre_epoch);
    }
  }
  CHECK(faulted);
}

TEST_CASE("property: early training loss is non-increasing on clean data") {
  int good = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SyntheticSpec spec;
    spec.sigma = 0.05;
    spec.rho = 0.0;
    spec.seed = seed;
    const auto data = split(generate(spec), {0.5, 1.0 / 3.0, 1.0 / 6.0}, seed);
    TrainingConfig c;
    c.m = 32;
    c.seed = seed;
    Trainer t(data, c);
    std::vector<double> losses;
    for (int e = 0; e < 5; ++e) losses.push_back(t.train_epoch().train_loss);
    bool monotone = true;
    for (std::size_t i = 1; i < losses.size(); ++i) monotone = monotone && losses[i] <= losses[i - 1];
    good += monotone ? 1 : 0;
  }
  CHECK(good >= 4);
}
