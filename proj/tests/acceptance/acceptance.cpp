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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cpd/config.hpp"
#include "cpd/data.hpp"
#include "cpd/encoder.hpp"
#include "cpd/errors.hpp"
#include "cpd/evaluation.hpp"
#include "cpd/memory_bank.hpp"
#include "cpd/objectives.hpp"
#include "cpd/trainer.hpp"
#include "support/oracles.hpp"

using namespace cpd;
using cpd::testing::central_diff;
using cpd::testing::rel_err;
using cpd::testing::unit_rows;
using cpd::testing::unit_vec;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string join(const std::vector<double>& v) {
  std::string s;
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%.3f", i ? " " : "", v[i]);
    s += buf;
  }
  return s;
}

int failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s -- %s\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

constexpr int kSeeds = 5;

// The CLI's default synthetic benchmark with per-seed data, split and
// training seeds, plus extra key=value overrides.
RunConfig benchmark_config(std::uint64_t seed, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  cfg.set("seed", std::to_string(seed));
  cfg.set("data_seed", std::to_string(seed));
  cfg.set("split_seed", std::to_string(seed));
  for (const auto& o : overrides) cfg.apply_override(o);
  return cfg;
}

PairedDataset benchmark_data(const RunConfig& cfg) {
  return split(generate(synthetic_spec_from(cfg)), split_fractions_from(cfg), cfg.get_u64("split_seed"));
}

struct RunOutcome {
  double recall1 = 0.0;
  double seconds = 0.0;
  double chance = 0.0;
  CurriculumResult result;
  PairedDataset data;
};

RunOutcome run_benchmark(std::uint64_t seed, const std::vector<std::string>& overrides) {
  const RunConfig cfg = benchmark_config(seed, overrides);
  RunOutcome out;
  out.data = benchmark_data(cfg);
  const auto t0 = Clock::now();
  out.result = run_curriculum(out.data, training_config_from(cfg));
  out.seconds = seconds_since(t0);
  out.recall1 = out.result.history.back().val_recall_at_1;
  out.chance = 1.0 / static_cast<double>(out.data.splits.val.size());
  return out;
}

// ---------------------------------------------------------------------------

void criterion_gradients() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0, 1);
  double worst_cpd = 0, worst_mmid = 0, worst_rank = 0, worst_nce = 0;
  int n_cpd = 0, n_mmid = 0, n_rank = 0, n_nce = 0;

  while (n_cpd < 100) {
    const int n = 2 + static_cast<int>(rng() % 7), d = 1 + static_cast<int>(rng() % 16);
    const double tau = 0.1 + 0.9 * u(rng);
    const RowMat bv = unit_rows(n, d, rng), bt = unit_rows(n, d, rng);
    const Vec fv = unit_vec(d, rng), ft = unit_vec(d, rng);
    const int i = static_cast<int>(rng() % static_cast<unsigned>(n));
    const auto r = cpd_loss_exact(fv, ft, i, bv, bt, Temperature(tau));
    const auto m = mmid_loss_exact(fv, ft, i, bv, bt, Temperature(tau));
    worst_cpd = std::max({worst_cpd,
                          rel_err(r.grad_v, central_diff([&](const Vec& x) { return cpd_loss_exact(x, ft, i, bv, bt, Temperature(tau)).loss; }, fv)),
                          rel_err(r.grad_t, central_diff([&](const Vec& x) { return cpd_loss_exact(fv, x, i, bv, bt, Temperature(tau)).loss; }, ft))});
    worst_mmid = std::max({worst_mmid,
                           rel_err(m.grad_v, central_diff([&](const Vec& x) { return mmid_loss_exact(x, ft, i, bv, bt, Temperature(tau)).loss; }, fv)),
                           rel_err(m.grad_t, central_diff([&](const Vec& x) { return mmid_loss_exact(fv, x, i, bv, bt, Temperature(tau)).loss; }, ft))});
    ++n_cpd;
    ++n_mmid;
  }

  auto flat = [](const RowMat& m) {
    Vec v(m.size());
    for (Eigen::Index r = 0; r < m.rows(); ++r) v.segment(r * m.cols(), m.cols()) = m.row(r).transpose();
    return v;
  };
  auto unflat = [](const Vec& v, Eigen::Index rows, Eigen::Index cols) {
    RowMat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) m.row(r) = v.segment(r * cols, cols).transpose();
    return m;
  };
  while (n_rank < 100) {
    const int n = 2 + static_cast<int>(rng() % 7), d = 2 + static_cast<int>(rng() % 15);
    const double delta = 0.1 + 0.5 * u(rng);
    const RowMat v = unit_rows(n, d, rng), t = unit_rows(n, d, rng);
    // skip configurations within 1e-3 of a hinge kink
    double margin = INFINITY;
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        if (a != b) {
          margin = std::min(margin, std::abs(delta + t.row(b).dot(v.row(a)) - t.row(a).dot(v.row(a))));
          margin = std::min(margin, std::abs(delta + v.row(b).dot(t.row(a)) - v.row(a).dot(t.row(a))));
        }
    if (margin < 1e-3) continue;
    const auto r = ranking_loss(v, t, delta);
    if (r.active_terms == 0) continue;
    worst_rank = std::max({worst_rank,
                           rel_err(flat(r.grad_v), central_diff([&](const Vec& x) { return ranking_loss(unflat(x, n, d), t, delta).loss; }, flat(v))),
                           rel_err(flat(r.grad_t), central_diff([&](const Vec& x) { return ranking_loss(v, unflat(x, n, d), delta).loss; }, flat(t)))});
    ++n_rank;
  }

  while (n_nce < 100) {
    const int d = 1 + static_cast<int>(rng() % 16), n = 2 + static_cast<int>(rng() % 7);
    const int m = 1 + static_cast<int>(rng() % static_cast<unsigned>(n));
    const double tau = 0.2 + 0.8 * u(rng);
    NceConfig cfg;
    cfg.m = m;
    cfg.n = n;
    cfg.z_estimate = n * std::exp(4.0 * u(rng) - 2.0);
    const Vec q = unit_vec(d, rng), pos = unit_vec(d, rng);
    const RowMat noise = unit_rows(m, d, rng);
    const auto r = nce_loss(q, pos, noise, cfg, Temperature(tau));
    worst_nce = std::max(worst_nce, rel_err(r.grad, central_diff([&](const Vec& x) { return nce_loss(x, pos, noise, cfg, Temperature(tau)).loss; }, q)));
    ++n_nce;
  }
  const double secs = seconds_since(t0);
  const double worst = std::max({worst_cpd, worst_mmid, worst_rank, worst_nce});
  report(1, "gradient fidelity", worst <= 1e-4 && secs < 60.0,
         fmt("max rel err cpd %.2e mmid %.2e ranking %.2e nce %.2e", worst_cpd, worst_mmid, worst_rank, worst_nce) +
             fmt(" (100 configs each, %.1fs)", secs));
}

void criterion_grad_identity() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u(0, 1);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 2 + static_cast<int>(rng() % 63);
    const int n = 2 + static_cast<int>(rng() % 5000);
    NceConfig cfg;
    cfg.n = n;
    cfg.m = 1 + static_cast<int>(rng() % static_cast<unsigned>(std::min(n, 64)));
    cfg.z_estimate = n * std::exp(6.0 * u(rng) - 3.0);
    const double tau = trial % 3 == 0 ? 0.07 : 0.05 + u(rng);
    const Vec q = unit_vec(d, rng), pos = unit_vec(d, rng);
    const RowMat noise = unit_rows(cfg.m, d, rng);
    const Vec formula = cpd_grad_formula(q, pos, noise, cfg, Temperature(tau));
    const Vec grad = nce_loss(q, pos, noise, cfg, Temperature(tau)).grad;
    worst = std::max(worst, (formula + grad).cwiseAbs().maxCoeff());
  }
  report(2, "closed-form NCE gradient identity", worst <= 1e-6, fmt("max abs diff %.2e over 100 instances", worst));
}

void criterion_softmax_oracle() {
  double worst = 0.0;
  int checks = 0;
  int max_n = 0;
  for (const auto [classes, per_class] : {std::pair{4, 4}, std::pair{10, 4}, std::pair{10, 8}, std::pair{8, 16}}) {
    SyntheticSpec spec;
    spec.classes = classes;
    spec.per_class = per_class;
    spec.dv = spec.dt = 12;
    spec.seed = static_cast<std::uint64_t>(per_class);
    const auto data = split(generate(spec), {0.5, 0.25, 0.25}, 1);
    TrainingConfig c;
    c.objective = Objective::cpd_exact;
    c.batch_size = 8;
    c.hidden_dim = 24;
    c.embed_dim = 12;
    c.warmup_epochs = 3;
    Trainer t(data, c);
    max_n = std::max(max_n, t.train_size());
    std::mt19937_64 rng(static_cast<std::uint64_t>(per_class));
    for (int epoch = 0; epoch < 3; ++epoch) {
      std::vector<int> all(static_cast<std::size_t>(t.train_size()));
      std::iota(all.begin(), all.end(), 0);
      std::vector<std::vector<int>> batches{all};
      for (int b = 0; b < 5; ++b) {
        std::shuffle(all.begin(), all.end(), rng);
        batches.emplace_back(all.begin(), all.begin() + std::min<std::ptrdiff_t>(8, static_cast<std::ptrdiff_t>(all.size())));
      }
      for (const auto& batch : batches) {
        const auto& bank = t.state().bank;
        double expected = 0.0;
        for (int p : batch) {
          const Vec fv = embed(t.state().visual, t.train_visual().row(p).transpose());
          const Vec ft = embed(t.state().text, t.train_text().row(p).transpose());
          expected += cpd::testing::cpd_loss_reference(fv, ft, p, bank.store(Modality::visual), bank.store(Modality::text), c.tau);
        }
        expected /= static_cast<double>(batch.size());
        worst = std::max(worst, std::abs(t.batch_loss(batch) - expected));
        ++checks;
      }
      t.train_epoch();
    }
  }
  report(3, "trainer exact softmax equals brute force", worst <= 1e-9,
         fmt("max abs diff %.2e over %g batches, N up to %g", worst, checks, max_n));
}

struct BenchmarkRuns {
  std::vector<double> nce, exact, ranking, mmid;
  double max_seconds = 0.0, ablation_seconds = 0.0, chance = 0.0;
};

BenchmarkRuns run_objective_benchmark() {
  BenchmarkRuns b;
  for (int s = 0; s < kSeeds; ++s) {
    for (const char* obj : {"cpd_nce", "cpd_exact", "ranking", "mmid"}) {
      const auto r = run_benchmark(static_cast<std::uint64_t>(s), {std::string("objective=") + obj, "m=32"});
      b.max_seconds = std::max(b.max_seconds, r.seconds);
      b.ablation_seconds += r.seconds;
      b.chance = r.chance;
      const std::string o = obj;
      (o == "cpd_nce" ? b.nce : o == "cpd_exact" ? b.exact : o == "ranking" ? b.ranking : b.mmid).push_back(r.recall1);
    }
  }
  return b;
}

void criterion_nce_vs_exact(const BenchmarkRuns& b) {
  const double mn = median(b.nce), me = median(b.exact);
  report(4, "NCE tracks the exact softmax", mn >= 0.70 && me >= 0.70 && std::abs(mn - me) <= 0.10 && b.max_seconds < 120.0,
         fmt("median val R@1 nce %.3f exact %.3f gap %.3f, slowest run %.1fs", mn, me, std::abs(mn - me), b.max_seconds) +
             " [nce " + join(b.nce) + "] [exact " + join(b.exact) + "]");
}

void criterion_objective_ordering(const BenchmarkRuns& b) {
  const double mc = median(b.nce), mr = median(b.ranking), mm = median(b.mmid);
  report(5, "objective ordering", mc - mr >= 0.03 && mc - mm >= 0.20 && std::abs(mm - b.chance) <= 0.05,
         fmt("median val R@1 cpd %.3f ranking %.3f mmid %.3f chance %.3f", mc, mr, mm, b.chance) + " [ranking " +
             join(b.ranking) + "] [mmid " + join(b.mmid) + "]" + fmt(" ablation 4x5 runs %.1fs", b.ablation_seconds));
}

void criterion_curriculum() {
  std::vector<double> staged, direct;
  for (int s = 0; s < kSeeds; ++s) {
    staged.push_back(run_benchmark(static_cast<std::uint64_t>(s), {"rho=0.3", "curriculum=two_stage"}).recall1);
    direct.push_back(run_benchmark(static_cast<std::uint64_t>(s), {"rho=0.3", "curriculum=direct"}).recall1);
  }
  const double ms = median(staged), md = median(direct);
  report(6, "two-stage curriculum vs direct joint training", ms >= md,
         fmt("median val R@1 two-stage %.3f direct %.3f", ms, md) + " [two-stage " + join(staged) + "] [direct " +
             join(direct) + "]");
}

void criterion_eval_suite() {
  std::vector<double> knn, probe, zero;
  for (int s = 0; s < kSeeds; ++s) {
    const auto r = run_benchmark(static_cast<std::uint64_t>(s), {"sigma=0.05", "rho=0"});
    const auto& ds = r.data;
    const auto& enc = r.result;
    const LabeledFeatureSet train{embed_rows(enc.visual, ds.visual_rows(ds.splits.train)), ds.labels(ds.splits.train), LayerTag::embedding};
    const LabeledFeatureSet test{embed_rows(enc.visual, ds.visual_rows(ds.splits.test)), ds.labels(ds.splits.test), LayerTag::embedding};
    knn.push_back(accuracy(knn_classify(train, test.features, kDefaultKnnK), test.labels));
    probe.push_back(linear_probe(train, test, ProbeConfig{}).test_accuracy);
    zero.push_back(accuracy(zero_shot_classify(ds.text_prototypes, ds.visual_rows(ds.splits.test), enc.text, enc.visual), test.labels));
  }
  const double mk = median(knn), mp = median(probe), mz = median(zero);
  report(7, "frozen-feature evaluation on clean data", mk >= 0.95 && mp >= 0.95 && mz >= 0.90,
         fmt("median test acc kNN(k=25) %.3f probe %.3f zero-shot %.3f", mk, mp, mz) + " [kNN " + join(knn) + "] [probe " +
             join(probe) + "] [zero-shot " + join(zero) + "]");
}

void criterion_invariants() {
  std::vector<std::string> broken;
  std::mt19937_64 rng(808);
  std::uniform_real_distribution<double> u(0, 1);

  for (int trial = 0; trial < 500; ++trial) {
    const std::array<int, 3> dims{1 + static_cast<int>(rng() % 16), 1 + static_cast<int>(rng() % 16), 1 + static_cast<int>(rng() % 16)};
    const auto p = init_params(dims, rng());
    const Vec x = 2.0 * cpd::testing::gaussian_vec(dims[0], rng);
    try {
      if (std::abs(embed(p, x).norm() - 1.0) > 1e-6) broken.push_back("unit-norm embedding");
    } catch (const DegenerateVectorError&) {
    }
  }

  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 64), d = 1 + static_cast<int>(rng() % 16);
    const Vec pr = softmax_over_bank(unit_vec(d, rng), unit_rows(n, d, rng), Temperature(trial % 2 ? 0.07 : 1.0));
    if (std::abs(pr.sum() - 1.0) > 1e-9) broken.push_back("softmax normalization");
  }

  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 1000);
    const int m = 1 + static_cast<int>(rng() % static_cast<unsigned>(n));
    const double p = std::exp(40.0 * u(rng) - 20.0);
    const double h1 = nce_posterior(p, m, n), h2 = nce_posterior(p * 1.01, m, n);
    if (!(h1 > 0.0 && h1 < 1.0 && h2 > h1)) broken.push_back("posterior bounds/monotonicity");
  }

  auto bank = MemoryBank::random(16, 8, 0.5, 7);
  for (int step = 0; step < 5000; ++step) {
    const Modality mod = step % 2 ? Modality::text : Modality::visual;
    bank.update(mod, static_cast<int>(rng() % 16), unit_vec(8, rng), u(rng));
  }
  for (Modality mod : {Modality::visual, Modality::text})
    for (int i = 0; i < 16; ++i)
      if (std::abs(bank.store(mod).row(i).norm() - 1.0) > 1e-6) broken.push_back("bank row norm");

  double worst_freq = 0.0;
  for (int n : {2, 4, 8, 16}) {
    std::mt19937_64 srng(static_cast<std::uint64_t>(n));
    const auto draw = sample_noise(n, 100000, 0, false, srng);
    std::vector<int> counts(static_cast<std::size_t>(n), 0);
    for (int i : draw.indices) ++counts[static_cast<std::size_t>(i)];
    for (int c : counts) worst_freq = std::max(worst_freq, std::abs(c / 100000.0 - 1.0 / n));
  }
  if (worst_freq > 0.02) broken.push_back("sampler frequencies");

  for (int trial = 0; trial < 20; ++trial) {
    const int m = 5 + static_cast<int>(rng() % 40);
    const RowMat fv = unit_rows(m, 6, rng);
    RowMat ft = fv + unit_rows(m, 6, rng);
    ft.rowwise().normalize();
    std::vector<int> ks(static_cast<std::size_t>(m));
    std::iota(ks.begin(), ks.end(), 1);
    const auto r = retrieval_recall(fv, ft, ks);
    for (std::size_t i = 1; i < ks.size(); ++i)
      if (r.video_to_text[i] < r.video_to_text[i - 1] || r.text_to_video[i] < r.text_to_video[i - 1]) broken.push_back("recall monotone");
    if (r.video_to_text.back() != 1.0 || r.text_to_video.back() != 1.0) broken.push_back("recall@M");
  }

  const auto a = run_benchmark(4, {"max_epochs=8"});
  const auto b = run_benchmark(4, {"max_epochs=8"});
  bool same = a.result.history.size() == b.result.history.size() && param_hash(a.result.visual) == param_hash(b.result.visual) &&
              param_hash(a.result.text) == param_hash(b.result.text) &&
              a.result.bank.store(Modality::visual) == b.result.bank.store(Modality::visual) &&
              a.result.bank.store(Modality::text) == b.result.bank.store(Modality::text);
  for (std::size_t i = 0; same && i < a.result.history.size(); ++i) same = a.result.history[i].same_values(b.result.history[i]);
  if (!same) broken.push_back("run determinism");

  std::sort(broken.begin(), broken.end());
  broken.erase(std::unique(broken.begin(), broken.end()), broken.end());
  std::string detail = broken.empty() ? "unit norms, softmax sums, posterior, bank norms, sampler, recall@k, determinism all hold"
                                      : "violated:";
  for (const auto& s : broken) detail += " " + s;
  detail += fmt(" (worst sampler deviation %.4f)", worst_freq);
  report(8, "invariant suites", broken.empty(), detail);
}

void criterion_chance_floor() {
  std::vector<double> rho1, shuffled;
  double chance = 0.0, classes = 0.0;
  for (int s = 0; s < kSeeds; ++s) {
    const auto r = run_benchmark(static_cast<std::uint64_t>(s), {"rho=1"});
    rho1.push_back(r.recall1);
    chance = r.chance;

    const auto clean = run_benchmark(static_cast<std::uint64_t>(s), {});
    const auto& ds = clean.data;
    classes = ds.num_classes();
    std::vector<int> heldout = ds.splits.val;
    heldout.insert(heldout.end(), ds.splits.test.begin(), ds.splits.test.end());
    LabeledFeatureSet train{embed_rows(clean.result.visual, ds.visual_rows(ds.splits.train)), ds.labels(ds.splits.train), LayerTag::embedding};
    std::mt19937_64 rng(static_cast<std::uint64_t>(s) + 1000);
    std::shuffle(train.labels.begin(), train.labels.end(), rng);
    const LabeledFeatureSet test{embed_rows(clean.result.visual, ds.visual_rows(heldout)), ds.labels(heldout), LayerTag::embedding};
    shuffled.push_back(linear_probe(train, test, ProbeConfig{}).test_accuracy);
  }
  const double mr = median(rho1), ms = median(shuffled);
  report(9, "chance-floor controls", std::abs(mr - chance) <= 0.03 && std::abs(ms - 1.0 / classes) <= 0.03,
         fmt("rho=1 median val R@1 %.3f (chance %.3f); shuffled-label probe median %.3f (chance %.3f)", mr, chance, ms, 1.0 / classes) +
             " [rho=1 " + join(rho1) + "] [shuffled " + join(shuffled) + "]");
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  criterion_gradients();
  criterion_grad_identity();
  criterion_softmax_oracle();
  const auto bench = run_objective_benchmark();
  criterion_nce_vs_exact(bench);
  criterion_objective_ordering(bench);
  criterion_curriculum();
  criterion_eval_suite();
  criterion_invariants();
  criterion_chance_floor();
  std::printf("%d criteria failed; total %.1fs\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
