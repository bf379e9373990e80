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

#include "cpd/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include "cpd/config.hpp"
#include "cpd/data.hpp"
#include "cpd/errors.hpp"
#include "cpd/evaluation.hpp"
#include "cpd/plot.hpp"
#include "cpd/trainer.hpp"

namespace cpd::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string data;
  std::string checkpoint;
  std::vector<std::string> csvs;
};

RunConfig build_config(const CommonOptions& opts) {
  RunConfig cfg;
  if (!opts.config_path.empty()) cfg.load_file(opts.config_path);
  if (!opts.data.empty()) cfg.set("data", opts.data);
  if (!opts.checkpoint.empty()) cfg.set("checkpoint", opts.checkpoint);
  for (const auto& o : opts.overrides) cfg.apply_override(o);
  return cfg;
}

fs::path resolve_out_dir(const CommonOptions& opts) {
  if (!opts.out_dir.empty()) return opts.out_dir;
  if (const char* env = std::getenv("CPD_OUT_DIR"); env != nullptr && *env != '\0') return env;
  throw ConfigError("no output directory: pass --out or set CPD_OUT_DIR");
}

void check_splits(const PairedDataset& ds) {
  std::set<int> seen;
  for (const auto* part : {&ds.splits.train, &ds.splits.val, &ds.splits.test}) {
    for (int i : *part) {
      if (i < 0 || i >= ds.size()) throw SchemaError("split index " + std::to_string(i) + " outside the dataset");
      if (!seen.insert(i).second) throw SchemaError("split index " + std::to_string(i) + " appears twice");
    }
  }
}

PairedDataset resolve_dataset(const RunConfig& cfg) {
  PairedDataset ds;
  if (cfg.get("data").empty()) {
    ds = generate(synthetic_spec_from(cfg));
  } else {
    ds = load_dataset(cfg.get("data"));
  }
  if (!cfg.get("splits").empty()) {
    ds.splits = read_splits(cfg.get("splits"));
    check_splits(ds);
  } else {
    ds.splits = make_splits(ds, split_fractions_from(cfg), cfg.get_u64("split_seed"));
  }
  return ds;
}

fs::path checkpoint_path(const RunConfig& cfg, const fs::path& out_dir) {
  return cfg.get("checkpoint").empty() ? out_dir / "checkpoint.bin" : fs::path(cfg.get("checkpoint"));
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

int cmd_gen_data(const RunConfig& cfg, const fs::path& out_dir) {
  const SyntheticSpec spec = synthetic_spec_from(cfg);
  const auto fractions = split_fractions_from(cfg);
  const PairedDataset ds = split(generate(spec), fractions, cfg.get_u64("split_seed"));
  fs::create_directories(out_dir);
  cfg.write_resolved(out_dir / "resolved_config.txt");
  write_dataset(out_dir / "pairs.txt", ds);
  write_splits(out_dir / "pairs.splits", ds.splits);
  write_prototypes(out_dir / "prototypes.txt", ds.text_prototypes);
  std::cout << "wrote " << ds.size() << " pairs (" << spec.classes << " classes) to " << (out_dir / "pairs.txt").string()
            << '\n';
  return kOk;
}

int cmd_train(const RunConfig& cfg, const fs::path& out_dir) {
  const TrainingConfig tc = training_config_from(cfg);
  const long checkpoint_every = cfg.get_int("checkpoint_every");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  const PairedDataset ds = resolve_dataset(cfg);
  Trainer trainer(ds, tc);

  fs::create_directories(out_dir);
  cfg.write_resolved(out_dir / "resolved_config.txt");
  write_splits(out_dir / "splits.txt", ds.splits);
  const fs::path ckpt = checkpoint_path(cfg, out_dir);
  std::ofstream csv(out_dir / "metrics.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write metrics.csv");
  csv << kMetricsHeader << '\n' << std::flush;

  const auto history = run_curriculum(trainer, [&](const Trainer& t, const MetricsRecord& rec) {
    csv << metrics_csv_row(rec) << '\n' << std::flush;
    std::cerr << "epoch " << rec.epoch << " stage " << static_cast<int>(rec.stage) << " loss " << rec.train_loss
              << " r@1 " << rec.val_recall_at_1 << " r@5 " << rec.val_recall_at_5 << '\n';
    if (rec.epoch % checkpoint_every == 0) t.save_checkpoint(ckpt);
  });
  trainer.save_checkpoint(ckpt);
  const auto& last = history.back();
  std::cout << "trained " << history.size() << " epochs, final val recall@1 " << last.val_recall_at_1 << '\n';
  return kOk;
}

json probe_config_json(const ProbeConfig& p) {
  return {{"lr", p.lr},           {"epochs", p.epochs},         {"decay_every", p.decay_every},
          {"decay", p.decay},     {"batch_size", p.batch_size}, {"standardize", p.standardize},
          {"beta1", p.beta1},     {"beta2", p.beta2}};
}

int cmd_eval(const RunConfig& cfg, const fs::path& out_dir) {
  const ProbeConfig probe = probe_config_from(cfg);
  const int k = static_cast<int>(cfg.get_int("knn_k"));
  const fs::path ckpt = checkpoint_path(cfg, out_dir);
  if (!fs::exists(ckpt)) throw IoError("checkpoint not found: " + ckpt.string());
  const PairedDataset ds = resolve_dataset(cfg);
  if (!ds.labeled) throw ConfigError("evaluation needs a labeled dataset");
  const EncoderPair enc = read_checkpoint_encoders(ckpt);

  const RowMat train_raw = ds.visual_rows(ds.splits.train);
  const RowMat test_raw = ds.visual_rows(ds.splits.test);
  const auto train_labels = ds.labels(ds.splits.train);
  const auto test_labels = ds.labels(ds.splits.test);

  json results = json::array();
  std::ofstream csv;
  for (LayerTag tag : {LayerTag::embedding, LayerTag::penultimate}) {
    const bool emb = tag == LayerTag::embedding;
    LabeledFeatureSet train{emb ? embed_rows(enc.visual, train_raw) : penultimate_rows(enc.visual, train_raw),
                            train_labels, tag};
    LabeledFeatureSet test{emb ? embed_rows(enc.visual, test_raw) : penultimate_rows(enc.visual, test_raw),
                           test_labels, tag};
    const double knn_acc = accuracy(knn_classify(train, test.features, k), test.labels);
    results.push_back({{"protocol", "knn"}, {"layer_tag", to_string(tag)}, {"k", k}, {"metric", "cosine"},
                       {"accuracy", knn_acc}, {"seed", probe.seed}});
    const ProbeResult pr = linear_probe(train, test, probe);
    results.push_back({{"protocol", "linear_probe"}, {"layer_tag", to_string(tag)}, {"config", probe_config_json(probe)},
                       {"accuracy", pr.test_accuracy}, {"train_accuracy", pr.train_accuracy},
                       {"clamped_dims", pr.clamped_dims}, {"seed", probe.seed}});
  }

  const RowMat fv = embed_rows(enc.visual, test_raw);
  const RowMat ft = embed_rows(enc.text, ds.text_rows(ds.splits.test));
  std::vector<int> ks;
  for (int kk : {1, 5, 10})
    if (kk <= fv.rows()) ks.push_back(kk);
  const RetrievalRecall rr = retrieval_recall(fv, ft, ks);
  results.push_back({{"protocol", "retrieval"}, {"layer_tag", "embedding"}, {"k", ks},
                     {"video_to_text", rr.video_to_text}, {"text_to_video", rr.text_to_video}, {"seed", probe.seed}});

  fs::create_directories(out_dir);
  cfg.write_resolved(out_dir / "resolved_config.txt");
  write_json(out_dir / "eval.json", results);
  std::ofstream out(out_dir / "eval.csv", std::ios::trunc);
  out << "protocol,layer_tag,param,metric,value,seed\n";
  for (const auto& r : results) {
    const std::string proto = r["protocol"];
    const std::string tag = r["layer_tag"];
    if (proto == "knn") {
      out << proto << ',' << tag << ",k=" << k << ",accuracy," << r["accuracy"].dump() << ',' << probe.seed << '\n';
    } else if (proto == "linear_probe") {
      out << proto << ',' << tag << ",lr=" << probe.lr << ",accuracy," << r["accuracy"].dump() << ',' << probe.seed << '\n';
    } else {
      for (std::size_t i = 0; i < ks.size(); ++i) {
        out << proto << ',' << tag << ",k=" << ks[i] << ",video_to_text," << json(rr.video_to_text[i]).dump() << ','
            << probe.seed << '\n';
        out << proto << ',' << tag << ",k=" << ks[i] << ",text_to_video," << json(rr.text_to_video[i]).dump() << ','
            << probe.seed << '\n';
      }
    }
  }
  std::cout << results.dump(2) << '\n';
  return kOk;
}

RowMat class_prototypes(const RunConfig& cfg, const PairedDataset& ds) {
  if (!cfg.get("prototypes").empty()) return read_prototypes(cfg.get("prototypes"));
  if (ds.text_prototypes.rows() > 0) return ds.text_prototypes;
  // Fall back to per-class means of the training captions.
  const int classes = ds.num_classes();
  RowMat protos = RowMat::Zero(classes, ds.dt);
  std::vector<int> counts(static_cast<std::size_t>(classes), 0);
  for (int i : ds.splits.train) {
    const auto& inst = ds.instances[static_cast<std::size_t>(i)];
    protos.row(inst.label) += inst.text.transpose();
    ++counts[static_cast<std::size_t>(inst.label)];
  }
  for (int c = 0; c < classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) throw ConfigError("class " + std::to_string(c) + " has no training captions");
    protos.row(c) /= counts[static_cast<std::size_t>(c)];
  }
  return protos;
}

int cmd_zeroshot(const RunConfig& cfg, const fs::path& out_dir) {
  const fs::path ckpt = checkpoint_path(cfg, out_dir);
  if (!fs::exists(ckpt)) throw IoError("checkpoint not found: " + ckpt.string());
  const PairedDataset ds = resolve_dataset(cfg);
  if (!ds.labeled) throw ConfigError("zero-shot evaluation needs a labeled dataset");
  const EncoderPair enc = read_checkpoint_encoders(ckpt);
  const RowMat protos = class_prototypes(cfg, ds);
  if (protos.cols() != ds.dt) throw SchemaError("prototype width differs from the text feature dim");

  const auto preds = zero_shot_classify(protos, ds.visual_rows(ds.splits.test), enc.text, enc.visual);
  const double acc = accuracy(preds, ds.labels(ds.splits.test));
  const json result = {{"protocol", "zero_shot"}, {"layer_tag", "embedding"}, {"classes", protos.rows()},
                       {"accuracy", acc}, {"seed", cfg.get_u64("seed")}};
  fs::create_directories(out_dir);
  cfg.write_resolved(out_dir / "resolved_config.txt");
  write_json(out_dir / "zeroshot.json", result);
  std::cout << result.dump(2) << '\n';
  return kOk;
}

int cmd_plot(const CommonOptions& opts, const fs::path& out_dir) {
  std::vector<fs::path> csvs(opts.csvs.begin(), opts.csvs.end());
  if (csvs.empty()) csvs.push_back(out_dir / "metrics.csv");
  const auto written = plot_metrics(csvs, out_dir);
  if (written.empty()) {
    std::cerr << "warning: no metrics rows to plot\n";
    return kOk;
  }
  for (const auto& p : written) std::cout << "wrote " << p.string() << '\n';
  return kOk;
}

void write_error_log(const std::optional<fs::path>& out_dir, const std::string& message) {
  if (!out_dir) return;
  std::error_code ec;
  fs::create_directories(*out_dir, ec);
  std::ofstream log(*out_dir / "error.log", std::ios::trunc);
  if (log) log << message << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Cross-modal pair discrimination: data generation, training and frozen-feature evaluation"};
  app.require_subcommand(1);
  CommonOptions opts;

  auto add_common = [&opts](CLI::App* sub) {
    sub->add_option("-c,--config", opts.config_path, "key = value config file");
    sub->add_option("--set", opts.overrides, "override one config key (key=value), repeatable");
    sub->add_option("-o,--out", opts.out_dir, "output directory (default: $CPD_OUT_DIR)");
  };
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic paired dataset");
  CLI::App* train = app.add_subcommand("train", "train encoders with the configured objective and curriculum");
  CLI::App* eval = app.add_subcommand("eval", "kNN, linear probe and retrieval on frozen features");
  CLI::App* zeroshot = app.add_subcommand("zeroshot", "zero-shot classification through class text embeddings");
  CLI::App* plot = app.add_subcommand("plot", "render metrics CSVs as SVG charts");
  for (CLI::App* sub : {gen, train, eval, zeroshot, plot}) add_common(sub);
  for (CLI::App* sub : {train, eval, zeroshot}) sub->add_option("--data", opts.data, "feature-pair file");
  for (CLI::App* sub : {eval, zeroshot}) sub->add_option("--checkpoint", opts.checkpoint, "trainer checkpoint");
  plot->add_option("csvs", opts.csvs, "metrics CSV files (default: <out>/metrics.csv)");

  std::vector<const char*> argv{"cpd"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  std::optional<fs::path> out_dir;
  try {
    out_dir = resolve_out_dir(opts);
    if (plot->parsed()) return cmd_plot(opts, *out_dir);
    const RunConfig cfg = build_config(opts);
    if (gen->parsed()) return cmd_gen_data(cfg, *out_dir);
    if (train->parsed()) return cmd_train(cfg, *out_dir);
    if (eval->parsed()) return cmd_eval(cfg, *out_dir);
    return cmd_zeroshot(cfg, *out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    write_error_log(out_dir, std::string("config error: ") + e.what());
    return kConfigError;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    write_error_log(out_dir, std::string("config error: ") + e.what());
    return kConfigError;
  } catch (const NumericFault& e) {
    std::cerr << "numeric fault: " << e.what() << '\n';
    write_error_log(out_dir, std::string("numeric fault: ") + e.what());
    return kNumericFault;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    write_error_log(out_dir, std::string("i/o error: ") + e.what());
    return kIoError;
  } catch (const ParseError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    write_error_log(out_dir, std::string("parse error: ") + e.what());
    return kIoError;
  } catch (const SchemaError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    write_error_log(out_dir, std::string("schema error: ") + e.what());
    return kIoError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    write_error_log(out_dir, std::string("error: ") + e.what());
    return kFailure;
  }
}

}  // namespace cpd::cli
