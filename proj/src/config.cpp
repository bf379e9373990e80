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

#include "cpd/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cpd/errors.hpp"

namespace cpd {
namespace {

struct KeySpec {
  const char* key;
  const char* fallback;
};

// Desk-scale defaults. m is reduced to fit the small benchmark bank.
constexpr KeySpec kKeys[] = {
    // data
    {"data", ""},
    {"splits", ""},
    {"classes", "10"},
    {"per_class", "60"},
    {"dv", "48"},
    {"dt", "48"},
    {"sigma", "0.1"},
    {"rho", "0.2"},
    {"data_seed", "0"},
    {"train_frac", "0.5"},
    {"val_frac", "0.3333333333333333"},
    {"test_frac", "0.1666666666666667"},
    {"split_seed", "0"},
    // training
    {"objective", "cpd_nce"},
    {"tau", "0.07"},
    {"m", "32"},
    {"delta", "0.5"},
    {"batch_size", "32"},
    {"stage1_lr", "0.1"},
    {"stage2_lr_text", "3e-05"},
    {"stage2_lr_rest", "0.01"},
    {"sgd_momentum", "0.9"},
    {"weight_decay", "0.0001"},
    {"max_epochs", "300"},
    {"plateau_patience", "5"},
    {"plateau_min_delta", "0.002"},
    {"seed", "0"},
    {"bank_momentum", "0.5"},
    {"exclude_positive", "1"},
    {"hidden_dim", "128"},
    {"embed_dim", "64"},
    {"curriculum", "two_stage"},
    {"text_init", "warmup"},
    {"warmup_epochs", "60"},
    {"warmup_lr", "0.05"},
    {"checkpoint_every", "10"},
    // evaluation
    {"checkpoint", ""},
    {"prototypes", ""},
    {"knn_k", "25"},
    {"probe_lr", "0.001"},
    {"probe_epochs", "30"},
    {"probe_decay_every", "10"},
    {"probe_batch_size", "8"},
    {"probe_standardize", "1"},
    {"probe_seed", "0"},
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (text.empty() || res.ec != std::errc() || res.ptr != end)
    throw ConfigError("config key '" + key + "' has invalid value '" + text + "'");
  return v;
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : kKeys) values_.emplace_back(k.key, k.fallback);
}

const std::vector<std::string>& RunConfig::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& k : kKeys) out.emplace_back(k.key);
    return out;
  }();
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : values_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected 'key = value'");
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

const std::string& RunConfig::get(const std::string& key) const {
  for (const auto& [k, v] : values_)
    if (k == key) return v;
  throw ConfigError("unknown config key '" + key + "'");
}

double RunConfig::get_double(const std::string& key) const {
  const double v = parse_value<double>(key, get(key));
  if (!std::isfinite(v)) throw ConfigError("config key '" + key + "' must be finite");
  return v;
}

long RunConfig::get_int(const std::string& key) const { return parse_value<long>(key, get(key)); }

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  return parse_value<std::uint64_t>(key, get(key));
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("config key '" + key + "' must be 0/1 or true/false");
}

std::string RunConfig::resolved_text() const {
  std::ostringstream out;
  out << "# resolved configuration\n";
  for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
  return out.str();
}

void RunConfig::write_resolved(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << resolved_text();
  if (!out) throw IoError("failed writing " + path.string());
}

SyntheticSpec synthetic_spec_from(const RunConfig& cfg) {
  SyntheticSpec s;
  s.classes = static_cast<int>(cfg.get_int("classes"));
  s.per_class = static_cast<int>(cfg.get_int("per_class"));
  s.dv = static_cast<int>(cfg.get_int("dv"));
  s.dt = static_cast<int>(cfg.get_int("dt"));
  s.sigma = cfg.get_double("sigma");
  s.rho = cfg.get_double("rho");
  s.seed = cfg.get_u64("data_seed");
  s.validate();
  return s;
}

TrainingConfig training_config_from(const RunConfig& cfg) {
  TrainingConfig t;
  t.objective = parse_objective(cfg.get("objective"));
  t.tau = cfg.get_double("tau");
  t.m = static_cast<int>(cfg.get_int("m"));
  t.delta = cfg.get_double("delta");
  t.batch_size = static_cast<int>(cfg.get_int("batch_size"));
  t.stage1_lr = cfg.get_double("stage1_lr");
  t.stage2_lr_text = cfg.get_double("stage2_lr_text");
  t.stage2_lr_rest = cfg.get_double("stage2_lr_rest");
  t.sgd_momentum = cfg.get_double("sgd_momentum");
  t.weight_decay = cfg.get_double("weight_decay");
  t.max_epochs = static_cast<int>(cfg.get_int("max_epochs"));
  t.plateau_patience = static_cast<int>(cfg.get_int("plateau_patience"));
  t.plateau_min_delta = cfg.get_double("plateau_min_delta");
  t.seed = cfg.get_u64("seed");
  t.bank_momentum = cfg.get_double("bank_momentum");
  t.exclude_positive = cfg.get_bool("exclude_positive");
  t.hidden_dim = static_cast<int>(cfg.get_int("hidden_dim"));
  t.embed_dim = static_cast<int>(cfg.get_int("embed_dim"));
  t.curriculum = parse_curriculum(cfg.get("curriculum"));
  t.text_init = parse_text_init(cfg.get("text_init"));
  t.warmup_epochs = static_cast<int>(cfg.get_int("warmup_epochs"));
  t.warmup_lr = cfg.get_double("warmup_lr");
  t.validate();
  return t;
}

ProbeConfig probe_config_from(const RunConfig& cfg) {
  ProbeConfig p;
  p.lr = cfg.get_double("probe_lr");
  p.epochs = static_cast<int>(cfg.get_int("probe_epochs"));
  p.decay_every = static_cast<int>(cfg.get_int("probe_decay_every"));
  p.batch_size = static_cast<int>(cfg.get_int("probe_batch_size"));
  p.standardize = cfg.get_bool("probe_standardize");
  p.seed = cfg.get_u64("probe_seed");
  p.validate();
  return p;
}

std::array<double, 3> split_fractions_from(const RunConfig& cfg) {
  return {cfg.get_double("train_frac"), cfg.get_double("val_frac"), cfg.get_double("test_frac")};
}

}  // namespace cpd
