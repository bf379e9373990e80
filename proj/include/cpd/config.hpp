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

// Run configuration shared by every CLI command: a fixed table of known keys
// with desk-scale defaults, a line-oriented "key = value" file format with
// '#' comments, and repeated --set overrides. Unknown keys are rejected.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cpd/data.hpp"
#include "cpd/evaluation.hpp"
#include "cpd/trainer.hpp"

namespace cpd {

class RunConfig {
 public:
  // All known keys at their defaults.
  RunConfig();

  // Applies every "key = value" line of the file.
  void load_file(const std::filesystem::path& path);
  // Applies one "key=value" override.
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // Every key in table order, one "key = value" per line. Loading this text
  // back reproduces the configuration exactly.
  std::string resolved_text() const;
  void write_resolved(const std::filesystem::path& path) const;

  static const std::vector<std::string>& known_keys();

 private:
  std::vector<std::pair<std::string, std::string>> values_;
};

SyntheticSpec synthetic_spec_from(const RunConfig& cfg);
TrainingConfig training_config_from(const RunConfig& cfg);
ProbeConfig probe_config_from(const RunConfig& cfg);
std::array<double, 3> split_fractions_from(const RunConfig& cfg);

}  // namespace cpd
