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

// Metrics CSV I/O and static SVG line charts.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cpd/trainer.hpp"

namespace cpd {

inline constexpr const char* kMetricsHeader = "epoch,stage,objective,train_loss,recall1,recall5,wall_s";

std::string metrics_csv_row(const MetricsRecord& rec);
std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path);

struct MetricsSeries {
  std::string label;
  std::vector<MetricsRecord> records;
};

enum class PlotMetric { train_loss, recall1, recall5 };

const char* to_string(PlotMetric m);

// One chart, every series overlaid: a polyline plus one <circle class="point">
// per record, a legend entry per series, and a dashed
// <line class="stage-marker" data-epoch="e"> at the first Stage 2 epoch.
std::string render_svg(const std::vector<MetricsSeries>& series, PlotMetric metric);

// Reads each CSV, labels it by objective and writes <metric>.svg for every
// metric into out_dir. Returns the written paths; empty inputs produce none.
std::vector<std::filesystem::path> plot_metrics(const std::vector<std::filesystem::path>& csvs,
                                                const std::filesystem::path& out_dir);

}  // namespace cpd
