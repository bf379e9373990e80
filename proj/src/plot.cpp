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

#include "cpd/plot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include "cpd/errors.hpp"

namespace cpd {
namespace {

constexpr double kWidth = 720, kHeight = 420;
constexpr double kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string full(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double metric_of(const MetricsRecord& r, PlotMetric m) {
  switch (m) {
    case PlotMetric::train_loss: return r.train_loss;
    case PlotMetric::recall1: return r.val_recall_at_1;
    case PlotMetric::recall5: return r.val_recall_at_5;
  }
  return 0.0;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else if (c == '"') out += "&quot;";
    else out += c;
  }
  return out;
}

}  // namespace

const char* to_string(PlotMetric m) {
  switch (m) {
    case PlotMetric::train_loss: return "train_loss";
    case PlotMetric::recall1: return "recall1";
    case PlotMetric::recall5: return "recall5";
  }
  return "?";
}

std::string metrics_csv_row(const MetricsRecord& rec) {
  std::ostringstream out;
  out << rec.epoch << ',' << static_cast<int>(rec.stage) << ',' << to_string(rec.objective) << ','
      << full(rec.train_loss) << ',' << full(rec.val_recall_at_1) << ',' << full(rec.val_recall_at_5) << ','
      << num(rec.wall_time);
  return out.str();
}

std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file " + path.string());
  std::vector<MetricsRecord> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != kMetricsHeader) throw ParseError("unexpected metrics header", 1);
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    if (f.size() != 7) throw ParseError("metrics row needs 7 fields", line_no);
    try {
      MetricsRecord r;
      r.epoch = std::stoi(f[0]);
      const int stage = std::stoi(f[1]);
      if (stage != 1 && stage != 2) throw ParseError("stage must be 1 or 2", line_no);
      r.stage = static_cast<Stage>(stage);
      r.objective = parse_objective(f[2]);
      r.train_loss = std::stod(f[3]);
      r.val_recall_at_1 = std::stod(f[4]);
      r.val_recall_at_5 = std::stod(f[5]);
      r.wall_time = std::stod(f[6]);
      out.push_back(r);
    } catch (const std::logic_error&) {
      throw ParseError("malformed metrics row", line_no);
    } catch (const ConfigError&) {
      throw ParseError("unknown objective in metrics row", line_no);
    }
  }
  return out;
}

std::string render_svg(const std::vector<MetricsSeries>& series, PlotMetric metric) {
  double x_max = 1.0, y_min = std::numeric_limits<double>::infinity(), y_max = -y_min;
  for (const auto& s : series)
    for (const auto& r : s.records) {
      x_max = std::max(x_max, static_cast<double>(r.epoch));
      y_min = std::min(y_min, metric_of(r, metric));
      y_max = std::max(y_max, metric_of(r, metric));
    }
  if (metric != PlotMetric::train_loss) {
    y_min = 0.0;
    y_max = 1.0;
  } else if (!(y_max > y_min)) {
    y_min -= 0.5;
    y_max += 0.5;
  }
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double epoch) { return kLeft + pw * (epoch / x_max); };
  auto py = [&](double v) { return kTop + ph * (1.0 - (v - y_min) / (y_max - y_min)); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kLeft << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\">" << to_string(metric)
      << " vs epoch</text>\n";
  // axes
  svg << "<line class=\"axis\" x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\""
      << kTop + ph << "\" stroke=\"black\"/>\n";
  svg << "<line class=\"axis\" x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + ph
      << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = y_min + (y_max - y_min) * t / 4.0;
    svg << "<text x=\"" << kLeft - 8 << "\" y=\"" << num(py(v) + 4) << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
        << num(v) << "</text>\n";
  }
  svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">epoch (max " << num(x_max) << ")</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % std::size(kPalette)];
    svg << "<g class=\"series\" data-label=\"" << escape(s.label) << "\">\n";
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < s.records.size(); ++k) {
      if (k) svg << ' ';
      svg << num(px(s.records[k].epoch)) << ',' << num(py(metric_of(s.records[k], metric)));
    }
    svg << "\"/>\n";
    for (const auto& r : s.records) {
      svg << "<circle class=\"point\" cx=\"" << num(px(r.epoch)) << "\" cy=\"" << num(py(metric_of(r, metric)))
          << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
    }
    for (std::size_t k = 0; k < s.records.size(); ++k) {
      const bool enters_stage2 = s.records[k].stage == Stage::stage2_joint &&
                                 k > 0 && s.records[k - 1].stage == Stage::stage1_text_frozen;
      if (!enters_stage2) continue;
      const double x = px(s.records[k].epoch);
      svg << "<line class=\"stage-marker\" data-epoch=\"" << s.records[k].epoch << "\" x1=\"" << num(x) << "\" y1=\""
          << kTop << "\" x2=\"" << num(x) << "\" y2=\"" << kTop + ph << "\" stroke=\"" << color
          << "\" stroke-dasharray=\"4 3\"/>\n";
    }
    svg << "</g>\n";
    const double ly = kTop + 18.0 * static_cast<double>(si);
    svg << "<g class=\"legend\"><rect x=\"" << kLeft + pw + 16 << "\" y=\"" << ly << "\" width=\"12\" height=\"12\" fill=\""
        << color << "\"/><text x=\"" << kLeft + pw + 34 << "\" y=\"" << ly + 10
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << escape(s.label) << "</text></g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<std::filesystem::path> plot_metrics(const std::vector<std::filesystem::path>& csvs,
                                                const std::filesystem::path& out_dir) {
  std::vector<MetricsSeries> series;
  std::map<std::string, int> label_counts;
  for (const auto& path : csvs) {
    MetricsSeries s;
    s.records = read_metrics_csv(path);
    if (s.records.empty()) {
      std::cerr << "warning: " << path.string() << " has no metrics rows; skipped\n";
      continue;
    }
    s.label = to_string(s.records.front().objective);
    const int seen = ++label_counts[s.label];
    if (seen > 1) s.label += " #" + std::to_string(seen);
    series.push_back(std::move(s));
  }
  std::vector<std::filesystem::path> written;
  if (series.empty()) return written;
  std::filesystem::create_directories(out_dir);
  for (auto metric : {PlotMetric::train_loss, PlotMetric::recall1, PlotMetric::recall5}) {
    const auto path = out_dir / (std::string(to_string(metric)) + ".svg");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << render_svg(series, metric);
    written.push_back(path);
  }
  return written;
}

}  // namespace cpd
