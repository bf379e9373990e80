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

#include "cpd/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "cpd/errors.hpp"

namespace cpd {
namespace {

Vec gaussian(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

Vec unit_gaussian(int n, std::mt19937_64& rng) {
  Vec v;
  do {
    v = gaussian(n, rng);
  } while (v.norm() < 1e-12);
  return v / v.norm();
}

Mat random_rotation(int n, std::mt19937_64& rng) {
  Mat g(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) g(r, c) = std::normal_distribution<double>(0.0, 1.0)(rng);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ();
  // Sign fix so Q is Haar distributed and independent of QR conventions.
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int c = 0; c < n; ++c)
    if (r(c, c) < 0.0) q.col(c) *= -1.0;
  return q;
}

void append_double(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? line.npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view tok, long line, const char* what) {
  T v{};
  const auto* end = tok.data() + tok.size();
  auto res = std::from_chars(tok.data(), end, v);
  if (tok.empty() || res.ec != std::errc() || res.ptr != end)
    throw ParseError(std::string("bad ") + what + " '" + std::string(tok) + "'", line);
  return v;
}

// Parses "key=value" tokens of a header line after the magic words.
std::map<std::string, std::string> header_fields(std::string_view header, std::string_view magic,
                                                 long line) {
  if (header.substr(0, magic.size()) != magic) throw ParseError("missing '" + std::string(magic) + "' header", line);
  std::map<std::string, std::string> kv;
  std::istringstream iss{std::string(header.substr(magic.size()))};
  std::string tok;
  while (iss >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ParseError("malformed header token '" + tok + "'", line);
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

long header_int(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ParseError("header lacks " + key, 1);
  return parse_number<long>(it->second, 1, key.c_str());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Lines with their terminator status; a missing final newline marks truncation.
struct Line {
  std::string_view text;
  bool terminated;
};

std::vector<Line> lines_of(const std::string& content) {
  std::vector<Line> out;
  std::size_t start = 0;
  while (start < content.size()) {
    const auto nl = content.find('\n', start);
    if (nl == std::string::npos) {
      out.push_back({std::string_view(content).substr(start), false});
      break;
    }
    out.push_back({std::string_view(content).substr(start, nl - start), true});
    start = nl + 1;
  }
  return out;
}

void write_text_atomically(const std::filesystem::path& path, const std::string& content) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out << content;
    if (!out) throw IoError("failed writing " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp + " into place: " + ec.message());
}

}  // namespace

int PairedDataset::num_classes() const {
  int c = 0;
  for (const auto& inst : instances) c = std::max(c, inst.label + 1);
  return c;
}

RowMat PairedDataset::visual_rows(std::span<const int> idx) const {
  RowMat out(static_cast<Eigen::Index>(idx.size()), dv);
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = instances.at(idx[k]).visual.transpose();
  return out;
}

RowMat PairedDataset::text_rows(std::span<const int> idx) const {
  RowMat out(static_cast<Eigen::Index>(idx.size()), dt);
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = instances.at(idx[k]).text.transpose();
  return out;
}

std::vector<int> PairedDataset::labels(std::span<const int> idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(instances.at(i).label);
  return out;
}

bool same_instances(const PairedDataset& a, const PairedDataset& b) {
  if (a.dv != b.dv || a.dt != b.dt || a.labeled != b.labeled || a.size() != b.size()) return false;
  for (int i = 0; i < a.size(); ++i) {
    const auto& x = a.instances[i];
    const auto& y = b.instances[i];
    if (x.id != y.id || x.label != y.label || x.visual != y.visual || x.text != y.text) return false;
  }
  return true;
}

void SyntheticSpec::validate() const {
  if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (per_class < 1) throw ConfigError("per_class must be >= 1");
  if (dv < 1 || dt < 1) throw ConfigError("feature dims must be >= 1");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be >= 0");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in [0, 1]");
}

PairedDataset generate(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);

  PairedDataset ds;
  ds.provenance = Provenance::synthetic;
  ds.dv = spec.dv;
  ds.dt = spec.dt;
  ds.labeled = true;

  RowMat proto_v(spec.classes, spec.dv);
  ds.text_prototypes.resize(spec.classes, spec.dt);
  for (int c = 0; c < spec.classes; ++c) {
    proto_v.row(c) = unit_gaussian(spec.dv, rng).transpose();
    ds.text_prototypes.row(c) = unit_gaussian(spec.dt, rng).transpose();
  }
  const Mat rot_v = random_rotation(spec.dv, rng);
  const Mat rot_t = random_rotation(spec.dt, rng);
  const int shared = std::min(spec.dv, spec.dt);

  std::bernoulli_distribution swap_caption(spec.rho);
  std::uniform_int_distribution<int> other_class(0, spec.classes - 2);

  ds.instances.reserve(static_cast<std::size_t>(spec.classes) * spec.per_class);
  for (int c = 0; c < spec.classes; ++c) {
    for (int k = 0; k < spec.per_class; ++k) {
      const Vec latent = gaussian(std::max(spec.dv, spec.dt), rng);
      Vec noise_v = latent.head(spec.dv);
      Vec noise_t(spec.dt);
      noise_t.head(shared) = latent.head(shared);
      if (spec.dt > shared) noise_t.tail(spec.dt - shared) = latent.segment(shared, spec.dt - shared);
      if (spec.dv > shared) noise_v.tail(spec.dv - shared) = latent.segment(shared, spec.dv - shared);

      PairedInstance inst;
      inst.id = static_cast<int>(ds.instances.size());
      inst.label = c;
      inst.visual = proto_v.row(c).transpose() + spec.sigma * (rot_v * noise_v);

      const bool swapped = swap_caption(rng);
      if (swapped) {
        int other = other_class(rng);
        if (other >= c) ++other;
        inst.text = ds.text_prototypes.row(other).transpose() + spec.sigma * (rot_t * gaussian(spec.dt, rng));
      } else {
        inst.text = ds.text_prototypes.row(c).transpose() + spec.sigma * (rot_t * noise_t);
      }
      ds.instances.push_back(std::move(inst));
    }
  }
  return ds;
}

void write_dataset(const std::filesystem::path& path, const PairedDataset& ds) {
  std::string out;
  out += "cpdpairs v1 N=" + std::to_string(ds.size()) + " dv=" + std::to_string(ds.dv) +
         " dt=" + std::to_string(ds.dt) + " labeled=" + (ds.labeled ? "1" : "0") + "\n";
  for (const auto& inst : ds.instances) {
    if (inst.visual.size() != ds.dv || inst.text.size() != ds.dt) throw SchemaError("instance dims disagree with dataset dims");
    out += std::to_string(inst.id);
    out += ',';
    out += std::to_string(ds.labeled ? inst.label : -1);
    for (Eigen::Index k = 0; k < inst.visual.size(); ++k) {
      out += ',';
      append_double(out, inst.visual[k]);
    }
    for (Eigen::Index k = 0; k < inst.text.size(); ++k) {
      out += ',';
      append_double(out, inst.text[k]);
    }
    out += '\n';
  }
  write_text_atomically(path, out);
}

PairedDataset load_dataset(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  const auto lines = lines_of(content);
  if (lines.empty()) throw ParseError("empty file", 1);
  const auto kv = header_fields(lines[0].text, "cpdpairs v1", 1);
  const long n = header_int(kv, "N");
  const long dv = header_int(kv, "dv");
  const long dt = header_int(kv, "dt");
  const long labeled = header_int(kv, "labeled");
  if (n < 0 || dv < 1 || dt < 1 || (labeled != 0 && labeled != 1)) throw ParseError("header values out of range", 1);

  PairedDataset ds;
  ds.provenance = Provenance::file;
  ds.dv = static_cast<int>(dv);
  ds.dt = static_cast<int>(dt);
  ds.labeled = labeled == 1;
  ds.instances.reserve(static_cast<std::size_t>(n));

  const std::size_t expected_fields = static_cast<std::size_t>(2 + dv + dt);
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const long line_no = static_cast<long>(li) + 1;
    const long record = static_cast<long>(ds.instances.size());
    const auto& line = lines[li];
    if (trim(line.text).empty()) {
      if (!line.terminated) break;
      throw ParseError("blank line where record " + std::to_string(record) + " was expected", line_no);
    }
    if (!line.terminated) throw ParseError("record " + std::to_string(record) + " is truncated", line_no);
    if (record >= n) throw ParseError("more records than the header's N=" + std::to_string(n), line_no);
    const auto fields = split_fields(line.text, ',');
    if (fields.size() != expected_fields) {
      throw SchemaError("line " + std::to_string(line_no) + ": record " + std::to_string(record) + " has " +
                        std::to_string(fields.size() - std::min<std::size_t>(fields.size(), 2)) +
                        " features, header promises dv+dt=" + std::to_string(dv + dt));
    }
    PairedInstance inst;
    parse_number<long>(fields[0], line_no, "id");
    inst.id = static_cast<int>(record);
    inst.label = static_cast<int>(parse_number<long>(fields[1], line_no, "label"));
    if (ds.labeled && inst.label < 0) throw ParseError("labeled file has a negative label", line_no);
    if (!ds.labeled) inst.label = -1;
    inst.visual.resize(dv);
    inst.text.resize(dt);
    for (long k = 0; k < dv; ++k) inst.visual[k] = parse_number<double>(fields[2 + k], line_no, "float");
    for (long k = 0; k < dt; ++k) inst.text[k] = parse_number<double>(fields[2 + dv + k], line_no, "float");
    if (!inst.visual.allFinite() || !inst.text.allFinite()) throw ParseError("non-finite feature", line_no);
    ds.instances.push_back(std::move(inst));
  }
  if (static_cast<long>(ds.instances.size()) != n) {
    throw ParseError("file ends before record " + std::to_string(ds.instances.size()) + " of " + std::to_string(n),
                     static_cast<long>(lines.size()) + 1);
  }
  return ds;
}

void write_splits(const std::filesystem::path& path, const Splits& splits) {
  std::string out = "cpdsplits v1\n";
  auto emit = [&out](const char* name, const std::vector<int>& idx) {
    out += name;
    out += ':';
    for (int i : idx) out += ' ' + std::to_string(i);
    out += '\n';
  };
  emit("train", splits.train);
  emit("val", splits.val);
  emit("test", splits.test);
  write_text_atomically(path, out);
}

Splits read_splits(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  const auto lines = lines_of(content);
  if (lines.empty() || trim(lines[0].text) != "cpdsplits v1") throw ParseError("missing 'cpdsplits v1' header", 1);
  Splits s;
  int seen = 0;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const long line_no = static_cast<long>(li) + 1;
    const auto text = trim(lines[li].text);
    if (text.empty()) continue;
    const auto colon = text.find(':');
    if (colon == std::string_view::npos) throw ParseError("expected '<split>: indices'", line_no);
    const auto name = trim(text.substr(0, colon));
    std::vector<int>* dst = name == "train" ? &s.train : name == "val" ? &s.val : name == "test" ? &s.test : nullptr;
    if (dst == nullptr) throw ParseError("unknown split '" + std::string(name) + "'", line_no);
    std::istringstream iss{std::string(text.substr(colon + 1))};
    std::string tok;
    while (iss >> tok) dst->push_back(static_cast<int>(parse_number<long>(tok, line_no, "index")));
    ++seen;
  }
  if (seen != 3) throw ParseError("splits file must list train, val and test", static_cast<long>(lines.size()));
  return s;
}

void write_prototypes(const std::filesystem::path& path, const RowMat& protos) {
  std::string out = "cpdprotos v1 C=" + std::to_string(protos.rows()) + " dt=" + std::to_string(protos.cols()) + "\n";
  for (Eigen::Index c = 0; c < protos.rows(); ++c) {
    out += std::to_string(c);
    for (Eigen::Index k = 0; k < protos.cols(); ++k) {
      out += ',';
      append_double(out, protos(c, k));
    }
    out += '\n';
  }
  write_text_atomically(path, out);
}

RowMat read_prototypes(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  const auto lines = lines_of(content);
  if (lines.empty()) throw ParseError("empty file", 1);
  const auto kv = header_fields(lines[0].text, "cpdprotos v1", 1);
  const long c = header_int(kv, "C");
  const long dt = header_int(kv, "dt");
  if (c < 1 || dt < 1) throw ParseError("header values out of range", 1);
  if (static_cast<long>(lines.size()) < c + 1) throw ParseError("fewer prototype rows than C", static_cast<long>(lines.size()) + 1);
  RowMat protos(c, dt);
  for (long r = 0; r < c; ++r) {
    const long line_no = r + 2;
    const auto fields = split_fields(lines[r + 1].text, ',');
    if (static_cast<long>(fields.size()) != dt + 1) throw SchemaError("line " + std::to_string(line_no) + ": wrong prototype width");
    for (long k = 0; k < dt; ++k) protos(r, k) = parse_number<double>(fields[1 + k], line_no, "float");
  }
  return protos;
}

Splits make_splits(const PairedDataset& ds, std::array<double, 3> fractions, std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("split fractions must be positive");
    total += f;
  }
  if (total > 1.0 + 1e-9) throw ConfigError("split fractions must sum to at most 1");

  std::mt19937_64 rng(seed);
  // Groups are classes when labels exist, otherwise the whole dataset.
  std::map<int, std::vector<int>> groups;
  for (const auto& inst : ds.instances) groups[ds.labeled ? inst.label : -1].push_back(inst.id);

  Splits s;
  std::array<std::vector<int>*, 3> dst{&s.train, &s.val, &s.test};
  for (auto& [label, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    const double n = static_cast<double>(members.size());
    std::size_t begin = 0;
    double cumulative = 0.0;
    for (int k = 0; k < 3; ++k) {
      cumulative += fractions[k];
      const auto end = std::min(members.size(), static_cast<std::size_t>(std::llround(cumulative * n)));
      for (std::size_t j = begin; j < end; ++j) dst[k]->push_back(members[j]);
      begin = std::max(begin, end);
    }
  }
  for (auto* part : dst) {
    if (part->empty()) throw ConfigError("split fractions leave a split empty");
    std::sort(part->begin(), part->end());
  }
  return s;
}

PairedDataset split(PairedDataset ds, std::array<double, 3> fractions, std::uint64_t seed) {
  ds.splits = make_splits(ds, fractions, seed);
  return ds;
}

}  // namespace cpd
