#include "midibert/eval.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "midibert/error.h"

namespace midibert {

using json = nlohmann::json;

double accuracy(std::span<const int32_t> preds, std::span<const int32_t> labels, int32_t ignore_label) {
  if (preds.size() != labels.size()) {
    throw DataError("accuracy: " + std::to_string(preds.size()) + " predictions for " + std::to_string(labels.size()) +
                    " labels");
  }
  size_t n = 0, hit = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == ignore_label) continue;
    ++n;
    hit += preds[i] == labels[i];
  }
  if (n == 0) throw DataError("accuracy: no labeled positions");
  return static_cast<double>(hit) / static_cast<double>(n);
}

ConfusionTable::ConfusionTable(int classes, std::vector<std::string> names)
    : k_(classes), names_(std::move(names)), counts_(static_cast<size_t>(classes) * classes, 0) {
  if (classes <= 0) throw DataError("confusion table needs at least one class");
  if (names_.empty()) {
    for (int c = 0; c < k_; ++c) names_.push_back(std::to_string(c));
  }
  if (static_cast<int>(names_.size()) != k_) throw DataError("confusion table: class name count differs from classes");
}

void ConfusionTable::add(int32_t actual, int32_t predicted, int64_t n) {
  if (actual < 0 || actual >= k_ || predicted < 0 || predicted >= k_) {
    throw DataError("confusion table: class pair (" + std::to_string(actual) + ", " + std::to_string(predicted) +
                    ") outside 0.." + std::to_string(k_ - 1));
  }
  counts_[static_cast<size_t>(actual) * k_ + predicted] += n;
}

int64_t ConfusionTable::total() const { return std::accumulate(counts_.begin(), counts_.end(), int64_t{0}); }

int64_t ConfusionTable::trace() const {
  int64_t t = 0;
  for (int c = 0; c < k_; ++c) t += count(c, c);
  return t;
}

double ConfusionTable::accuracy() const {
  const int64_t n = total();
  if (n == 0) throw DataError("confusion table is empty");
  return static_cast<double>(trace()) / static_cast<double>(n);
}

std::vector<double> ConfusionTable::row_percentages() const {
  std::vector<double> out(counts_.size(), 0.0);
  for (int a = 0; a < k_; ++a) {
    int64_t row = 0;
    for (int p = 0; p < k_; ++p) row += count(a, p);
    if (row == 0) continue;
    for (int p = 0; p < k_; ++p) out[static_cast<size_t>(a) * k_ + p] = 100.0 * count(a, p) / static_cast<double>(row);
  }
  return out;
}

double ConfusionTable::precision(int c) const {
  int64_t col = 0;
  for (int a = 0; a < k_; ++a) col += count(a, c);
  return col == 0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(count(c, c)) / col;
}

double ConfusionTable::recall(int c) const {
  int64_t row = 0;
  for (int p = 0; p < k_; ++p) row += count(c, p);
  return row == 0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(count(c, c)) / row;
}

std::string ConfusionTable::to_csv() const {
  std::ostringstream os;
  os << "actual";
  for (const auto& n : names_) os << ',' << n;
  os << '\n';
  for (int a = 0; a < k_; ++a) {
    os << names_[a];
    for (int p = 0; p < k_; ++p) os << ',' << count(a, p);
    os << '\n';
  }
  return os.str();
}

std::string ConfusionTable::to_text() const {
  const auto pct = row_percentages();
  size_t w = 7;
  for (const auto& n : names_) w = std::max(w, n.size() + 1);
  std::ostringstream os;
  os << std::setw(static_cast<int>(w)) << "actual\\pred";
  for (const auto& n : names_) os << std::setw(static_cast<int>(w)) << n;
  os << '\n';
  os << std::fixed << std::setprecision(1);
  for (int a = 0; a < k_; ++a) {
    os << std::setw(static_cast<int>(w)) << names_[a];
    for (int p = 0; p < k_; ++p) os << std::setw(static_cast<int>(w)) << pct[static_cast<size_t>(a) * k_ + p];
    os << '\n';
  }
  return os.str();
}

std::string ConfusionTable::to_ppm(int cell_px) const {
  const auto pct = row_percentages();
  const int side = k_ * cell_px;
  std::string out = "P6\n" + std::to_string(side) + " " + std::to_string(side) + "\n255\n";
  out.reserve(out.size() + static_cast<size_t>(side) * side * 3);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double v = pct[static_cast<size_t>(y / cell_px) * k_ + x / cell_px] / 100.0;
      // white (0%) to dark blue (100%)
      out.push_back(static_cast<char>(std::lround(255 * (1 - v))));
      out.push_back(static_cast<char>(std::lround(255 * (1 - 0.8 * v))));
      out.push_back(static_cast<char>(255));
    }
  }
  return out;
}

ConfusionTable confusion(std::span<const int32_t> preds, std::span<const int32_t> labels, int classes,
                         std::vector<std::string> names, int32_t ignore_label) {
  if (preds.size() != labels.size()) throw DataError("confusion: prediction and label counts differ");
  ConfusionTable t(classes, std::move(names));
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != ignore_label) t.add(labels[i], preds[i]);
  }
  if (t.total() == 0) throw DataError("confusion: no labeled positions");
  return t;
}

// ---------------------------------------------------------------------------
// Melody baselines

std::vector<std::string> binary_melody_names() { return {"melody", "non-melody"}; }

std::vector<int32_t> skyline(const Score& score) {
  const auto& notes = score.notes;
  const size_t n = notes.size();
  std::vector<int32_t> out(n, kBinaryNonMelody);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return notes[a].onset() < notes[b].onset(); });

  // half-sub-beat units so durations and onsets share one grid
  auto start = [&](size_t i) { return 2 * static_cast<int64_t>(notes[i].onset()); };
  auto end = [&](size_t i) { return start(i) + notes[i].duration; };

  int64_t melody_end = std::numeric_limits<int64_t>::min();
  std::vector<size_t> active;
  for (size_t g = 0; g < n;) {
    const int64_t t = start(order[g]);
    size_t h = g;
    while (h < n && start(order[h]) == t) ++h;
    std::erase_if(active, [&](size_t i) { return end(i) <= t; });
    size_t top = order[g];
    for (size_t j = g; j < h; ++j) {
      const size_t i = order[j];
      if (notes[i].pitch > notes[top].pitch || (notes[i].pitch == notes[top].pitch && i < top)) top = i;
    }
    bool highest = true;
    for (size_t i : active) highest &= notes[i].pitch <= notes[top].pitch;
    if (highest && t >= melody_end) {
      out[top] = kBinaryMelody;
      melody_end = end(top);
    }
    for (size_t j = g; j < h; ++j) active.push_back(order[j]);
    g = h;
  }
  return out;
}

std::vector<int32_t> merge_melody_binary(std::span<const int32_t> three_class) {
  std::vector<int32_t> out;
  out.reserve(three_class.size());
  for (size_t i = 0; i < three_class.size(); ++i) {
    const int32_t l = three_class[i];
    if (l == kIgnoreLabel) {
      out.push_back(l);
    } else if (l == kMelodyLabel) {
      out.push_back(kBinaryMelody);
    } else if (l == kBridgeLabel || l == kAccompanimentLabel) {
      out.push_back(kBinaryNonMelody);
    } else {
      throw DataError("merge_melody_binary: unknown melody label " + std::to_string(l) + " at " + std::to_string(i));
    }
  }
  return out;
}

MajorityBaseline MajorityBaseline::fit(std::span<const int32_t> train_labels, int32_t ignore_label) {
  std::map<int32_t, size_t> freq;
  for (int32_t l : train_labels) {
    if (l != ignore_label) ++freq[l];
  }
  if (freq.empty()) throw DataError("majority baseline needs at least one label");
  MajorityBaseline m;
  size_t best = 0;
  for (const auto& [label, n] : freq) {
    if (n > best) {
      best = n;
      m.label = label;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

json nan_to_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

json table_json(const ConfusionTable& t) {
  json per_class = json::object();
  for (int c = 0; c < t.classes(); ++c) {
    per_class[t.names()[c]] = {{"precision", nan_to_null(t.precision(c))}, {"recall", nan_to_null(t.recall(c))}};
  }
  return {{"accuracy", t.accuracy()}, {"count", t.total()}, {"per_class", per_class}};
}

void write_file(const std::filesystem::path& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

}  // namespace

std::string metrics_json(const EvalReport& r) {
  const ConfusionTable t = confusion(r.predicted, r.actual, num_classes(r.task), class_names(r.task));
  json j = {{"task", to_string(r.task)}, {"split", r.split}, {"split_sizes", r.split_sizes}};
  j["metrics"] = table_json(t);
  if (r.task == Task::kMelody) {
    const auto bp = merge_melody_binary(r.predicted);
    const auto ba = merge_melody_binary(r.actual);
    j["binary"] = table_json(confusion(bp, ba, 2, binary_melody_names()));
  }
  j["extra"] = r.extra;
  return j.dump(2) + "\n";
}

void write_report(const std::string& dir, const EvalReport& r) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  const std::filesystem::path d(dir);
  const ConfusionTable t = confusion(r.predicted, r.actual, num_classes(r.task), class_names(r.task));
  write_file(d / "metrics.json", metrics_json(r));
  write_file(d / "confusion.csv", t.to_csv());
  write_file(d / "confusion.txt", t.to_text());
  write_file(d / "confusion.ppm", t.to_ppm());
  if (r.task == Task::kMelody) {
    const ConfusionTable b =
        confusion(merge_melody_binary(r.predicted), merge_melody_binary(r.actual), 2, binary_melody_names());
    write_file(d / "binary_confusion.csv", b.to_csv());
    write_file(d / "binary_confusion.txt", b.to_text());
  }
}

}  // namespace midibert
