#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "midibert/corpus.h"
#include "midibert/score.h"

namespace midibert {

/// Fraction of positions (excluding ignore_label) where preds equal labels.
/// Throws DataError on length mismatch or when nothing is left to score.
double accuracy(std::span<const int32_t> preds, std::span<const int32_t> labels, int32_t ignore_label = kIgnoreLabel);

/// Counts with rows = actual class, columns = predicted class.
class ConfusionTable {
 public:
  ConfusionTable(int classes, std::vector<std::string> names = {});

  void add(int32_t actual, int32_t predicted, int64_t n = 1);
  int classes() const { return k_; }
  const std::vector<std::string>& names() const { return names_; }
  int64_t count(int actual, int predicted) const { return counts_[static_cast<size_t>(actual) * k_ + predicted]; }
  int64_t total() const;
  int64_t trace() const;
  double accuracy() const;
  /// Row-normalized percentages; rows with no samples are all zero.
  std::vector<double> row_percentages() const;
  /// NaN when the class is never predicted / never present.
  double precision(int c) const;
  double recall(int c) const;

  /// "actual,<names...>" header then one count row per class.
  std::string to_csv() const;
  /// Aligned percentage table with one decimal.
  std::string to_text() const;
  /// Binary PPM (P6) heat map of the row percentages, cell_px square cells.
  std::string to_ppm(int cell_px = 32) const;

 private:
  int k_;
  std::vector<std::string> names_;
  std::vector<int64_t> counts_;
};

ConfusionTable confusion(std::span<const int32_t> preds, std::span<const int32_t> labels, int classes,
                         std::vector<std::string> names = {}, int32_t ignore_label = kIgnoreLabel);

// ---------------------------------------------------------------------------
// Melody baselines. Binary labels use 0 = melody, 1 = non-melody.

inline constexpr int32_t kBinaryMelody = 0;
inline constexpr int32_t kBinaryNonMelody = 1;
std::vector<std::string> binary_melody_names();

/// Greedy skyline over the score's notes in onset order. At each onset the
/// highest starting note (lowest index among equal pitches) is melody when
/// no sounding note is higher and it starts at or after the end of the
/// previous melody note. Returns one binary label per note in score order.
std::vector<int32_t> skyline(const Score& score);

/// melody -> melody; bridge, accompaniment -> non-melody. kIgnoreLabel passes
/// through. Throws DataError on any other value.
std::vector<int32_t> merge_melody_binary(std::span<const int32_t> three_class);

struct MajorityBaseline {
  int32_t label = 0;
  /// Ties go to the smaller label. Throws DataError without labels.
  static MajorityBaseline fit(std::span<const int32_t> train_labels, int32_t ignore_label = kIgnoreLabel);
  std::vector<int32_t> predict(size_t n) const { return std::vector<int32_t>(n, label); }
};

// ---------------------------------------------------------------------------
// Reports

struct EvalReport {
  Task task = Task::kMelody;
  std::string split = "test";
  std::map<std::string, size_t> split_sizes;  // pieces per split
  std::vector<int32_t> predicted;
  std::vector<int32_t> actual;
  /// Extra scalar metrics (baselines etc.), written verbatim.
  std::map<std::string, double> extra;
};

/// Writes metrics.json, confusion.csv, confusion.txt and confusion.ppm into
/// dir; melody reports also get the merged binary table (binary_*). Contents
/// are a pure function of the report. Throws IoError on write failure.
void write_report(const std::string& dir, const EvalReport& report);
std::string metrics_json(const EvalReport& report);

}  // namespace midibert
