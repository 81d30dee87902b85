#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "midibert/rng.h"
#include "midibert/score.h"

namespace midibert::fixtures {

struct RandomScoreOptions {
  int max_bars = 6;
  int max_notes = 40;
  bool velocity = true;
  /// Probability that a note repeats the previous onset (chords).
  double chord_prob = 0.3;
};

/// Random Score satisfying every invariant: onsets inside the bars, notes in
/// canonical order. Empty bars, chords, unisons and notes ringing past the
/// last bar all occur.
inline Score random_score(Rng& rng, const RandomScoreOptions& o = {}) {
  Score s;
  s.num_bars = rng.range(0, o.max_bars);
  if (s.num_bars > 0) {
    const int n = rng.range(0, o.max_notes);
    int onset = rng.range(0, s.num_bars * kSubBeatsPerBar - 1);
    for (int i = 0; i < n; ++i) {
      if (i > 0 && !rng.bernoulli(o.chord_prob)) onset = rng.range(0, s.num_bars * kSubBeatsPerBar - 1);
      QuantNote q;
      q.bar = onset / kSubBeatsPerBar;
      q.sub_beat = onset % kSubBeatsPerBar + 1;
      q.pitch = rng.range(kMinPitch, kMaxPitch);
      q.duration = rng.range(kMinDuration, kMaxDuration);
      if (o.velocity) q.velocity_class = rng.range(0, kNumVelocityClasses - 1);
      s.notes.push_back(q);
    }
  }
  sort_notes(s);
  return s;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / ("midibert_test_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace midibert::fixtures
