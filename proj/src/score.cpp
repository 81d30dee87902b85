#include "midibert/score.h"

#include <algorithm>
#include <sstream>
#include <tuple>

#include "midibert/error.h"

namespace midibert {

bool note_less(const QuantNote& a, const QuantNote& b) {
  return std::make_tuple(a.onset(), a.pitch, a.duration, a.velocity_class.value_or(-1)) <
         std::make_tuple(b.onset(), b.pitch, b.duration, b.velocity_class.value_or(-1));
}

void sort_notes(Score& score) {
  std::stable_sort(score.notes.begin(), score.notes.end(), note_less);
}

void validate(const Score& score) {
  auto fail = [&](size_t i, const std::string& what) {
    std::ostringstream os;
    os << "score '" << score.source_id << "' note " << i << ": " << what;
    throw DataError(os.str());
  };
  if (score.num_bars < 0) throw DataError("score '" + score.source_id + "': negative bar count");
  for (size_t i = 0; i < score.notes.size(); ++i) {
    const QuantNote& n = score.notes[i];
    if (n.bar < 0 || n.bar >= score.num_bars) fail(i, "bar index outside [0, num_bars)");
    if (n.sub_beat < 1 || n.sub_beat > kSubBeatsPerBar) fail(i, "sub-beat outside 1..16");
    if (n.pitch < kMinPitch || n.pitch > kMaxPitch) fail(i, "pitch outside vocabulary range");
    if (n.duration < kMinDuration || n.duration > kMaxDuration) fail(i, "duration outside 1..64");
    if (n.velocity_class && (*n.velocity_class < 0 || *n.velocity_class >= kNumVelocityClasses)) {
      fail(i, "velocity class outside 0..5");
    }
    if (i > 0 && note_less(n, score.notes[i - 1])) fail(i, "notes out of canonical order");
  }
}

Score without_velocity(Score score) {
  for (auto& n : score.notes) n.velocity_class.reset();
  return score;
}

}  // namespace midibert
