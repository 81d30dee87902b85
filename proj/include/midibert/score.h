#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace midibert {

// Metrical grid. A bar is four quarter notes split into 16 sub-beats; note
// durations are counted in half sub-beats (1 = thirty-second, 32 = whole).
inline constexpr int kSubBeatsPerBar = 16;
inline constexpr int kMinDuration = 1;
inline constexpr int kMaxDuration = 64;

// The 86 pitches covered by the Pitch vocabulary. Everything else clamps.
inline constexpr int kMinPitch = 22;
inline constexpr int kMaxPitch = 107;
inline constexpr int kNumPitches = kMaxPitch - kMinPitch + 1;

inline constexpr int kNumVelocityClasses = 6;

/// A MIDI note before quantization, in file ticks.
struct RawNote {
  int64_t onset_ticks = 0;
  int64_t duration_ticks = 1;
  int pitch = 60;
  int velocity = 64;

  bool operator==(const RawNote&) const = default;
};

struct QuantNote {
  int bar = 0;
  int sub_beat = 1;  // 1..16
  int pitch = 60;
  int duration = 1;  // half sub-beats, 1..64
  std::optional<int> velocity_class;

  /// Onset in sub-beats from the start of the piece.
  int onset() const { return bar * kSubBeatsPerBar + sub_beat - 1; }

  bool operator==(const QuantNote&) const = default;
};

/// Canonical note order: onset, then pitch, then duration, then velocity.
bool note_less(const QuantNote& a, const QuantNote& b);

/// Quantized single-track piece. Notes are kept in canonical order.
struct Score {
  std::vector<QuantNote> notes;
  int num_bars = 0;
  std::string source_id;

  bool operator==(const Score&) const = default;
};

/// Sorts notes into canonical order.
void sort_notes(Score& score);

/// Throws DataError describing the first violated Score invariant.
void validate(const Score& score);

/// Copy with every velocity_class cleared.
Score without_velocity(Score score);

}  // namespace midibert
