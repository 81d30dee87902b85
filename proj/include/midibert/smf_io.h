#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "midibert/score.h"

namespace midibert {

struct TimeSignature {
  int64_t tick = 0;
  int numerator = 4;
  int denominator = 4;

  bool operator==(const TimeSignature&) const = default;
};

/// Result of reading a Standard MIDI File. Notes from all tracks and channels
/// are merged and sorted by (onset, pitch).
struct SmfContents {
  std::vector<RawNote> notes;
  int ticks_per_quarter = 480;
  std::vector<TimeSignature> time_signatures;
  /// Largest end-of-track tick over all tracks.
  int64_t end_tick = 0;
  /// Tick of an "end" marker meta event. write_smf places one at the last bar
  /// line so that notes ringing past it do not lengthen the piece.
  std::optional<int64_t> end_marker_tick;
};

/// Parses an SMF format 0 or 1 file. Throws DataError with the byte offset of
/// the problem on malformed headers, truncated tracks and unpaired note-ons.
SmfContents parse_smf(std::span<const uint8_t> bytes);

/// Reads and parses a file from disk. Throws IoError if it cannot be read.
SmfContents read_smf_file(const std::string& path);

/// True when the file declares no meter or only 4/4.
bool is_four_four(const SmfContents& smf);

/// Maps a MIDI velocity onto the six dynamics bins pp, p, mp, mf, f, ff.
/// Throws DataError outside 0..127.
int velocity_class_of(int velocity);

/// Representative velocity of a class: the rounded midpoint of its range.
int velocity_of_class(int velocity_class);

struct QuantizeOptions {
  /// Attach velocity_class to each note.
  bool keep_velocity = true;
  std::string source_id;
};

/// Snaps onsets to the 16-per-bar grid and durations to half sub-beats,
/// rounding exact ties upward. Durations clamp to 1..64 and pitches to the
/// vocabulary range. num_bars covers every onset; end_tick, when given,
/// extends it to the nearest bar boundary of the declared track end.
Score quantize(std::span<const RawNote> raw, int ticks_per_quarter,
               const QuantizeOptions& options = {}, int64_t end_tick = 0);

/// Quantizes parsed contents, enforcing 4/4 unless force_four_four is set.
Score quantize(const SmfContents& smf, const QuantizeOptions& options = {},
               bool force_four_four = false);

inline constexpr int kWriteTicksPerQuarter = 480;

/// Writes a format-0 SMF at 480 ticks per quarter with one tempo event and a
/// 4/4 time signature. Notes sharing a pitch while overlapping are spread over
/// separate channels so that reading back pairs them unambiguously.
std::vector<uint8_t> write_smf(const Score& score, int default_velocity = 64);

void write_smf_file(const Score& score, const std::string& path,
                    int default_velocity = 64);

}  // namespace midibert
