#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "midibert/score.h"

namespace midibert {

enum class Representation { kRemi, kCp };

std::string to_string(Representation rep);
/// Accepts "remi" or "cp" (case-insensitive). Throws UsageError otherwise.
Representation parse_representation(const std::string& name);

inline constexpr int kChunkLength = 512;

// Shared id layout: every vocabulary (REMI, and each CP field) starts with
// Pad = 0 and Mask = 1, followed by content values in per-type blocks of
// ascending value. Checkpoints depend on this order.
inline constexpr int32_t kPadId = 0;
inline constexpr int32_t kMaskId = 1;
inline constexpr int32_t kFirstContentId = 2;

inline constexpr int kRemiVocabSize = 169;
inline constexpr int kCpFields = 4;
inline constexpr std::array<int, kCpFields> kCpFieldSizes = {4, 18, 88, 66};
inline constexpr int kCpVocabSize = 176;

// ---------------------------------------------------------------------------
// REMI

enum class RemiKind : uint8_t { kPad, kMask, kBar, kSubBeat, kPitch, kDuration };

/// One REMI event, stored as its vocabulary id.
class RemiToken {
 public:
  RemiToken() = default;
  /// Throws DataError when id is outside the vocabulary.
  static RemiToken from_id(int32_t id);
  static RemiToken pad() { return RemiToken(kPadId); }
  static RemiToken mask() { return RemiToken(kMaskId); }
  static RemiToken bar();
  static RemiToken sub_beat(int v);
  static RemiToken pitch(int p);
  static RemiToken duration(int d);

  int32_t id() const { return id_; }
  RemiKind kind() const;
  /// Value carried by SubBeat/Pitch/Duration tokens; 0 otherwise.
  int value() const;
  std::string name() const;

  bool operator==(const RemiToken&) const = default;

 private:
  explicit RemiToken(int32_t id) : id_(id) {}
  int32_t id_ = kPadId;
};

// ---------------------------------------------------------------------------
// CP

enum CpField : int { kBarField = 0, kSubBeatField = 1, kPitchField = 2, kDurationField = 3 };

// Bar field ids.
inline constexpr int32_t kBarNew = 2;
inline constexpr int32_t kBarCont = 3;

/// One compound-word time step: four per-field ids.
class SuperToken {
 public:
  SuperToken() = default;
  /// Throws DataError when any field id is outside its vocabulary.
  static SuperToken from_ids(const std::array<int32_t, kCpFields>& ids);
  static SuperToken pad() { return SuperToken({kPadId, kPadId, kPadId, kPadId}); }
  static SuperToken mask() { return SuperToken({kMaskId, kMaskId, kMaskId, kMaskId}); }
  /// Marker for a bar that holds no notes: (New, Pad, Pad, Pad).
  static SuperToken empty_bar() { return SuperToken({kBarNew, kPadId, kPadId, kPadId}); }
  static SuperToken note(bool new_bar, int sub_beat, int pitch, int duration);

  const std::array<int32_t, kCpFields>& ids() const { return ids_; }
  int32_t operator[](int field) const { return ids_[field]; }

  bool is_pad() const;
  bool is_mask() const;
  bool is_empty_bar() const;
  bool is_note() const;
  bool new_bar() const { return ids_[kBarField] == kBarNew; }
  int sub_beat() const;
  int pitch() const;
  int duration() const;
  std::string name() const;

  bool operator==(const SuperToken&) const = default;

 private:
  explicit SuperToken(const std::array<int32_t, kCpFields>& ids) : ids_(ids) {}
  std::array<int32_t, kCpFields> ids_{kPadId, kPadId, kPadId, kPadId};
};

// ---------------------------------------------------------------------------
// Vocabulary

/// Bijective token-name <-> id maps. REMI has one field; CP has four.
class Vocabulary {
 public:
  Representation representation() const { return rep_; }
  int num_fields() const { return static_cast<int>(names_.size()); }
  int field_size(int field) const { return static_cast<int>(names_[field].size()); }
  /// Sum of the field sizes: 169 for REMI and 176 for CP.
  int total_size() const;
  const std::string& name(int field, int32_t id) const { return names_[field][id]; }
  /// Throws DataError for unknown names.
  int32_t id(int field, const std::string& name) const;

  /// Writes `token<TAB>id` lines sorted by id. CP ids in the file are global:
  /// field offset (0, 4, 22, 110) plus the per-field id.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  bool operator==(const Vocabulary& o) const { return rep_ == o.rep_ && names_ == o.names_; }

 private:
  friend const Vocabulary& vocab(Representation rep);
  Vocabulary() = default;
  void rebuild_index();

  Representation rep_ = Representation::kRemi;
  std::vector<std::vector<std::string>> names_;
  std::vector<std::map<std::string, int32_t>> index_;
};

const Vocabulary& vocab(Representation rep);

/// Per-field class weights proportional to vocabulary size. For CP this is
/// (4, 18, 88, 66) / 176. For REMI entry i is the weight of a target token
/// with id i: |V_type| / 169 for its type (Bar 1, SubBeat 16, Pitch 86,
/// Duration 64); Pad and Mask get 0.
std::vector<double> cp_field_weights();
std::vector<double> remi_class_weights();

// ---------------------------------------------------------------------------
// Codecs

std::vector<RemiToken> encode_remi(const Score& score);
std::vector<SuperToken> encode_cp(const Score& score);

/// Inverse codecs. Pad and Mask steps are skipped. Throw DataError naming the
/// offending step index on grammar violations.
Score decode_remi(std::span<const RemiToken> tokens, const std::string& source_id = "");
Score decode_cp(std::span<const SuperToken> tokens, const std::string& source_id = "");

// ---------------------------------------------------------------------------
// Chunking

struct NotePosition {
  int32_t step = 0;
  int32_t note_index = 0;

  bool operator==(const NotePosition&) const = default;
};

/// A fixed-length window of one piece. ids is step-major with num_fields()
/// ids per step (1 for REMI, 4 for CP); the tail beyond the content is Pad.
struct ChunkedSequence {
  Representation representation = Representation::kRemi;
  std::string piece_id;
  int32_t chunk_index = 0;
  std::vector<int32_t> ids;
  std::vector<NotePosition> note_positions;

  int num_fields() const { return representation == Representation::kCp ? kCpFields : 1; }
  int length() const { return static_cast<int>(ids.size()) / num_fields(); }
  int32_t id(int step, int field = 0) const { return ids[static_cast<size_t>(step) * num_fields() + field]; }
  bool is_pad(int step) const { return id(step, 0) == kPadId; }
  /// Number of leading steps up to and including the last non-Pad step.
  int content_length() const;

  bool operator==(const ChunkedSequence&) const = default;
};

/// Splits one piece into consecutive non-overlapping windows of `length`
/// steps, padding the last. note_positions point at the Pitch step (REMI) or
/// the note's super token (CP); note indices follow Score order.
std::vector<ChunkedSequence> chunk_remi(std::span<const RemiToken> tokens, const std::string& piece_id,
                                        int length = kChunkLength);
std::vector<ChunkedSequence> chunk_cp(std::span<const SuperToken> tokens, const std::string& piece_id,
                                      int length = kChunkLength);

/// encode_* followed by chunk_*.
std::vector<ChunkedSequence> encode_and_chunk(const Score& score, Representation rep,
                                              int length = kChunkLength);

/// Inverse of chunking: concatenates chunk content with padding removed.
std::vector<RemiToken> unchunk_remi(std::span<const ChunkedSequence> chunks);
std::vector<SuperToken> unchunk_cp(std::span<const ChunkedSequence> chunks);

/// Number of bar markers (REMI Bar, CP New) in a chunk.
int bars_in_chunk(const ChunkedSequence& chunk);

}  // namespace midibert
