#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "midibert/score.h"
#include "midibert/tokenizer.h"

namespace midibert {

enum class Task { kMelody, kVelocity, kComposer, kEmotion, kPretrainOnly };

std::string to_string(Task task);
/// Accepts melody, velocity, composer, emotion, pretrain. Throws UsageError.
Task parse_task(const std::string& name);
/// 3, 6, 8, 4; 0 for kPretrainOnly.
int num_classes(Task task);
bool is_note_level(Task task);
bool is_sequence_level(Task task);
/// Short display names used in reports (M/B/A, pp..ff, C/Y/H/E/J/S/M/W, HVHA..).
std::vector<std::string> class_names(Task task);

inline constexpr int32_t kIgnoreLabel = -100;

// Melody task classes.
inline constexpr int kMelodyLabel = 0;
inline constexpr int kBridgeLabel = 1;
inline constexpr int kAccompanimentLabel = 2;

struct LabeledPiece {
  Score score;
  std::optional<std::vector<int32_t>> note_labels;
  std::optional<int32_t> sequence_label;
  Task task = Task::kPretrainOnly;

  const std::string& piece_id() const { return score.source_id; }
};

/// Checks that the piece carries exactly the label kind its task needs and
/// that label values are in range. Throws DataError naming the piece.
void validate(const LabeledPiece& piece);

/// Throws DataError naming the piece when counts differ.
LabeledPiece attach_note_labels(Score score, std::vector<int32_t> labels, Task task);
LabeledPiece attach_sequence_label(Score score, int32_t label, Task task);
/// Velocity labels read off the score's own velocity classes.
LabeledPiece velocity_piece(Score score);

/// A chunk with its supervision. step_labels has one entry per step
/// (kIgnoreLabel where unlabeled) or is empty for unlabeled corpora.
struct LabeledChunk {
  ChunkedSequence chunk;
  std::vector<int32_t> step_labels;
  int32_t sequence_label = kIgnoreLabel;

  bool operator==(const LabeledChunk&) const = default;
};

/// Carries note labels to their steps via note_positions and replicates the
/// sequence label to every chunk of the piece.
std::vector<LabeledChunk> propagate_to_chunks(const LabeledPiece& piece, std::span<const ChunkedSequence> chunks);

// ---------------------------------------------------------------------------
// Splits

enum class Split { kTrain, kValid, kTest };
std::string to_string(Split split);
Split parse_split(const std::string& name);

struct SplitManifest {
  std::vector<std::string> train;
  std::vector<std::string> valid;
  std::vector<std::string> test;
  std::vector<int> ratios;
  uint64_t seed = 0;

  std::optional<Split> split_of(const std::string& piece_id) const;
  const std::vector<std::string>& ids(Split split) const;
  size_t size() const { return train.size() + valid.size() + test.size(); }
};

/// Piece-level split. ids are sorted, shuffled under seed and cut into sets of
/// floor(n * r_k / sum r) pieces; leftovers go to train. Two ratios give a
/// train/valid split. Throws DataError with fewer pieces than sets.
SplitManifest make_splits(std::vector<std::string> piece_ids, const std::vector<int>& ratios, uint64_t seed);

inline const std::vector<int> kDownstreamRatios = {8, 1, 1};
inline const std::vector<int> kPretrainRatios = {85, 15};

// ---------------------------------------------------------------------------
// Files. CSV files carry the header lines shown; readers reject others.

/// `piece_id,note_index,label`
std::map<std::string, std::vector<int32_t>> read_note_labels(const std::string& path);
void write_note_labels(const std::string& path, std::span<const LabeledPiece> pieces);
/// `piece_id,label`
std::map<std::string, int32_t> read_sequence_labels(const std::string& path);
void write_sequence_labels(const std::string& path, std::span<const LabeledPiece> pieces);
/// `piece_id,split`
SplitManifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const SplitManifest& manifest);

inline constexpr int kStoreSchemaVersion = 1;

struct ChunkStore {
  Representation representation = Representation::kRemi;
  Task task = Task::kPretrainOnly;
  int chunk_length = kChunkLength;
  std::vector<LabeledChunk> chunks;
};

/// Line-delimited JSON: a header object then one object per chunk.
void write_chunk_store(const std::string& path, const ChunkStore& store);
ChunkStore read_chunk_store(const std::string& path);

/// Quantized pieces with their labels, same container format.
void write_piece_store(const std::string& path, Task task, std::span<const LabeledPiece> pieces);
std::vector<LabeledPiece> read_piece_store(const std::string& path);

// ---------------------------------------------------------------------------
// Synthetic corpora

struct SynthSpec {
  Task task = Task::kMelody;
  int pieces = 10;
  int bars_per_piece = 8;
  int notes_per_bar = 8;
  std::string id_prefix;
};

/// Deterministic fixtures.
///  - Melody: a gap-free upper voice (label melody) above an accompaniment
///    that always sits below every melody note it overlaps, so the skyline
///    rule recovers the labels exactly.
///  - Velocity: melody/accompaniment texture with rule-based dynamics.
///  - Composer/Emotion: classes differ in scale, register, density and
///    preferred durations.
///  - PretrainOnly: unlabeled pop-style texture.
std::vector<LabeledPiece> synth_corpus(const SynthSpec& spec, uint64_t seed);

/// Unlabeled pieces repeating one random four-note figure every bar.
std::vector<LabeledPiece> ostinato_corpus(int pieces, int bars, uint64_t seed);

// ---------------------------------------------------------------------------
// Pre-training corpus selection

enum class CorpusSelection { kAll, kTrainSplits, kPretrainOnly };
std::string to_string(CorpusSelection sel);
CorpusSelection parse_corpus_selection(const std::string& name);

struct PreparedCorpus {
  std::string name;
  Task task = Task::kPretrainOnly;
  SplitManifest manifest;
};

/// Piece ids (qualified as "<corpus name>/<piece id>") admitted for
/// pre-training: every piece (kAll), downstream train splits plus all
/// pretrain-only pieces (kTrainSplits), or pretrain-only corpora alone.
std::vector<std::string> select_pretrain_pieces(std::span<const PreparedCorpus> corpora, CorpusSelection sel);

}  // namespace midibert
