#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "midibert/tokenizer.h"

namespace midibert {

inline constexpr double kMaskSelectProb = 0.15;
inline constexpr double kMaskReplaceProb = 0.80;
inline constexpr double kRandomReplaceProb = 0.10;

enum class Corruption : uint8_t { kNone, kMasked, kRandom, kKept };

/// Corrupted MLM inputs for a batch of equally long chunks.
/// Arrays are row-major [batch][length][fields] (ids, targets, loss mask) and
/// [batch][length] (corruption).
struct MaskedBatch {
  Representation representation = Representation::kRemi;
  int batch = 0;
  int length = 0;
  int fields = 1;
  std::vector<int32_t> input_ids;
  std::vector<int32_t> target_ids;
  /// 1 at selected steps; CP fields are always selected together.
  std::vector<uint8_t> loss_mask;
  std::vector<Corruption> corruption;
  uint64_t rng_seed = 0;

  size_t index(int b, int step, int field = 0) const {
    return (static_cast<size_t>(b) * length + step) * fields + field;
  }
  bool selected(int b, int step) const { return loss_mask[index(b, step)] != 0; }
  size_t num_selected() const;
  /// Copy limited to the first `new_length` steps of every row.
  MaskedBatch truncated(int new_length) const;
};

/// BERT-style corruption. Each non-Pad step is selected independently with
/// probability 0.15; a selected step becomes Mask (80%), a uniformly random
/// content token (10%) or stays unchanged (10%). CP super tokens are corrupted
/// as a unit. Decisions for step s of row b derive from mix_seed(seed, b, s).
/// Throws DataError on an empty batch or mixed representations/lengths.
MaskedBatch corrupt(std::span<const ChunkedSequence> chunks, uint64_t seed);

}  // namespace midibert
