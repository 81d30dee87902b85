#include "midibert/masking.h"

#include <algorithm>

#include "midibert/error.h"
#include "midibert/rng.h"

namespace midibert {

size_t MaskedBatch::num_selected() const {
  size_t n = 0;
  for (int b = 0; b < batch; ++b) {
    for (int s = 0; s < length; ++s) n += selected(b, s);
  }
  return n;
}

MaskedBatch MaskedBatch::truncated(int new_length) const {
  new_length = std::clamp(new_length, 0, length);
  MaskedBatch out;
  out.representation = representation;
  out.batch = batch;
  out.length = new_length;
  out.fields = fields;
  out.rng_seed = rng_seed;
  const size_t row = static_cast<size_t>(new_length) * fields;
  for (int b = 0; b < batch; ++b) {
    const size_t from = index(b, 0);
    out.input_ids.insert(out.input_ids.end(), input_ids.begin() + from, input_ids.begin() + from + row);
    out.target_ids.insert(out.target_ids.end(), target_ids.begin() + from, target_ids.begin() + from + row);
    out.loss_mask.insert(out.loss_mask.end(), loss_mask.begin() + from, loss_mask.begin() + from + row);
    const size_t cfrom = static_cast<size_t>(b) * length;
    out.corruption.insert(out.corruption.end(), corruption.begin() + cfrom, corruption.begin() + cfrom + new_length);
  }
  return out;
}

MaskedBatch corrupt(std::span<const ChunkedSequence> chunks, uint64_t seed) {
  if (chunks.empty()) throw DataError("cannot corrupt an empty batch");
  MaskedBatch out;
  out.representation = chunks.front().representation;
  out.fields = chunks.front().num_fields();
  out.length = chunks.front().length();
  out.batch = static_cast<int>(chunks.size());
  out.rng_seed = seed;
  for (const auto& c : chunks) {
    if (c.representation != out.representation || c.length() != out.length) {
      throw DataError("batch mixes representations or chunk lengths");
    }
  }

  std::vector<int> field_sizes;
  if (out.representation == Representation::kCp) {
    field_sizes.assign(kCpFieldSizes.begin(), kCpFieldSizes.end());
  } else {
    field_sizes = {kRemiVocabSize};
  }

  const size_t total = static_cast<size_t>(out.batch) * out.length * out.fields;
  out.input_ids.resize(total);
  out.target_ids.resize(total);
  out.loss_mask.assign(total, 0);
  out.corruption.assign(static_cast<size_t>(out.batch) * out.length, Corruption::kNone);

  for (int b = 0; b < out.batch; ++b) {
    const ChunkedSequence& c = chunks[b];
    std::copy(c.ids.begin(), c.ids.end(), out.input_ids.begin() + out.index(b, 0));
    std::copy(c.ids.begin(), c.ids.end(), out.target_ids.begin() + out.index(b, 0));
    for (int s = 0; s < out.length; ++s) {
      if (c.is_pad(s)) continue;
      Rng rng(mix_seed({seed, static_cast<uint64_t>(b), static_cast<uint64_t>(s)}));
      if (!rng.bernoulli(kMaskSelectProb)) continue;
      const double u = rng.uniform();
      Corruption mode = Corruption::kKept;
      if (u < kMaskReplaceProb) {
        mode = Corruption::kMasked;
      } else if (u < kMaskReplaceProb + kRandomReplaceProb) {
        mode = Corruption::kRandom;
      }
      out.corruption[static_cast<size_t>(b) * out.length + s] = mode;
      for (int f = 0; f < out.fields; ++f) {
        const size_t i = out.index(b, s, f);
        out.loss_mask[i] = 1;
        if (mode == Corruption::kMasked) {
          out.input_ids[i] = kMaskId;
        } else if (mode == Corruption::kRandom) {
          const int content = field_sizes[f] - kFirstContentId;
          out.input_ids[i] = kFirstContentId + static_cast<int32_t>(rng.below(static_cast<uint64_t>(content)));
        }
      }
    }
  }
  return out;
}

}  // namespace midibert
