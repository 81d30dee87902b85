#include <gtest/gtest.h>

#include "midibert/error.h"
#include "midibert/masking.h"
#include "test_util.h"

using namespace midibert;

namespace {

std::vector<ChunkedSequence> random_chunks(Representation rep, int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<ChunkedSequence> out;
  while (static_cast<int>(out.size()) < n) {
    const Score s = fixtures::random_score(rng, {.max_bars = 16, .max_notes = 200});
    for (auto& c : encode_and_chunk(s, rep, 128)) {
      if (c.content_length() > 0 && static_cast<int>(out.size()) < n) out.push_back(std::move(c));
    }
  }
  return out;
}

}  // namespace

TEST(Corrupt, AllPadSelectsNothing) {
  for (Representation rep : {Representation::kRemi, Representation::kCp}) {
    ChunkedSequence c;
    c.representation = rep;
    c.ids.assign(64 * c.num_fields(), kPadId);
    const MaskedBatch m = corrupt(std::vector<ChunkedSequence>{c}, 1);
    EXPECT_EQ(m.num_selected(), 0u);
    EXPECT_EQ(m.input_ids, c.ids);
  }
}

TEST(Corrupt, EmptyBatchThrows) { EXPECT_THROW(corrupt(std::vector<ChunkedSequence>{}, 0), DataError); }

TEST(Corrupt, MixedLengthsThrow) {
  auto chunks = random_chunks(Representation::kRemi, 2, 1);
  chunks[1].ids.resize(chunks[1].ids.size() / 2);
  EXPECT_THROW(corrupt(chunks, 0), DataError);
}

TEST(Corrupt, Deterministic) {
  const auto chunks = random_chunks(Representation::kCp, 8, 2);
  const MaskedBatch a = corrupt(chunks, 99);
  const MaskedBatch b = corrupt(chunks, 99);
  EXPECT_EQ(a.input_ids, b.input_ids);
  EXPECT_EQ(a.loss_mask, b.loss_mask);
  EXPECT_EQ(a.corruption, b.corruption);
  const MaskedBatch c = corrupt(chunks, 100);
  EXPECT_NE(a.loss_mask, c.loss_mask);
}

TEST(Corrupt, Invariants) {
  for (Representation rep : {Representation::kRemi, Representation::kCp}) {
    const auto chunks = random_chunks(rep, 16, 3);
    const MaskedBatch m = corrupt(chunks, 7);
    const Vocabulary& v = vocab(rep);
    for (int b = 0; b < m.batch; ++b) {
      for (int s = 0; s < m.length; ++s) {
        const bool pad = chunks[b].is_pad(s);
        if (pad) EXPECT_FALSE(m.selected(b, s));
        for (int f = 0; f < m.fields; ++f) {
          const size_t i = m.index(b, s, f);
          // selection is per step: every field agrees
          EXPECT_EQ(m.loss_mask[i], m.loss_mask[m.index(b, s, 0)]);
          EXPECT_EQ(m.target_ids[i], chunks[b].id(s, f));
          switch (m.corruption[static_cast<size_t>(b) * m.length + s]) {
            case Corruption::kNone:
            case Corruption::kKept:
              EXPECT_EQ(m.input_ids[i], chunks[b].id(s, f));
              break;
            case Corruption::kMasked:
              EXPECT_EQ(m.input_ids[i], kMaskId);
              break;
            case Corruption::kRandom:
              EXPECT_GE(m.input_ids[i], kFirstContentId);
              EXPECT_LT(m.input_ids[i], v.field_size(f));
              break;
          }
        }
        EXPECT_EQ(m.selected(b, s), m.corruption[static_cast<size_t>(b) * m.length + s] != Corruption::kNone);
      }
    }
  }
}

TEST(Corrupt, Truncated) {
  const auto chunks = random_chunks(Representation::kCp, 4, 5);
  const MaskedBatch m = corrupt(chunks, 1);
  const MaskedBatch t = m.truncated(10);
  EXPECT_EQ(t.length, 10);
  for (int b = 0; b < m.batch; ++b) {
    for (int s = 0; s < 10; ++s) {
      for (int f = 0; f < m.fields; ++f) EXPECT_EQ(t.input_ids[t.index(b, s, f)], m.input_ids[m.index(b, s, f)]);
    }
  }
}
