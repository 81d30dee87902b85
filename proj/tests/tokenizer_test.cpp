#include <gtest/gtest.h>

#include <set>

#include "midibert/error.h"
#include "midibert/tokenizer.h"
#include "test_util.h"

using namespace midibert;

namespace {

Score one_bar(std::vector<QuantNote> notes) {
  Score s;
  s.num_bars = 1;
  s.notes = std::move(notes);
  return s;
}

}  // namespace

TEST(Vocab, Sizes) {
  EXPECT_EQ(vocab(Representation::kRemi).total_size(), 169);
  EXPECT_EQ(vocab(Representation::kRemi).num_fields(), 1);
  const Vocabulary& cp = vocab(Representation::kCp);
  ASSERT_EQ(cp.num_fields(), 4);
  EXPECT_EQ(cp.field_size(0), 4);
  EXPECT_EQ(cp.field_size(1), 18);
  EXPECT_EQ(cp.field_size(2), 88);
  EXPECT_EQ(cp.field_size(3), 66);
  EXPECT_EQ(cp.total_size(), 176);
}

TEST(Vocab, NamesAreBijective) {
  for (Representation rep : {Representation::kRemi, Representation::kCp}) {
    const Vocabulary& v = vocab(rep);
    for (int f = 0; f < v.num_fields(); ++f) {
      std::set<std::string> seen;
      for (int32_t id = 0; id < v.field_size(f); ++id) {
        EXPECT_TRUE(seen.insert(v.name(f, id)).second);
        EXPECT_EQ(v.id(f, v.name(f, id)), id);
      }
    }
    EXPECT_THROW(v.id(0, "NoSuchToken"), DataError);
  }
}

TEST(Vocab, SaveLoad) {
  const auto dir = fixtures::temp_dir("vocab");
  for (Representation rep : {Representation::kRemi, Representation::kCp}) {
    const std::string path = (dir / (to_string(rep) + ".tsv")).string();
    vocab(rep).save(path);
    EXPECT_EQ(Vocabulary::load(path), vocab(rep));
  }
}

TEST(Vocab, IdLayout) {
  EXPECT_EQ(RemiToken::bar().id(), 2);
  EXPECT_EQ(RemiToken::sub_beat(1).id(), 3);
  EXPECT_EQ(RemiToken::sub_beat(16).id(), 18);
  EXPECT_EQ(RemiToken::pitch(22).id(), 19);
  EXPECT_EQ(RemiToken::pitch(107).id(), 104);
  EXPECT_EQ(RemiToken::duration(1).id(), 105);
  EXPECT_EQ(RemiToken::duration(64).id(), 168);
  EXPECT_THROW(RemiToken::from_id(169), DataError);
}

TEST(Weights, CpFields) {
  const auto w = cp_field_weights();
  ASSERT_EQ(w.size(), 4u);
  EXPECT_DOUBLE_EQ(w[0], 4.0 / 176);
  EXPECT_DOUBLE_EQ(w[1], 18.0 / 176);
  EXPECT_DOUBLE_EQ(w[2], 88.0 / 176);
  EXPECT_DOUBLE_EQ(w[3], 66.0 / 176);
}

TEST(Weights, RemiByTokenType) {
  const auto w = remi_class_weights();
  ASSERT_EQ(w.size(), 169u);
  EXPECT_EQ(w[kPadId], 0.0);
  EXPECT_EQ(w[kMaskId], 0.0);
  EXPECT_DOUBLE_EQ(w[RemiToken::bar().id()], 1.0 / 169);
  EXPECT_DOUBLE_EQ(w[RemiToken::sub_beat(5).id()], 16.0 / 169);
  EXPECT_DOUBLE_EQ(w[RemiToken::pitch(60).id()], 86.0 / 169);
  EXPECT_DOUBLE_EQ(w[RemiToken::duration(8).id()], 64.0 / 169);
}

TEST(Remi, Empty) {
  EXPECT_TRUE(encode_remi(Score{}).empty());
  EXPECT_EQ(decode_remi(std::vector<RemiToken>{}), Score{});
}

TEST(Remi, SingleNote) {
  const auto t = encode_remi(one_bar({{0, 1, 60, 4}}));
  const std::vector<RemiToken> want = {RemiToken::bar(), RemiToken::sub_beat(1), RemiToken::pitch(60),
                                       RemiToken::duration(4)};
  EXPECT_EQ(t, want);
}

TEST(Remi, GrammarErrorNamesStep) {
  const std::vector<RemiToken> bad = {RemiToken::bar(), RemiToken::pitch(60)};
  try {
    decode_remi(bad);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

TEST(Cp, Empty) {
  EXPECT_TRUE(encode_cp(Score{}).empty());
  EXPECT_EQ(decode_cp(std::vector<SuperToken>{}), Score{});
}

TEST(Cp, TwoNotesOneBar) {
  const auto t = encode_cp(one_bar({{0, 1, 60, 4}, {0, 9, 64, 8}}));
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0], SuperToken::note(true, 1, 60, 4));
  EXPECT_EQ(t[1], SuperToken::note(false, 9, 64, 8));
  EXPECT_EQ(t[0][kBarField], kBarNew);
  EXPECT_EQ(t[1][kBarField], kBarCont);
}

TEST(Cp, EmptyBarMarker) {
  Score s;
  s.num_bars = 3;
  s.notes = {{2, 1, 60, 4}};
  const auto t = encode_cp(s);
  ASSERT_EQ(t.size(), 3u);
  EXPECT_TRUE(t[0].is_empty_bar());
  EXPECT_TRUE(t[1].is_empty_bar());
  EXPECT_EQ(t[0], SuperToken::from_ids({kBarNew, kPadId, kPadId, kPadId}));
  EXPECT_TRUE(t[2].is_note());
}

// Two bars of three notes each: 2 Bar tokens + 6 * 3 note tokens against 6
// super tokens.
TEST(Codec, TwentyVersusSix) {
  Score s;
  s.num_bars = 2;
  s.notes = {{0, 1, 72, 8}, {0, 5, 67, 8}, {0, 9, 64, 16}, {1, 1, 60, 8}, {1, 5, 62, 8}, {1, 9, 64, 16}};
  EXPECT_EQ(encode_remi(s).size(), 20u);
  EXPECT_EQ(encode_cp(s).size(), 6u);
}

TEST(Codec, CountIdentities) {
  Rng rng(11);
  for (int i = 0; i < 300; ++i) {
    const Score s = fixtures::random_score(rng);
    std::set<int> bars_with_notes;
    for (const auto& n : s.notes) bars_with_notes.insert(n.bar);
    const size_t empty_bars = s.num_bars - bars_with_notes.size();
    EXPECT_EQ(encode_cp(s).size(), s.notes.size() + empty_bars);
    EXPECT_EQ(encode_remi(s).size(), 3 * s.notes.size() + s.num_bars);
  }
}

TEST(Codec, RoundTripDropsVelocity) {
  Rng rng(12);
  for (int i = 0; i < 300; ++i) {
    const Score s = without_velocity(fixtures::random_score(rng));
    EXPECT_EQ(decode_remi(encode_remi(s)), s);
    EXPECT_EQ(decode_cp(encode_cp(s)), s);
  }
}

TEST(Codec, PadAndMaskSkipped) {
  const Score s = one_bar({{0, 3, 60, 4}});
  auto remi = encode_remi(s);
  remi.push_back(RemiToken::pad());
  remi.insert(remi.begin(), RemiToken::pad());
  EXPECT_EQ(decode_remi(remi), s);
  auto cp = encode_cp(s);
  cp.push_back(SuperToken::pad());
  cp.push_back(SuperToken::mask());
  EXPECT_EQ(decode_cp(cp), s);
}

TEST(Chunk, ExactFit) {
  std::vector<RemiToken> t(512, RemiToken::sub_beat(1));
  const auto c = chunk_remi(t, "p");
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].content_length(), 512);
}

TEST(Chunk, OneOver) {
  std::vector<RemiToken> t(513, RemiToken::sub_beat(1));
  const auto c = chunk_remi(t, "p");
  ASSERT_EQ(c.size(), 2u);
  int pads = 0;
  for (int s = 0; s < c[1].length(); ++s) pads += c[1].is_pad(s);
  EXPECT_EQ(pads, 511);
  EXPECT_EQ(c[1].length(), 512);
  EXPECT_EQ(c[1].chunk_index, 1);
}

TEST(Chunk, UnchunkInverts) {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const Score s = without_velocity(fixtures::random_score(rng, {.max_bars = 12, .max_notes = 120}));
    const auto remi = encode_remi(s);
    EXPECT_EQ(unchunk_remi(chunk_remi(remi, "p", 32)), remi);
    const auto cp = encode_cp(s);
    EXPECT_EQ(unchunk_cp(chunk_cp(cp, "p", 16)), cp);
  }
}

TEST(Chunk, NotePositionsPointAtNotes) {
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    const Score s = fixtures::random_score(rng, {.max_bars = 8, .max_notes = 60});
    for (Representation rep : {Representation::kRemi, Representation::kCp}) {
      const auto chunks = encode_and_chunk(s, rep, 24);
      size_t seen = 0;
      for (const auto& c : chunks) {
        for (const NotePosition& np : c.note_positions) {
          const QuantNote& n = s.notes[np.note_index];
          if (rep == Representation::kRemi) {
            EXPECT_EQ(c.id(np.step), RemiToken::pitch(n.pitch).id());
          } else {
            EXPECT_EQ(c.id(np.step, kPitchField), SuperToken::note(true, n.sub_beat, n.pitch, n.duration)[kPitchField]);
          }
          ++seen;
        }
      }
      EXPECT_EQ(seen, s.notes.size());
    }
  }
}
