#include "midibert/tokenizer.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "midibert/error.h"

namespace midibert {
namespace {

constexpr int32_t kRemiBar = 2;
constexpr int32_t kRemiSubBeatBase = 2;                     // SubBeat(v) = 2 + v
constexpr int32_t kRemiPitchBase = 19;                      // Pitch(p) = 19 + p - 22
constexpr int32_t kRemiDurationBase = kRemiPitchBase + kNumPitches - 1;  // Duration(d) = 104 + d

constexpr int32_t kCpSubBeatBase = 1;  // sub-beat v -> 1 + v
constexpr int32_t kCpPitchBase = 2;    // pitch p -> 2 + p - 22
constexpr int32_t kCpDurationBase = 1; // duration d -> 1 + d

static_assert(kRemiDurationBase + kMaxDuration + 1 == kRemiVocabSize);
static_assert(kCpFieldSizes[0] + kCpFieldSizes[1] + kCpFieldSizes[2] + kCpFieldSizes[3] == kCpVocabSize);

[[noreturn]] void decode_error(size_t step, const std::string& what) {
  std::ostringstream os;
  os << "decode error at step " << step << ": " << what;
  throw DataError(os.str());
}

void check_range(int v, int lo, int hi, const char* what) {
  if (v < lo || v > hi) {
    std::ostringstream os;
    os << what << " " << v << " outside " << lo << ".." << hi;
    throw DataError(os.str());
  }
}

}  // namespace

std::string to_string(Representation rep) { return rep == Representation::kCp ? "cp" : "remi"; }

Representation parse_representation(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "remi") return Representation::kRemi;
  if (lower == "cp") return Representation::kCp;
  throw UsageError("unknown representation '" + name + "' (expected remi or cp)");
}

// ---------------------------------------------------------------------------
// RemiToken

RemiToken RemiToken::from_id(int32_t id) {
  if (id < 0 || id >= kRemiVocabSize) throw DataError("REMI id " + std::to_string(id) + " out of vocabulary");
  return RemiToken(id);
}

RemiToken RemiToken::bar() { return RemiToken(kRemiBar); }

RemiToken RemiToken::sub_beat(int v) {
  check_range(v, 1, kSubBeatsPerBar, "sub-beat");
  return RemiToken(kRemiSubBeatBase + v);
}

RemiToken RemiToken::pitch(int p) {
  check_range(p, kMinPitch, kMaxPitch, "pitch");
  return RemiToken(kRemiPitchBase + p - kMinPitch);
}

RemiToken RemiToken::duration(int d) {
  check_range(d, kMinDuration, kMaxDuration, "duration");
  return RemiToken(kRemiDurationBase + d);
}

RemiKind RemiToken::kind() const {
  if (id_ == kPadId) return RemiKind::kPad;
  if (id_ == kMaskId) return RemiKind::kMask;
  if (id_ == kRemiBar) return RemiKind::kBar;
  if (id_ < kRemiPitchBase) return RemiKind::kSubBeat;
  if (id_ <= kRemiDurationBase) return RemiKind::kPitch;
  return RemiKind::kDuration;
}

int RemiToken::value() const {
  switch (kind()) {
    case RemiKind::kSubBeat: return id_ - kRemiSubBeatBase;
    case RemiKind::kPitch: return id_ - kRemiPitchBase + kMinPitch;
    case RemiKind::kDuration: return id_ - kRemiDurationBase;
    default: return 0;
  }
}

std::string RemiToken::name() const {
  switch (kind()) {
    case RemiKind::kPad: return "Pad";
    case RemiKind::kMask: return "Mask";
    case RemiKind::kBar: return "Bar";
    case RemiKind::kSubBeat: return "SubBeat(" + std::to_string(value()) + ")";
    case RemiKind::kPitch: return "Pitch(" + std::to_string(value()) + ")";
    case RemiKind::kDuration: return "Duration(" + std::to_string(value()) + ")";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// SuperToken

SuperToken SuperToken::from_ids(const std::array<int32_t, kCpFields>& ids) {
  for (int f = 0; f < kCpFields; ++f) {
    if (ids[f] < 0 || ids[f] >= kCpFieldSizes[f]) {
      throw DataError("CP field " + std::to_string(f) + " id " + std::to_string(ids[f]) + " out of vocabulary");
    }
  }
  return SuperToken(ids);
}

SuperToken SuperToken::note(bool new_bar, int sub_beat, int pitch, int duration) {
  check_range(sub_beat, 1, kSubBeatsPerBar, "sub-beat");
  check_range(pitch, kMinPitch, kMaxPitch, "pitch");
  check_range(duration, kMinDuration, kMaxDuration, "duration");
  return SuperToken({new_bar ? kBarNew : kBarCont, kCpSubBeatBase + sub_beat, kCpPitchBase + pitch - kMinPitch,
                     kCpDurationBase + duration});
}

bool SuperToken::is_pad() const {
  return std::all_of(ids_.begin(), ids_.end(), [](int32_t v) { return v == kPadId; });
}

bool SuperToken::is_mask() const {
  return std::all_of(ids_.begin(), ids_.end(), [](int32_t v) { return v == kMaskId; });
}

bool SuperToken::is_empty_bar() const { return *this == empty_bar(); }

bool SuperToken::is_note() const {
  return std::all_of(ids_.begin(), ids_.end(), [](int32_t v) { return v >= kFirstContentId; });
}

int SuperToken::sub_beat() const { return ids_[kSubBeatField] - kCpSubBeatBase; }
int SuperToken::pitch() const { return ids_[kPitchField] - kCpPitchBase + kMinPitch; }
int SuperToken::duration() const { return ids_[kDurationField] - kCpDurationBase; }

std::string SuperToken::name() const {
  const Vocabulary& v = vocab(Representation::kCp);
  std::string out = "(";
  for (int f = 0; f < kCpFields; ++f) {
    if (f) out += ", ";
    out += v.name(f, ids_[f]);
  }
  return out + ")";
}

// ---------------------------------------------------------------------------
// Vocabulary

int Vocabulary::total_size() const {
  int total = 0;
  for (const auto& f : names_) total += static_cast<int>(f.size());
  return total;
}

int32_t Vocabulary::id(int field, const std::string& name) const {
  auto it = index_.at(field).find(name);
  if (it == index_[field].end()) throw DataError("unknown token '" + name + "'");
  return it->second;
}

void Vocabulary::rebuild_index() {
  index_.assign(names_.size(), {});
  for (size_t f = 0; f < names_.size(); ++f) {
    for (size_t i = 0; i < names_[f].size(); ++i) {
      if (!index_[f].emplace(names_[f][i], static_cast<int32_t>(i)).second) {
        throw DataError("duplicate token '" + names_[f][i] + "' in vocabulary");
      }
    }
  }
}

const Vocabulary& vocab(Representation rep) {
  static const Vocabulary remi = [] {
    Vocabulary v;
    v.rep_ = Representation::kRemi;
    v.names_.resize(1);
    for (int32_t id = 0; id < kRemiVocabSize; ++id) v.names_[0].push_back(RemiToken::from_id(id).name());
    v.rebuild_index();
    return v;
  }();
  static const Vocabulary cp = [] {
    Vocabulary v;
    v.rep_ = Representation::kCp;
    v.names_.resize(kCpFields);
    static const char* kFieldNames[kCpFields] = {"Bar", "SubBeat", "Pitch", "Duration"};
    for (int f = 0; f < kCpFields; ++f) {
      const std::string base = kFieldNames[f];
      auto& names = v.names_[f];
      names.push_back(base + "(Pad)");
      names.push_back(base + "(Mask)");
      if (f == kBarField) {
        names.push_back("Bar(New)");
        names.push_back("Bar(Cont)");
      } else if (f == kSubBeatField) {
        for (int s = 1; s <= kSubBeatsPerBar; ++s) names.push_back(base + "(" + std::to_string(s) + ")");
      } else if (f == kPitchField) {
        for (int p = kMinPitch; p <= kMaxPitch; ++p) names.push_back(base + "(" + std::to_string(p) + ")");
      } else {
        for (int d = kMinDuration; d <= kMaxDuration; ++d) names.push_back(base + "(" + std::to_string(d) + ")");
      }
    }
    v.rebuild_index();
    return v;
  }();
  return rep == Representation::kCp ? cp : remi;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary '" + path + "'");
  int32_t offset = 0;
  for (const auto& field : names_) {
    for (size_t i = 0; i < field.size(); ++i) out << field[i] << '\t' << offset + static_cast<int32_t>(i) << '\n';
    offset += static_cast<int32_t>(field.size());
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary '" + path + "'");
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("vocabulary line without tab: '" + line + "'");
    const int32_t id = std::stoi(line.substr(tab + 1));
    if (id != static_cast<int32_t>(names.size())) throw DataError("vocabulary ids not dense and sorted");
    names.push_back(line.substr(0, tab));
  }
  Vocabulary v;
  if (static_cast<int>(names.size()) == kRemiVocabSize) {
    v.rep_ = Representation::kRemi;
    v.names_ = {names};
  } else if (static_cast<int>(names.size()) == kCpVocabSize) {
    v.rep_ = Representation::kCp;
    auto it = names.begin();
    for (int size : kCpFieldSizes) {
      v.names_.emplace_back(it, it + size);
      it += size;
    }
  } else {
    throw DataError("vocabulary has " + std::to_string(names.size()) + " entries; expected 169 or 176");
  }
  v.rebuild_index();
  return v;
}

std::vector<double> cp_field_weights() {
  std::vector<double> w;
  for (int s : kCpFieldSizes) w.push_back(static_cast<double>(s) / kCpVocabSize);
  return w;
}

std::vector<double> remi_class_weights() {
  std::vector<double> w(kRemiVocabSize, 0.0);
  for (int32_t id = kFirstContentId; id < kRemiVocabSize; ++id) {
    int type_size = 0;
    switch (RemiToken::from_id(id).kind()) {
      case RemiKind::kBar: type_size = 1; break;
      case RemiKind::kSubBeat: type_size = kSubBeatsPerBar; break;
      case RemiKind::kPitch: type_size = kNumPitches; break;
      case RemiKind::kDuration: type_size = kMaxDuration; break;
      default: break;
    }
    w[id] = static_cast<double>(type_size) / kRemiVocabSize;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Codecs

std::vector<RemiToken> encode_remi(const Score& score) {
  std::vector<RemiToken> out;
  out.reserve(score.notes.size() * 3 + static_cast<size_t>(score.num_bars));
  size_t next = 0;
  for (int bar = 0; bar < score.num_bars; ++bar) {
    out.push_back(RemiToken::bar());
    for (; next < score.notes.size() && score.notes[next].bar == bar; ++next) {
      const QuantNote& n = score.notes[next];
      out.push_back(RemiToken::sub_beat(n.sub_beat));
      out.push_back(RemiToken::pitch(n.pitch));
      out.push_back(RemiToken::duration(n.duration));
    }
  }
  return out;
}

std::vector<SuperToken> encode_cp(const Score& score) {
  std::vector<SuperToken> out;
  out.reserve(score.notes.size() + static_cast<size_t>(score.num_bars));
  size_t next = 0;
  for (int bar = 0; bar < score.num_bars; ++bar) {
    bool first = true;
    for (; next < score.notes.size() && score.notes[next].bar == bar; ++next) {
      const QuantNote& n = score.notes[next];
      out.push_back(SuperToken::note(first, n.sub_beat, n.pitch, n.duration));
      first = false;
    }
    if (first) out.push_back(SuperToken::empty_bar());
  }
  return out;
}

Score decode_remi(std::span<const RemiToken> tokens, const std::string& source_id) {
  Score score;
  score.source_id = source_id;
  // 0: expecting Bar or SubBeat, 1: expecting Pitch, 2: expecting Duration
  int state = 0;
  QuantNote pending;
  for (size_t i = 0; i < tokens.size(); ++i) {
    const RemiToken t = tokens[i];
    const RemiKind kind = t.kind();
    if (kind == RemiKind::kPad || kind == RemiKind::kMask) continue;
    switch (state) {
      case 0:
        if (kind == RemiKind::kBar) {
          ++score.num_bars;
        } else if (kind == RemiKind::kSubBeat) {
          if (score.num_bars == 0) decode_error(i, "SubBeat before the first Bar");
          pending = QuantNote{};
          pending.bar = score.num_bars - 1;
          pending.sub_beat = t.value();
          state = 1;
        } else {
          decode_error(i, t.name() + " without a preceding SubBeat");
        }
        break;
      case 1:
        if (kind != RemiKind::kPitch) decode_error(i, "expected Pitch after SubBeat, got " + t.name());
        pending.pitch = t.value();
        state = 2;
        break;
      case 2:
        if (kind != RemiKind::kDuration) decode_error(i, "expected Duration after Pitch, got " + t.name());
        pending.duration = t.value();
        score.notes.push_back(pending);
        state = 0;
        break;
    }
  }
  if (state != 0) decode_error(tokens.size(), "sequence ends inside a note group");
  sort_notes(score);
  return score;
}

Score decode_cp(std::span<const SuperToken> tokens, const std::string& source_id) {
  Score score;
  score.source_id = source_id;
  for (size_t i = 0; i < tokens.size(); ++i) {
    const SuperToken& t = tokens[i];
    if (t.is_pad() || t.is_mask()) continue;
    if (t.is_empty_bar()) {
      ++score.num_bars;
      continue;
    }
    if (!t.is_note()) decode_error(i, "super token mixes content with Pad or Mask: " + t.name());
    if (t.new_bar()) {
      ++score.num_bars;
    } else if (score.num_bars == 0) {
      decode_error(i, "Bar(Cont) before the first Bar(New)");
    }
    QuantNote n;
    n.bar = score.num_bars - 1;
    n.sub_beat = t.sub_beat();
    n.pitch = t.pitch();
    n.duration = t.duration();
    score.notes.push_back(n);
  }
  sort_notes(score);
  return score;
}

// ---------------------------------------------------------------------------
// Chunking

int ChunkedSequence::content_length() const {
  for (int s = length(); s > 0; --s) {
    if (!is_pad(s - 1)) return s;
  }
  return 0;
}

std::vector<ChunkedSequence> chunk_remi(std::span<const RemiToken> tokens, const std::string& piece_id,
                                        int length) {
  std::vector<ChunkedSequence> out;
  int32_t note = 0;
  for (size_t start = 0; start < tokens.size(); start += static_cast<size_t>(length)) {
    ChunkedSequence c;
    c.representation = Representation::kRemi;
    c.piece_id = piece_id;
    c.chunk_index = static_cast<int32_t>(out.size());
    c.ids.assign(static_cast<size_t>(length), kPadId);
    const size_t end = std::min(tokens.size(), start + static_cast<size_t>(length));
    for (size_t i = start; i < end; ++i) {
      const int32_t step = static_cast<int32_t>(i - start);
      c.ids[step] = tokens[i].id();
      if (tokens[i].kind() == RemiKind::kPitch) c.note_positions.push_back({step, note++});
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<ChunkedSequence> chunk_cp(std::span<const SuperToken> tokens, const std::string& piece_id, int length) {
  std::vector<ChunkedSequence> out;
  int32_t note = 0;
  for (size_t start = 0; start < tokens.size(); start += static_cast<size_t>(length)) {
    ChunkedSequence c;
    c.representation = Representation::kCp;
    c.piece_id = piece_id;
    c.chunk_index = static_cast<int32_t>(out.size());
    c.ids.assign(static_cast<size_t>(length) * kCpFields, kPadId);
    const size_t end = std::min(tokens.size(), start + static_cast<size_t>(length));
    for (size_t i = start; i < end; ++i) {
      const int32_t step = static_cast<int32_t>(i - start);
      std::copy(tokens[i].ids().begin(), tokens[i].ids().end(), c.ids.begin() + step * kCpFields);
      if (tokens[i].is_note()) c.note_positions.push_back({step, note++});
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<ChunkedSequence> encode_and_chunk(const Score& score, Representation rep, int length) {
  const std::string& id = score.source_id;
  if (rep == Representation::kCp) return chunk_cp(encode_cp(score), id, length);
  return chunk_remi(encode_remi(score), id, length);
}

std::vector<RemiToken> unchunk_remi(std::span<const ChunkedSequence> chunks) {
  std::vector<RemiToken> out;
  for (const auto& c : chunks) {
    for (int s = 0; s < c.length(); ++s) {
      if (!c.is_pad(s)) out.push_back(RemiToken::from_id(c.id(s)));
    }
  }
  return out;
}

std::vector<SuperToken> unchunk_cp(std::span<const ChunkedSequence> chunks) {
  std::vector<SuperToken> out;
  for (const auto& c : chunks) {
    for (int s = 0; s < c.length(); ++s) {
      if (c.is_pad(s)) continue;
      out.push_back(SuperToken::from_ids({c.id(s, 0), c.id(s, 1), c.id(s, 2), c.id(s, 3)}));
    }
  }
  return out;
}

int bars_in_chunk(const ChunkedSequence& chunk) {
  const int32_t marker = chunk.representation == Representation::kCp ? kBarNew : kRemiBar;
  int bars = 0;
  for (int s = 0; s < chunk.length(); ++s) bars += chunk.id(s, 0) == marker;
  return bars;
}

}  // namespace midibert
