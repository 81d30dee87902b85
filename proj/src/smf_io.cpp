#include "midibert/smf_io.h"

#include <algorithm>
#include <array>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <tuple>
#include <utility>

#include "midibert/error.h"

namespace midibert {
namespace {

[[noreturn]] void parse_error(size_t offset, const std::string& what) {
  std::ostringstream os;
  os << "SMF parse error at byte offset " << offset << ": " << what;
  throw DataError(os.str());
}

// Bounds-checked big-endian cursor over [pos, end).
class ByteReader {
 public:
  ByteReader(std::span<const uint8_t> bytes, size_t pos, size_t end)
      : bytes_(bytes), pos_(pos), end_(end) {}

  size_t pos() const { return pos_; }
  bool done() const { return pos_ >= end_; }

  uint8_t u8() {
    if (pos_ >= end_) parse_error(pos_, "unexpected end of data");
    return bytes_[pos_++];
  }
  uint8_t peek() const {
    if (pos_ >= end_) parse_error(pos_, "unexpected end of data");
    return bytes_[pos_];
  }
  uint32_t be16() {
    uint32_t v = u8();
    return (v << 8) | u8();
  }
  uint32_t be32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | u8();
    return v;
  }
  uint32_t vlq() {
    const size_t start = pos_;
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const uint8_t b = u8();
      v = (v << 7) | (b & 0x7F);
      if ((b & 0x80) == 0) return v;
    }
    parse_error(start, "variable-length quantity longer than 4 bytes");
  }
  void skip(size_t n) {
    if (n > end_ - pos_) parse_error(pos_, "length runs past end of chunk");
    pos_ += n;
  }
  std::span<const uint8_t> take(size_t n) {
    if (n > end_ - pos_) parse_error(pos_, "length runs past end of chunk");
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

 private:
  std::span<const uint8_t> bytes_;
  size_t pos_;
  size_t end_;
};

struct PendingNote {
  int64_t onset;
  int velocity;
  size_t offset;
};

void parse_track(ByteReader& r, SmfContents& out) {
  int64_t tick = 0;
  uint8_t running = 0;
  // FIFO per (channel, pitch): the earliest open note-on is closed first.
  std::map<std::pair<int, int>, std::deque<PendingNote>> open;

  while (!r.done()) {
    tick += r.vlq();
    const size_t event_offset = r.pos();
    uint8_t status = r.peek();
    if (status & 0x80) {
      r.u8();
    } else {
      if (running == 0) parse_error(event_offset, "data byte with no running status");
      status = running;
    }

    if (status < 0xF0) {
      running = status;
      const int kind = status & 0xF0;
      const int channel = status & 0x0F;
      const int data1 = r.u8();
      const int data2 = (kind == 0xC0 || kind == 0xD0) ? 0 : r.u8();
      if ((data1 | data2) & 0x80) parse_error(event_offset, "channel message data byte >= 0x80");
      const bool note_on = kind == 0x90 && data2 > 0;
      const bool note_off = kind == 0x80 || (kind == 0x90 && data2 == 0);
      if (note_on) {
        open[{channel, data1}].push_back({tick, data2, event_offset});
      } else if (note_off) {
        auto it = open.find({channel, data1});
        if (it == open.end() || it->second.empty()) continue;  // stray note-off
        const PendingNote p = it->second.front();
        it->second.pop_front();
        if (tick > p.onset) out.notes.push_back({p.onset, tick - p.onset, data1, p.velocity});
      }
      continue;
    }

    running = 0;
    if (status == 0xFF) {
      const uint8_t type = r.u8();
      const uint32_t len = r.vlq();
      auto data = r.take(len);
      if (type == 0x2F) {
        out.end_tick = std::max(out.end_tick, tick);
        break;
      }
      if (type == 0x06 && len == 3 && std::equal(data.begin(), data.end(), "end")) out.end_marker_tick = tick;
      if (type == 0x58) {
        if (len < 2) parse_error(event_offset, "time signature meta event too short");
        if (data[1] > 6) parse_error(event_offset, "time signature denominator exponent too large");
        out.time_signatures.push_back({tick, data[0], 1 << data[1]});
      }
    } else if (status == 0xF0 || status == 0xF7) {
      r.skip(r.vlq());
    } else {
      parse_error(event_offset, "unsupported status byte in file");
    }
  }
  out.end_tick = std::max(out.end_tick, tick);

  for (const auto& [key, pending] : open) {
    if (!pending.empty()) {
      std::ostringstream os;
      os << "unpaired note-on (channel " << key.first << ", pitch " << key.second << ")";
      parse_error(pending.front().offset, os.str());
    }
  }
}

}  // namespace

SmfContents parse_smf(std::span<const uint8_t> bytes) {
  SmfContents out;
  ByteReader head(bytes, 0, bytes.size());
  if (bytes.size() < 14) parse_error(0, "file shorter than a header chunk");
  const auto magic = head.take(4);
  if (!std::equal(magic.begin(), magic.end(), "MThd")) parse_error(0, "missing MThd magic");
  const uint32_t header_len = head.be32();
  if (header_len < 6) parse_error(4, "header chunk shorter than 6 bytes");
  if (header_len > bytes.size() - 8) parse_error(4, "header chunk length exceeds file size");
  const uint32_t format = head.be16();
  const uint32_t num_tracks = head.be16();
  const uint32_t division = head.be16();
  if (format > 1) parse_error(8, "only SMF formats 0 and 1 are supported");
  if (format == 0 && num_tracks != 1) parse_error(10, "format 0 requires exactly one track");
  if (division & 0x8000) parse_error(12, "SMPTE time division is not supported");
  if (division == 0) parse_error(12, "ticks per quarter must be positive");
  out.ticks_per_quarter = static_cast<int>(division);

  size_t pos = 8 + header_len;
  uint32_t tracks_read = 0;
  while (tracks_read < num_tracks) {
    if (pos >= bytes.size()) parse_error(pos, "file ends before all declared tracks");
    ByteReader chunk(bytes, pos, bytes.size());
    const auto id = chunk.take(4);
    const uint32_t len = chunk.be32();
    const size_t body = pos + 8;
    if (len > bytes.size() - body) parse_error(pos, "truncated track: chunk length exceeds file size");
    if (std::equal(id.begin(), id.end(), "MTrk")) {
      ByteReader track(bytes, body, body + len);
      parse_track(track, out);
      ++tracks_read;
    }
    pos = body + len;
  }

  std::sort(out.notes.begin(), out.notes.end(), [](const RawNote& a, const RawNote& b) {
    return std::tie(a.onset_ticks, a.pitch, a.duration_ticks, a.velocity) <
           std::tie(b.onset_ticks, b.pitch, b.duration_ticks, b.velocity);
  });
  std::stable_sort(out.time_signatures.begin(), out.time_signatures.end(),
                   [](const TimeSignature& a, const TimeSignature& b) { return a.tick < b.tick; });
  return out;
}

SmfContents read_smf_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open MIDI file '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_smf(bytes);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

bool is_four_four(const SmfContents& smf) {
  return std::all_of(smf.time_signatures.begin(), smf.time_signatures.end(),
                     [](const TimeSignature& ts) { return ts.numerator == 4 && ts.denominator == 4; });
}

int velocity_class_of(int velocity) {
  if (velocity < 0 || velocity > 127) {
    throw DataError("velocity " + std::to_string(velocity) + " outside 0..127");
  }
  if (velocity < 32) return 0;
  if (velocity >= 96) return 5;
  return (velocity - 32) / 16 + 1;
}

int velocity_of_class(int velocity_class) {
  static constexpr std::array<int, kNumVelocityClasses> kLow = {0, 32, 48, 64, 80, 96};
  static constexpr std::array<int, kNumVelocityClasses> kHigh = {31, 47, 63, 79, 95, 127};
  if (velocity_class < 0 || velocity_class >= kNumVelocityClasses) {
    throw DataError("velocity class " + std::to_string(velocity_class) + " outside 0..5");
  }
  return (kLow[velocity_class] + kHigh[velocity_class] + 1) / 2;
}

Score quantize(std::span<const RawNote> raw, int ticks_per_quarter, const QuantizeOptions& options,
               int64_t end_tick) {
  if (ticks_per_quarter <= 0) throw DataError("ticks per quarter must be positive");
  const int64_t tpq = ticks_per_quarter;
  Score score;
  score.source_id = options.source_id;
  score.notes.reserve(raw.size());
  int last_bar = -1;
  for (const RawNote& r : raw) {
    // round(onset / (tpq/4)) and round(duration / (tpq/8)), halves upward
    const int64_t grid = (8 * r.onset_ticks + tpq) / (2 * tpq);
    const int64_t units = (16 * r.duration_ticks + tpq) / (2 * tpq);
    QuantNote n;
    n.bar = static_cast<int>(grid / kSubBeatsPerBar);
    n.sub_beat = static_cast<int>(grid % kSubBeatsPerBar) + 1;
    n.pitch = std::clamp(r.pitch, kMinPitch, kMaxPitch);
    n.duration = static_cast<int>(std::clamp<int64_t>(units, kMinDuration, kMaxDuration));
    if (options.keep_velocity) n.velocity_class = velocity_class_of(r.velocity);
    last_bar = std::max(last_bar, n.bar);
    score.notes.push_back(n);
  }
  const int64_t end_bars = (2 * end_tick + 4 * tpq) / (8 * tpq);
  score.num_bars = std::max<int64_t>(last_bar + 1, end_bars);
  sort_notes(score);
  return score;
}

Score quantize(const SmfContents& smf, const QuantizeOptions& options, bool force_four_four) {
  if (!force_four_four && !is_four_four(smf)) {
    throw DataError("'" + options.source_id + "' is not in 4/4 (use --force-four-four to reinterpret)");
  }
  return quantize(smf.notes, smf.ticks_per_quarter, options, smf.end_marker_tick.value_or(smf.end_tick));
}

namespace {

void put_vlq(std::vector<uint8_t>& out, uint32_t v) {
  uint8_t buf[5];
  int n = 0;
  buf[n++] = v & 0x7F;
  while (v >>= 7) buf[n++] = 0x80 | (v & 0x7F);
  while (n) out.push_back(buf[--n]);
}

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<uint8_t>(v >> s));
}

struct NoteEvent {
  int64_t tick;
  int on;  // 0 = off, 1 = on; offs sort first at equal ticks
  int channel;
  int pitch;
  int velocity;
  bool operator<(const NoteEvent& o) const {
    return std::tie(tick, on, channel, pitch) < std::tie(o.tick, o.on, o.channel, o.pitch);
  }
};

}  // namespace

std::vector<uint8_t> write_smf(const Score& score, int default_velocity) {
  constexpr int64_t kSubBeatTicks = kWriteTicksPerQuarter / 4;
  constexpr int64_t kUnitTicks = kWriteTicksPerQuarter / 8;
  constexpr int64_t kBarTicks = kWriteTicksPerQuarter * 4;
  default_velocity = std::clamp(default_velocity, 1, 127);

  std::vector<NoteEvent> events;
  events.reserve(score.notes.size() * 2);
  std::array<std::array<int64_t, 128>, 16> busy_until{};
  for (auto& row : busy_until) row.fill(-1);

  for (const QuantNote& n : score.notes) {
    const int64_t on = static_cast<int64_t>(n.onset()) * kSubBeatTicks;
    const int64_t off = on + static_cast<int64_t>(n.duration) * kUnitTicks;
    const int vel = n.velocity_class ? velocity_of_class(*n.velocity_class) : default_velocity;
    const int pitch = std::clamp(n.pitch, 0, 127);
    int channel = 0;
    for (int c = 0; c < 16; ++c) {
      if (c == 9) continue;  // percussion channel
      if (busy_until[c][pitch] <= on) {
        channel = c;
        break;
      }
    }
    busy_until[channel][pitch] = std::max(busy_until[channel][pitch], off);
    events.push_back({on, 1, channel, pitch, vel});
    events.push_back({off, 0, channel, pitch, 0});
  }
  std::sort(events.begin(), events.end());

  std::vector<uint8_t> track;
  // tempo 120 bpm and 4/4
  for (uint8_t b : {0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20}) track.push_back(b);
  for (uint8_t b : {0x00, 0xFF, 0x58, 0x04, 0x04, 0x02, 0x18, 0x08}) track.push_back(b);
  const int64_t bar_end = static_cast<int64_t>(score.num_bars) * kBarTicks;
  bool marked = false;
  int64_t now = 0;
  auto put_marker = [&] {
    put_vlq(track, static_cast<uint32_t>(bar_end - now));
    now = bar_end;
    for (uint8_t b : {0xFF, 0x06, 0x03, 0x65, 0x6E, 0x64}) track.push_back(b);  // "end"
    marked = true;
  };
  for (const NoteEvent& e : events) {
    if (!marked && e.tick > bar_end) put_marker();
    put_vlq(track, static_cast<uint32_t>(e.tick - now));
    now = e.tick;
    track.push_back(static_cast<uint8_t>((e.on ? 0x90 : 0x80) | e.channel));
    track.push_back(static_cast<uint8_t>(e.pitch));
    track.push_back(static_cast<uint8_t>(e.on ? e.velocity : 0x40));
  }
  if (!marked) put_marker();
  const int64_t end = now;
  put_vlq(track, static_cast<uint32_t>(end - now));
  for (uint8_t b : {0xFF, 0x2F, 0x00}) track.push_back(b);

  std::vector<uint8_t> out = {'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 0, 0, 1};
  out.push_back(kWriteTicksPerQuarter >> 8);
  out.push_back(kWriteTicksPerQuarter & 0xFF);
  for (char c : {'M', 'T', 'r', 'k'}) out.push_back(static_cast<uint8_t>(c));
  put_be32(out, static_cast<uint32_t>(track.size()));
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

void write_smf_file(const Score& score, const std::string& path, int default_velocity) {
  const auto bytes = write_smf(score, default_velocity);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write MIDI file '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace midibert
