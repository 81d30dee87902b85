#include "midibert/corpus.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "midibert/error.h"
#include "midibert/rng.h"

namespace midibert {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Tasks

std::string to_string(Task task) {
  switch (task) {
    case Task::kMelody: return "melody";
    case Task::kVelocity: return "velocity";
    case Task::kComposer: return "composer";
    case Task::kEmotion: return "emotion";
    case Task::kPretrainOnly: return "pretrain";
  }
  return "?";
}

Task parse_task(const std::string& name) {
  for (Task t : {Task::kMelody, Task::kVelocity, Task::kComposer, Task::kEmotion, Task::kPretrainOnly}) {
    if (to_string(t) == name) return t;
  }
  throw UsageError("unknown task '" + name + "' (expected melody, velocity, composer, emotion or pretrain)");
}

int num_classes(Task task) {
  switch (task) {
    case Task::kMelody: return 3;
    case Task::kVelocity: return 6;
    case Task::kComposer: return 8;
    case Task::kEmotion: return 4;
    case Task::kPretrainOnly: return 0;
  }
  return 0;
}

bool is_note_level(Task task) { return task == Task::kMelody || task == Task::kVelocity; }
bool is_sequence_level(Task task) { return task == Task::kComposer || task == Task::kEmotion; }

std::vector<std::string> class_names(Task task) {
  switch (task) {
    case Task::kMelody: return {"M", "B", "A"};
    case Task::kVelocity: return {"pp", "p", "mp", "mf", "f", "ff"};
    case Task::kComposer: return {"C", "Y", "H", "E", "J", "S", "M", "W"};
    case Task::kEmotion: return {"HVHA", "HVLA", "LVHA", "LVLA"};
    case Task::kPretrainOnly: return {};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Labels

void validate(const LabeledPiece& piece) {
  const std::string who = "piece '" + piece.piece_id() + "'";
  const int k = num_classes(piece.task);
  if (is_note_level(piece.task)) {
    if (!piece.note_labels) throw DataError(who + ": " + to_string(piece.task) + " task needs note labels");
    if (piece.sequence_label) throw DataError(who + ": note-level task carries a sequence label");
    if (piece.note_labels->size() != piece.score.notes.size()) {
      throw DataError(who + ": " + std::to_string(piece.note_labels->size()) + " note labels for " +
                      std::to_string(piece.score.notes.size()) + " notes");
    }
    for (int32_t l : *piece.note_labels) {
      if (l < 0 || l >= k) throw DataError(who + ": note label " + std::to_string(l) + " out of range");
    }
  } else if (is_sequence_level(piece.task)) {
    if (!piece.sequence_label) throw DataError(who + ": " + to_string(piece.task) + " task needs a sequence label");
    if (piece.note_labels) throw DataError(who + ": sequence-level task carries note labels");
    if (*piece.sequence_label < 0 || *piece.sequence_label >= k) {
      throw DataError(who + ": sequence label " + std::to_string(*piece.sequence_label) + " out of range");
    }
  } else if (piece.note_labels || piece.sequence_label) {
    throw DataError(who + ": pretrain-only piece carries labels");
  }
}

LabeledPiece attach_note_labels(Score score, std::vector<int32_t> labels, Task task) {
  if (labels.size() != score.notes.size()) {
    throw DataError("piece '" + score.source_id + "': " + std::to_string(labels.size()) + " note labels for " +
                    std::to_string(score.notes.size()) + " notes");
  }
  LabeledPiece p{std::move(score), std::move(labels), std::nullopt, task};
  validate(p);
  return p;
}

LabeledPiece attach_sequence_label(Score score, int32_t label, Task task) {
  LabeledPiece p{std::move(score), std::nullopt, label, task};
  validate(p);
  return p;
}

LabeledPiece velocity_piece(Score score) {
  std::vector<int32_t> labels;
  labels.reserve(score.notes.size());
  for (const auto& n : score.notes) {
    if (!n.velocity_class) throw DataError("piece '" + score.source_id + "': note without velocity");
    labels.push_back(*n.velocity_class);
  }
  return attach_note_labels(std::move(score), std::move(labels), Task::kVelocity);
}

std::vector<LabeledChunk> propagate_to_chunks(const LabeledPiece& piece, std::span<const ChunkedSequence> chunks) {
  std::vector<LabeledChunk> out;
  out.reserve(chunks.size());
  for (const auto& c : chunks) {
    LabeledChunk lc;
    lc.chunk = c;
    if (piece.note_labels) {
      lc.step_labels.assign(static_cast<size_t>(c.length()), kIgnoreLabel);
      for (const auto& np : c.note_positions) {
        if (np.note_index < 0 || static_cast<size_t>(np.note_index) >= piece.note_labels->size()) {
          throw DataError("piece '" + piece.piece_id() + "': chunk references note " +
                          std::to_string(np.note_index) + " beyond the label list");
        }
        lc.step_labels[np.step] = (*piece.note_labels)[np.note_index];
      }
    }
    if (piece.sequence_label) lc.sequence_label = *piece.sequence_label;
    out.push_back(std::move(lc));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "valid") return Split::kValid;
  if (name == "test") return Split::kTest;
  throw UsageError("unknown split '" + name + "' (expected train, valid or test)");
}

std::optional<Split> SplitManifest::split_of(const std::string& piece_id) const {
  for (Split s : {Split::kTrain, Split::kValid, Split::kTest}) {
    const auto& v = ids(s);
    if (std::find(v.begin(), v.end(), piece_id) != v.end()) return s;
  }
  return std::nullopt;
}

const std::vector<std::string>& SplitManifest::ids(Split split) const {
  switch (split) {
    case Split::kTrain: return train;
    case Split::kValid: return valid;
    case Split::kTest: return test;
  }
  return train;
}

SplitManifest make_splits(std::vector<std::string> piece_ids, const std::vector<int>& ratios, uint64_t seed) {
  if (ratios.size() < 2 || ratios.size() > 3) throw UsageError("split ratios need two or three parts");
  int total_ratio = 0;
  for (int r : ratios) {
    if (r <= 0) throw UsageError("split ratios must be positive");
    total_ratio += r;
  }
  std::sort(piece_ids.begin(), piece_ids.end());
  if (std::adjacent_find(piece_ids.begin(), piece_ids.end()) != piece_ids.end()) {
    throw DataError("duplicate piece ids in split input");
  }
  const size_t n = piece_ids.size();
  if (n < ratios.size()) {
    throw DataError("need at least " + std::to_string(ratios.size()) + " pieces to split, got " + std::to_string(n));
  }
  Rng rng(seed);
  rng.shuffle(piece_ids.begin(), piece_ids.end());

  std::vector<size_t> sizes;
  size_t assigned = 0;
  for (int r : ratios) {
    sizes.push_back(n * static_cast<size_t>(r) / static_cast<size_t>(total_ratio));
    assigned += sizes.back();
  }
  sizes[0] += n - assigned;
  // every set gets at least one piece
  for (size_t k = 1; k < sizes.size(); ++k) {
    if (sizes[k] == 0) {
      sizes[k] = 1;
      sizes[0] -= 1;
    }
  }

  SplitManifest m;
  m.ratios = ratios;
  m.seed = seed;
  auto it = piece_ids.begin();
  std::vector<std::string>* sets[3] = {&m.train, &m.valid, &m.test};
  for (size_t k = 0; k < sizes.size(); ++k) {
    sets[k]->assign(it, it + static_cast<std::ptrdiff_t>(sizes[k]));
    std::sort(sets[k]->begin(), sets[k]->end());
    it += static_cast<std::ptrdiff_t>(sizes[k]);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  return out;
}

void expect_header(std::istream& in, const std::string& path, const std::string& header) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file, expected header '" + header + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw DataError(path + ": header '" + line + "' differs from expected '" + header + "'");
}

std::vector<std::string> split_csv(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

int32_t parse_int(const std::string& s, const std::string& path, size_t line_no) {
  try {
    size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(path + ":" + std::to_string(line_no) + ": '" + s + "' is not an integer");
  }
}

}  // namespace

std::map<std::string, std::vector<int32_t>> read_note_labels(const std::string& path) {
  auto in = open_in(path);
  expect_header(in, path, "piece_id,note_index,label");
  std::map<std::string, std::map<int32_t, int32_t>> sparse;
  std::string line;
  for (size_t line_no = 2; std::getline(in, line); ++line_no) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() != 3) throw DataError(path + ":" + std::to_string(line_no) + ": expected 3 fields");
    const int32_t idx = parse_int(cells[1], path, line_no);
    if (!sparse[cells[0]].emplace(idx, parse_int(cells[2], path, line_no)).second) {
      throw DataError(path + ":" + std::to_string(line_no) + ": duplicate note index");
    }
  }
  std::map<std::string, std::vector<int32_t>> out;
  for (auto& [id, notes] : sparse) {
    std::vector<int32_t> dense;
    for (const auto& [idx, label] : notes) {
      if (idx != static_cast<int32_t>(dense.size())) {
        throw DataError(path + ": piece '" + id + "' note indices are not contiguous from 0");
      }
      dense.push_back(label);
    }
    out.emplace(id, std::move(dense));
  }
  return out;
}

void write_note_labels(const std::string& path, std::span<const LabeledPiece> pieces) {
  auto out = open_out(path);
  out << "piece_id,note_index,label\n";
  for (const auto& p : pieces) {
    if (!p.note_labels) continue;
    for (size_t i = 0; i < p.note_labels->size(); ++i) out << p.piece_id() << ',' << i << ',' << (*p.note_labels)[i] << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::map<std::string, int32_t> read_sequence_labels(const std::string& path) {
  auto in = open_in(path);
  expect_header(in, path, "piece_id,label");
  std::map<std::string, int32_t> out;
  std::string line;
  for (size_t line_no = 2; std::getline(in, line); ++line_no) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() != 2) throw DataError(path + ":" + std::to_string(line_no) + ": expected 2 fields");
    if (!out.emplace(cells[0], parse_int(cells[1], path, line_no)).second) {
      throw DataError(path + ":" + std::to_string(line_no) + ": duplicate piece '" + cells[0] + "'");
    }
  }
  return out;
}

void write_sequence_labels(const std::string& path, std::span<const LabeledPiece> pieces) {
  auto out = open_out(path);
  out << "piece_id,label\n";
  for (const auto& p : pieces) {
    if (p.sequence_label) out << p.piece_id() << ',' << *p.sequence_label << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

SplitManifest read_manifest(const std::string& path) {
  auto in = open_in(path);
  expect_header(in, path, "piece_id,split");
  SplitManifest m;
  std::string line;
  for (size_t line_no = 2; std::getline(in, line); ++line_no) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() != 2) throw DataError(path + ":" + std::to_string(line_no) + ": expected 2 fields");
    Split s;
    try {
      s = parse_split(cells[1]);
    } catch (const UsageError& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    (s == Split::kTrain ? m.train : s == Split::kValid ? m.valid : m.test).push_back(cells[0]);
  }
  m.ratios = m.test.empty() ? kPretrainRatios : kDownstreamRatios;
  return m;
}

void write_manifest(const std::string& path, const SplitManifest& manifest) {
  auto out = open_out(path);
  out << "piece_id,split\n";
  for (Split s : {Split::kTrain, Split::kValid, Split::kTest}) {
    for (const auto& id : manifest.ids(s)) out << id << ',' << to_string(s) << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

namespace {

json store_header(const std::string& kind) {
  return json{{"schema_version", kStoreSchemaVersion}, {"kind", kind}};
}

json read_store_header(std::istream& in, const std::string& path, const std::string& kind) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty store");
  json head;
  try {
    head = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(path + ": bad header: " + e.what());
  }
  if (!head.contains("schema_version") || head["schema_version"] != kStoreSchemaVersion) {
    throw DataError(path + ": schema version " + (head.contains("schema_version") ? head["schema_version"].dump() : "?") +
                    " differs from supported version " + std::to_string(kStoreSchemaVersion));
  }
  if (head.value("kind", "") != kind) throw DataError(path + ": not a " + kind + " file");
  return head;
}

}  // namespace

void write_chunk_store(const std::string& path, const ChunkStore& store) {
  auto out = open_out(path);
  json head = store_header("chunks");
  head["representation"] = to_string(store.representation);
  head["task"] = to_string(store.task);
  head["chunk_length"] = store.chunk_length;
  out << head.dump() << '\n';
  for (const auto& lc : store.chunks) {
    const ChunkedSequence& c = lc.chunk;
    json rec;
    rec["piece_id"] = c.piece_id;
    rec["chunk_index"] = c.chunk_index;
    if (c.representation == Representation::kCp) {
      json steps = json::array();
      for (int s = 0; s < c.length(); ++s) steps.push_back({c.id(s, 0), c.id(s, 1), c.id(s, 2), c.id(s, 3)});
      rec["ids"] = std::move(steps);
    } else {
      rec["ids"] = c.ids;
    }
    json pos = json::array();
    json labels = json::array();
    for (const auto& np : c.note_positions) {
      pos.push_back({np.step, np.note_index});
      if (!lc.step_labels.empty()) labels.push_back(lc.step_labels[np.step]);
    }
    rec["note_positions"] = std::move(pos);
    if (!lc.step_labels.empty()) rec["note_labels"] = std::move(labels);
    if (lc.sequence_label != kIgnoreLabel) rec["sequence_label"] = lc.sequence_label;
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

ChunkStore read_chunk_store(const std::string& path) {
  auto in = open_in(path);
  const json head = read_store_header(in, path, "chunks");
  ChunkStore store;
  try {
    store.representation = parse_representation(head.at("representation").get<std::string>());
    store.task = parse_task(head.at("task").get<std::string>());
  } catch (const std::exception& e) {
    throw DataError(path + ": bad header: " + e.what());
  }
  store.chunk_length = head.value("chunk_length", kChunkLength);
  std::string line;
  for (size_t line_no = 2; std::getline(in, line); ++line_no) {
    if (line.empty()) continue;
    try {
      const json rec = json::parse(line);
      LabeledChunk lc;
      ChunkedSequence& c = lc.chunk;
      c.representation = store.representation;
      c.piece_id = rec.at("piece_id").get<std::string>();
      c.chunk_index = rec.at("chunk_index").get<int32_t>();
      if (store.representation == Representation::kCp) {
        for (const auto& step : rec.at("ids")) {
          if (step.size() != kCpFields) throw DataError("CP step without four fields");
          for (const auto& v : step) c.ids.push_back(v.get<int32_t>());
        }
      } else {
        c.ids = rec.at("ids").get<std::vector<int32_t>>();
      }
      if (c.length() != store.chunk_length) throw DataError("chunk length differs from header");
      for (const auto& p : rec.at("note_positions")) c.note_positions.push_back({p.at(0).get<int32_t>(), p.at(1).get<int32_t>()});
      if (rec.contains("note_labels")) {
        const auto labels = rec["note_labels"].get<std::vector<int32_t>>();
        if (labels.size() != c.note_positions.size()) throw DataError("note_labels and note_positions differ in length");
        lc.step_labels.assign(static_cast<size_t>(c.length()), kIgnoreLabel);
        for (size_t i = 0; i < labels.size(); ++i) lc.step_labels.at(c.note_positions[i].step) = labels[i];
      }
      lc.sequence_label = rec.value("sequence_label", kIgnoreLabel);
      store.chunks.push_back(std::move(lc));
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return store;
}

void write_piece_store(const std::string& path, Task task, std::span<const LabeledPiece> pieces) {
  auto out = open_out(path);
  json head = store_header("pieces");
  head["task"] = to_string(task);
  out << head.dump() << '\n';
  for (const auto& p : pieces) {
    json rec;
    rec["piece_id"] = p.piece_id();
    rec["num_bars"] = p.score.num_bars;
    json notes = json::array();
    for (const auto& n : p.score.notes) notes.push_back({n.bar, n.sub_beat, n.pitch, n.duration, n.velocity_class.value_or(-1)});
    rec["notes"] = std::move(notes);
    if (p.note_labels) rec["note_labels"] = *p.note_labels;
    if (p.sequence_label) rec["sequence_label"] = *p.sequence_label;
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<LabeledPiece> read_piece_store(const std::string& path) {
  auto in = open_in(path);
  const json head = read_store_header(in, path, "pieces");
  Task task;
  try {
    task = parse_task(head.at("task").get<std::string>());
  } catch (const std::exception& e) {
    throw DataError(path + ": bad header: " + e.what());
  }
  std::vector<LabeledPiece> out;
  std::string line;
  for (size_t line_no = 2; std::getline(in, line); ++line_no) {
    if (line.empty()) continue;
    try {
      const json rec = json::parse(line);
      LabeledPiece p;
      p.task = task;
      p.score.source_id = rec.at("piece_id").get<std::string>();
      p.score.num_bars = rec.at("num_bars").get<int>();
      for (const auto& n : rec.at("notes")) {
        QuantNote q{n.at(0).get<int>(), n.at(1).get<int>(), n.at(2).get<int>(), n.at(3).get<int>(), std::nullopt};
        const int vel = n.at(4).get<int>();
        if (vel >= 0) q.velocity_class = vel;
        p.score.notes.push_back(q);
      }
      validate(p.score);
      if (rec.contains("note_labels")) p.note_labels = rec["note_labels"].get<std::vector<int32_t>>();
      if (rec.contains("sequence_label")) p.sequence_label = rec["sequence_label"].get<int32_t>();
      validate(p);
      out.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpora

namespace {

std::string piece_name(const std::string& prefix, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", i);
  return prefix + buf;
}

// Splits a bar into `parts` contiguous spans (in sub-beats) summing to 16.
std::vector<int> partition_bar(Rng& rng, int parts) {
  parts = std::clamp(parts, 1, kSubBeatsPerBar);
  std::vector<int> cuts(kSubBeatsPerBar - 1);
  for (int i = 0; i < kSubBeatsPerBar - 1; ++i) cuts[i] = i + 1;
  rng.shuffle(cuts.begin(), cuts.end());
  cuts.resize(static_cast<size_t>(parts - 1));
  std::sort(cuts.begin(), cuts.end());
  std::vector<int> lengths;
  int prev = 0;
  for (int c : cuts) {
    lengths.push_back(c - prev);
    prev = c;
  }
  lengths.push_back(kSubBeatsPerBar - prev);
  return lengths;
}

struct TwoVoice {
  Score score;
  std::vector<int32_t> labels;
};

// Gap-free melody in the upper register plus an accompaniment kept strictly
// below every melody note it overlaps.
TwoVoice two_voice_piece(Rng& rng, const std::string& id, int bars, int notes_per_bar) {
  constexpr int kMelodyLow = 58, kMelodyHigh = 84, kAccompLow = 36;
  const int melody_per_bar = std::max(1, (notes_per_bar + 2) / 3);
  const int accomp_per_bar = std::max(0, notes_per_bar - melody_per_bar);

  std::vector<QuantNote> melody;
  int pitch = rng.range(64, 76);
  for (int bar = 0; bar < bars; ++bar) {
    int pos = 0;
    for (int len : partition_bar(rng, melody_per_bar)) {
      pitch = std::clamp(pitch + rng.range(-4, 4), kMelodyLow, kMelodyHigh);
      melody.push_back({bar, pos + 1, pitch, 2 * len, std::nullopt});
      pos += len;
    }
  }
  // lowest melody pitch sounding in each sub-beat slot
  std::vector<int> melody_floor(static_cast<size_t>(bars) * kSubBeatsPerBar, kMelodyHigh);
  for (const auto& m : melody) {
    for (int t = m.onset(); t < m.onset() + m.duration / 2; ++t) melody_floor[t] = m.pitch;
  }

  std::vector<QuantNote> accomp;
  std::set<std::pair<int, int>> used;
  for (int bar = 0; bar < bars; ++bar) {
    for (int k = 0; k < accomp_per_bar; ++k) {
      const int sub = rng.range(1, kSubBeatsPerBar);
      const int onset = bar * kSubBeatsPerBar + sub - 1;
      const int max_len = std::min(8, bars * kSubBeatsPerBar - onset);
      const int len = rng.range(1, max_len);  // in sub-beats
      int ceiling = kMelodyHigh;
      for (int t = onset; t < onset + len; ++t) ceiling = std::min(ceiling, melody_floor[t]);
      const int p = rng.range(kAccompLow, std::max(kAccompLow, std::min(ceiling - 3, 64)));
      if (!used.emplace(onset, p).second) continue;
      accomp.push_back({bar, sub, p, 2 * len, std::nullopt});
    }
  }

  std::vector<std::pair<QuantNote, int32_t>> tagged;
  for (const auto& m : melody) tagged.emplace_back(m, kMelodyLabel);
  for (const auto& a : accomp) tagged.emplace_back(a, kAccompanimentLabel);
  std::stable_sort(tagged.begin(), tagged.end(), [](const auto& a, const auto& b) { return note_less(a.first, b.first); });
  TwoVoice out;
  out.score.source_id = id;
  out.score.num_bars = bars;
  for (const auto& [n, l] : tagged) {
    out.score.notes.push_back(n);
    out.labels.push_back(l);
  }
  return out;
}

Score class_piece(Rng& rng, const std::string& id, int bars, int notes_per_bar, int cls, int num_cls) {
  static constexpr std::array<int, 7> kMajor = {0, 2, 4, 5, 7, 9, 11};
  static constexpr std::array<int, 4> kDurations = {2, 4, 8, 16};
  const int tonic = (cls * 5) % 12;
  const int mode = cls % 7;
  std::array<int, 7> scale{};
  for (int i = 0; i < 7; ++i) scale[i] = (kMajor[(i + mode) % 7] - kMajor[mode] + 12 + tonic) % 12;
  const int center = 48 + (cls * 28) / std::max(1, num_cls - 1);
  const int density = std::max(1, notes_per_bar / 2 + (cls % 3) * notes_per_bar / 2);
  const int preferred = kDurations[cls % kDurations.size()];

  Score s;
  s.source_id = id;
  s.num_bars = bars;
  std::set<std::pair<int, int>> used;
  for (int bar = 0; bar < bars; ++bar) {
    for (int k = 0; k < density; ++k) {
      const int sub = (cls % 2 == 0) ? 1 + 2 * rng.range(0, 7) : rng.range(1, kSubBeatsPerBar);
      const int target = center + static_cast<int>(std::lround(rng.normal() * 5.0));
      // nearest scale tone to target
      int best = target, best_dist = 99;
      for (int p = target - 6; p <= target + 6; ++p) {
        for (int pc : scale) {
          if (((p % 12) + 12) % 12 == pc && std::abs(p - target) < best_dist) {
            best = p;
            best_dist = std::abs(p - target);
          }
        }
      }
      const int pitch = std::clamp(best, kMinPitch, kMaxPitch);
      const int dur = rng.bernoulli(0.7) ? preferred : kDurations[rng.below(kDurations.size())];
      if (!used.emplace(bar * kSubBeatsPerBar + sub, pitch).second) continue;
      s.notes.push_back({bar, sub, pitch, dur, std::nullopt});
    }
  }
  sort_notes(s);
  return s;
}

}  // namespace

std::vector<LabeledPiece> synth_corpus(const SynthSpec& spec, uint64_t seed) {
  if (spec.pieces < 0 || spec.bars_per_piece < 1 || spec.notes_per_bar < 1) {
    throw UsageError("synthetic corpus needs pieces >= 0, bars >= 1 and notes per bar >= 1");
  }
  const std::string prefix = spec.id_prefix.empty() ? to_string(spec.task) + "_" : spec.id_prefix;
  std::vector<LabeledPiece> out;
  for (int i = 0; i < spec.pieces; ++i) {
    Rng rng(mix_seed({seed, static_cast<uint64_t>(i)}));
    const std::string id = piece_name(prefix, i);
    switch (spec.task) {
      case Task::kMelody: {
        TwoVoice tv = two_voice_piece(rng, id, spec.bars_per_piece, spec.notes_per_bar);
        out.push_back(attach_note_labels(std::move(tv.score), std::move(tv.labels), Task::kMelody));
        break;
      }
      case Task::kVelocity: {
        TwoVoice tv = two_voice_piece(rng, id, spec.bars_per_piece, spec.notes_per_bar);
        const int base = rng.range(1, 3);  // piece-level dynamic
        for (size_t k = 0; k < tv.score.notes.size(); ++k) {
          QuantNote& n = tv.score.notes[k];
          int cls = base + (tv.labels[k] == kMelodyLabel ? 2 : 0) + (n.sub_beat == 1 ? 1 : 0) - (n.sub_beat % 2 == 0 ? 1 : 0);
          if (rng.bernoulli(0.1)) cls += rng.range(-1, 1);
          n.velocity_class = std::clamp(cls, 0, kNumVelocityClasses - 1);
        }
        out.push_back(velocity_piece(std::move(tv.score)));
        break;
      }
      case Task::kComposer:
      case Task::kEmotion: {
        const int k = num_classes(spec.task);
        const int cls = i % k;
        out.push_back(attach_sequence_label(class_piece(rng, id, spec.bars_per_piece, spec.notes_per_bar, cls, k), cls,
                                            spec.task));
        break;
      }
      case Task::kPretrainOnly: {
        TwoVoice tv = two_voice_piece(rng, id, spec.bars_per_piece, spec.notes_per_bar);
        out.push_back(LabeledPiece{std::move(tv.score), std::nullopt, std::nullopt, Task::kPretrainOnly});
        break;
      }
    }
  }
  return out;
}

std::vector<LabeledPiece> ostinato_corpus(int pieces, int bars, uint64_t seed) {
  std::vector<LabeledPiece> out;
  for (int i = 0; i < pieces; ++i) {
    Rng rng(mix_seed({seed, 0x05717A70ULL, static_cast<uint64_t>(i)}));
    std::array<int, 4> figure{};
    for (int& p : figure) p = rng.range(48, 84);
    Score s;
    s.source_id = piece_name("ostinato_", i);
    s.num_bars = bars;
    for (int bar = 0; bar < bars; ++bar) {
      for (int k = 0; k < 4; ++k) s.notes.push_back({bar, 1 + 4 * k, figure[k], 8, std::nullopt});
    }
    sort_notes(s);
    out.push_back(LabeledPiece{std::move(s), std::nullopt, std::nullopt, Task::kPretrainOnly});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pre-training corpus selection

std::string to_string(CorpusSelection sel) {
  switch (sel) {
    case CorpusSelection::kAll: return "all";
    case CorpusSelection::kTrainSplits: return "train-splits";
    case CorpusSelection::kPretrainOnly: return "pretrain-only";
  }
  return "?";
}

CorpusSelection parse_corpus_selection(const std::string& name) {
  for (auto s : {CorpusSelection::kAll, CorpusSelection::kTrainSplits, CorpusSelection::kPretrainOnly}) {
    if (to_string(s) == name) return s;
  }
  throw UsageError("unknown corpus selection '" + name + "' (expected all, train-splits or pretrain-only)");
}

std::vector<std::string> select_pretrain_pieces(std::span<const PreparedCorpus> corpora, CorpusSelection sel) {
  std::vector<std::string> out;
  for (const auto& c : corpora) {
    const bool downstream = c.task != Task::kPretrainOnly;
    std::vector<std::string> ids;
    if (!downstream || sel == CorpusSelection::kAll) {
      for (Split s : {Split::kTrain, Split::kValid, Split::kTest}) {
        ids.insert(ids.end(), c.manifest.ids(s).begin(), c.manifest.ids(s).end());
      }
    } else if (sel == CorpusSelection::kTrainSplits) {
      ids = c.manifest.train;
    }
    for (const auto& id : ids) out.push_back(c.name + "/" + id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace midibert
