#include "midibert/cli.h"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "json.hpp"
#include "midibert/corpus.h"
#include "midibert/error.h"
#include "midibert/eval.h"
#include "midibert/model.h"
#include "midibert/smf_io.h"
#include "midibert/train.h"

namespace midibert {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw IoError("SHA-256 unavailable");
  }
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

namespace {

// ---------------------------------------------------------------------------
// Shared helpers

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw IoError(what + " not found: " + p.string());
}

/// Echo of one invocation written into every output directory.
struct RunRecord {
  std::string command;
  std::vector<std::string> argv;
  json resolved = json::object();
  json seeds = json::object();
  std::map<std::string, std::string> inputs;  // path -> sha256

  void add_input(const fs::path& p) { inputs[p.string()] = sha256_file(p.string()); }

  void write(const fs::path& dir) const {
    json j = {{"command", command}, {"argv", argv},   {"resolved", resolved},
              {"seeds", seeds},     {"version", kToolkitVersion}, {"inputs", inputs}};
    write_text(dir / "run_config.json", j.dump(2) + "\n");
  }
};

struct DataDir {
  fs::path path;
  std::string name;
  ChunkStore store;
  SplitManifest manifest;
};

fs::path chunks_path(const fs::path& d) { return d / "chunks.jsonl"; }
fs::path pieces_path(const fs::path& d) { return d / "pieces.jsonl"; }
fs::path manifest_path(const fs::path& d) { return d / "manifest.csv"; }

DataDir load_data_dir(const std::string& dir) {
  DataDir d;
  d.path = dir;
  if (!fs::is_directory(d.path)) throw IoError("data directory not found: " + dir);
  require_file(chunks_path(d.path), "chunk store");
  require_file(manifest_path(d.path), "manifest");
  d.name = fs::weakly_canonical(d.path).filename().string();
  d.store = read_chunk_store(chunks_path(d.path).string());
  d.manifest = read_manifest(manifest_path(d.path).string());
  return d;
}

std::vector<LabeledChunk> chunks_of(const DataDir& d, std::optional<Split> split) {
  std::vector<LabeledChunk> out;
  for (const auto& c : d.store.chunks) {
    const auto s = d.manifest.split_of(c.chunk.piece_id);
    if (!s) throw DataError("piece " + c.chunk.piece_id + " is missing from " + manifest_path(d.path).string());
    if (!split || *s == *split) out.push_back(c);
  }
  return out;
}

std::map<std::string, size_t> split_sizes(const SplitManifest& m) {
  return {{"train", m.train.size()}, {"valid", m.valid.size()}, {"test", m.test.size()}};
}

void configure_threads() {
  if (const char* env = std::getenv("MIDIBERT_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n <= 0) throw UsageError("MIDIBERT_THREADS must be a positive integer");
    Eigen::setNbThreads(static_cast<int>(n));
  }
}

/// Training flags shared by pretrain and finetune. Unset flags leave the
/// config file (or the defaults) in force.
struct TrainFlags {
  std::string config_file;
  std::optional<int> batch_size, epochs, patience;
  std::optional<double> lr, weight_decay, clip_norm;
  std::optional<uint64_t> seed;
  std::optional<std::string> precision;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key = value training config file");
    app->add_option("--batch-size", batch_size, "sequences per batch");
    app->add_option("--epochs", epochs, "maximum epochs");
    app->add_option("--patience", patience, "early-stopping patience in epochs");
    app->add_option("--lr", lr, "AdamW learning rate");
    app->add_option("--weight-decay", weight_decay, "decoupled weight decay");
    app->add_option("--clip-norm", clip_norm, "global gradient-norm clip (0 disables)");
    app->add_option("--seed", seed, "seed for initialization, shuffling, masking and dropout");
    app->add_option("--precision", precision, "single or double");
  }

  TrainConfig resolve(TrainConfig base) const {
    if (!config_file.empty()) apply_config_file(base, config_file);
    if (batch_size) base.batch_size = *batch_size;
    if (epochs) base.max_epochs = *epochs;
    if (patience) base.patience = *patience;
    if (lr) base.lr = *lr;
    if (weight_decay) base.weight_decay = *weight_decay;
    if (clip_norm) base.clip_norm = *clip_norm;
    if (seed) base.seed = *seed;
    if (precision) base.precision = parse_precision(*precision);
    if (!patience && base.patience > base.max_epochs) base.patience = base.max_epochs;
    base.validate();
    return base;
  }
};

EpochCallback progress(const std::string& kind) {
  return [kind](const EpochRecord& r) {
    std::cout << kind << " epoch " << r.epoch << std::fixed << std::setprecision(4) << " train_loss " << r.train_loss
              << " train_acc " << r.train_accuracy << " valid_loss " << r.valid_loss << " valid_acc "
              << r.valid_accuracy << std::defaultfloat << '\n'
              << std::flush;
  };
}

void write_log(const fs::path& dir, const TrainLog& log) {
  write_text(dir / "train_log.csv", log.to_csv());
  write_text(dir / "train_summary.json", log.summary_json());
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string task;
  int pieces = 10;
  int bars = 8;
  int notes_per_bar = 8;
  uint64_t seed = 0;
  bool ostinato = false;
  std::string prefix;
  std::string out;
};

int cmd_synth(const SynthArgs& a, RunRecord rec) {
  const Task task = parse_task(a.task);
  if (a.ostinato && task != Task::kPretrainOnly) throw UsageError("--ostinato requires --task pretrain");
  if (a.pieces <= 0 || a.bars <= 0 || a.notes_per_bar <= 0) throw UsageError("--pieces, --bars and --notes-per-bar must be positive");

  std::vector<LabeledPiece> pieces;
  if (a.ostinato) {
    pieces = ostinato_corpus(a.pieces, a.bars, a.seed);
  } else {
    pieces = synth_corpus(SynthSpec{task, a.pieces, a.bars, a.notes_per_bar, a.prefix}, a.seed);
  }
  const fs::path out(a.out);
  make_dir(out / "midi");
  for (const auto& p : pieces) write_smf_file(p.score, (out / "midi" / (p.piece_id() + ".mid")).string());
  if (is_note_level(task) && task != Task::kVelocity) write_note_labels((out / "note_labels.csv").string(), pieces);
  if (is_sequence_level(task)) write_sequence_labels((out / "sequence_labels.csv").string(), pieces);

  rec.resolved = {{"task", to_string(task)}, {"pieces", a.pieces}, {"bars", a.bars},
                  {"notes_per_bar", a.notes_per_bar}, {"ostinato", a.ostinato}, {"prefix", a.prefix},
                  {"out", a.out}};
  rec.seeds = {{"seed", a.seed}};
  rec.write(out);
  std::cout << "wrote " << pieces.size() << " pieces to " << (out / "midi").string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareArgs {
  std::string midi_dir;
  std::string labels;
  std::string task;
  std::string rep = "cp";
  uint64_t seed = 0;
  int chunk_length = kChunkLength;
  bool strict = false;
  bool force_four_four = false;
  std::string out;
};

int cmd_prepare(const PrepareArgs& a, RunRecord rec) {
  const Task task = parse_task(a.task);
  const Representation rep = parse_representation(a.rep);
  if (a.chunk_length <= 0 || a.chunk_length > kChunkLength) {
    throw UsageError("--chunk-length must be in 1.." + std::to_string(kChunkLength));
  }
  const bool needs_labels = task == Task::kMelody || is_sequence_level(task);
  if (needs_labels && a.labels.empty()) throw UsageError("--labels is required for task " + to_string(task));
  if (!needs_labels && !a.labels.empty()) throw UsageError("task " + to_string(task) + " takes no --labels file");
  if (!fs::is_directory(a.midi_dir)) throw IoError("MIDI directory not found: " + a.midi_dir);
  if (!a.labels.empty()) require_file(a.labels, "label file");

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.midi_dir)) {
    const std::string ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".mid" || ext == ".midi")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .mid files in " + a.midi_dir);

  std::map<std::string, std::vector<int32_t>> note_labels;
  std::map<std::string, int32_t> seq_labels;
  if (task == Task::kMelody) note_labels = read_note_labels(a.labels);
  if (is_sequence_level(task)) seq_labels = read_sequence_labels(a.labels);

  for (const auto& f : files) rec.add_input(f);
  if (!a.labels.empty()) rec.add_input(a.labels);

  std::vector<LabeledPiece> pieces;
  std::vector<std::string> failures;
  for (const auto& f : files) {
    const std::string id = f.stem().string();
    try {
      const SmfContents smf = read_smf_file(f.string());
      Score score = quantize(smf, QuantizeOptions{true, id}, a.force_four_four);
      LabeledPiece piece;
      switch (task) {
        case Task::kMelody: {
          auto it = note_labels.find(id);
          if (it == note_labels.end()) throw DataError("no note labels for " + id);
          piece = attach_note_labels(std::move(score), it->second, task);
          break;
        }
        case Task::kVelocity:
          piece = velocity_piece(std::move(score));
          break;
        case Task::kComposer:
        case Task::kEmotion: {
          auto it = seq_labels.find(id);
          if (it == seq_labels.end()) throw DataError("no sequence label for " + id);
          piece = attach_sequence_label(std::move(score), it->second, task);
          break;
        }
        case Task::kPretrainOnly:
          piece = LabeledPiece{std::move(score), std::nullopt, std::nullopt, task};
          break;
      }
      validate(piece);
      pieces.push_back(std::move(piece));
    } catch (const DataError& e) {
      if (a.strict) throw;
      failures.push_back(f.filename().string() + ": " + e.what());
    }
  }
  if (pieces.empty()) throw DataError("no usable pieces in " + a.midi_dir);

  ChunkStore store;
  store.representation = rep;
  store.task = task;
  store.chunk_length = a.chunk_length;
  std::vector<std::string> ids;
  for (const auto& p : pieces) {
    ids.push_back(p.piece_id());
    const auto chunks = encode_and_chunk(p.score, rep, a.chunk_length);
    for (auto& lc : propagate_to_chunks(p, chunks)) store.chunks.push_back(std::move(lc));
  }
  const SplitManifest manifest =
      make_splits(ids, task == Task::kPretrainOnly ? kPretrainRatios : kDownstreamRatios, a.seed);

  const fs::path out(a.out);
  make_dir(out);
  write_piece_store(pieces_path(out).string(), task, pieces);
  write_chunk_store(chunks_path(out).string(), store);
  write_manifest(manifest_path(out).string(), manifest);
  std::ostringstream report;
  report << "pieces " << pieces.size() << "\nchunks " << store.chunks.size() << "\nskipped " << failures.size() << '\n';
  for (const auto& f : failures) report << "  " << f << '\n';
  write_text(out / "prepare_report.txt", report.str());

  rec.resolved = {{"midi_dir", a.midi_dir}, {"labels", a.labels}, {"task", to_string(task)},
                  {"representation", to_string(rep)}, {"chunk_length", a.chunk_length}, {"strict", a.strict},
                  {"force_four_four", a.force_four_four}, {"out", a.out},
                  {"pieces", pieces.size()}, {"skipped", failures}};
  rec.seeds = {{"split_seed", a.seed}};
  rec.write(out);
  for (const auto& f : failures) std::cerr << "skipped " << f << '\n';
  std::cout << "prepared " << pieces.size() << " pieces (" << store.chunks.size() << " chunks, " << failures.size()
            << " skipped) into " << out.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// pretrain

struct PretrainArgs {
  std::vector<std::string> data;
  std::string corpus = "all";
  std::string preset = "desk";
  std::string position = "relative_key_query";
  TrainFlags train;
  std::string out;
};

template <typename T>
TrainLog run_pretrain(const ModelConfig& mc, const std::vector<ChunkedSequence>& tr, const std::vector<ChunkedSequence>& va,
                      const TrainConfig& tc, const fs::path& out) {
  EncoderModel<T> model(mc, tc.seed);
  return pretrain(model, tr, va, tc, (out / "best.mbpt").string(), progress("pretrain"));
}

int cmd_pretrain(const PretrainArgs& a, RunRecord rec) {
  const CorpusSelection sel = parse_corpus_selection(a.corpus);
  const TrainConfig tc = a.train.resolve(TrainConfig::pretrain_defaults());
  if (tc.freeze != FreezeMode::kNone) throw UsageError("freeze modes apply to fine-tuning only");
  if (a.data.empty()) throw UsageError("at least one --data directory is required");

  std::vector<DataDir> dirs;
  std::set<std::string> names;
  for (const auto& d : a.data) {
    dirs.push_back(load_data_dir(d));
    if (!names.insert(dirs.back().name).second) throw UsageError("two --data directories share the name " + dirs.back().name);
    if (dirs.back().store.representation != dirs.front().store.representation) {
      throw DataError("--data directories mix representations");
    }
  }
  ModelConfig mc = ModelConfig::preset(a.preset, dirs.front().store.representation);
  mc.position = parse_position_mode(a.position);
  mc.validate();

  std::vector<PreparedCorpus> corpora;
  for (const auto& d : dirs) corpora.push_back({d.name, d.store.task, d.manifest});
  const std::vector<std::string> selected = select_pretrain_pieces(corpora, sel);
  if (selected.size() < 2) throw DataError("corpus selection '" + a.corpus + "' leaves fewer than two pieces");
  const SplitManifest pm = make_splits(selected, kPretrainRatios, tc.seed);

  std::vector<ChunkedSequence> train, valid;
  for (const auto& d : dirs) {
    for (const auto& c : d.store.chunks) {
      const auto s = pm.split_of(d.name + "/" + c.chunk.piece_id);
      if (!s) continue;
      (*s == Split::kTrain ? train : valid).push_back(c.chunk);
    }
  }
  for (const auto& d : dirs) {
    rec.add_input(chunks_path(d.path));
    rec.add_input(manifest_path(d.path));
  }
  if (!a.train.config_file.empty()) rec.add_input(a.train.config_file);

  const fs::path out(a.out);
  make_dir(out);
  write_manifest((out / "pretrain_manifest.csv").string(), pm);
  std::map<std::string, size_t> per_corpus;
  for (const auto& id : selected) ++per_corpus[id.substr(0, id.find('/'))];
  rec.resolved = {{"data", a.data},
                  {"corpus", to_string(sel)},
                  {"model", json::parse(to_json(mc))},
                  {"train", json::parse(to_json(tc))},
                  {"pieces", {{"selected", selected.size()}, {"train", pm.train.size()}, {"valid", pm.valid.size()},
                              {"per_corpus", per_corpus}}},
                  {"chunks", {{"train", train.size()}, {"valid", valid.size()}}},
                  {"out", a.out}};
  rec.seeds = {{"seed", tc.seed}};
  rec.write(out);
  std::cout << "pre-training on " << pm.train.size() << " + " << pm.valid.size() << " pieces (" << train.size()
            << " + " << valid.size() << " chunks)\n";

  const TrainLog log = tc.precision == Precision::kDouble ? run_pretrain<double>(mc, train, valid, tc, out)
                                                          : run_pretrain<float>(mc, train, valid, tc, out);
  write_log(out, log);
  std::cout << "best epoch " << log.best_epoch << " valid_loss " << log.best().valid_loss << " cloze "
            << log.best().valid_accuracy << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// finetune / eval

EvalReport make_report(const DataDir& d, Task task, Split split, const TaskPredictions& p) {
  EvalReport r;
  r.task = task;
  r.split = to_string(split);
  r.split_sizes = split_sizes(d.manifest);
  r.predicted = p.predicted;
  r.actual = p.actual;
  r.extra["loss"] = p.loss;

  std::vector<int32_t> train_labels;
  for (const auto& c : chunks_of(d, Split::kTrain)) {
    if (is_note_level(task)) {
      train_labels.insert(train_labels.end(), c.step_labels.begin(), c.step_labels.end());
    } else {
      train_labels.push_back(c.sequence_label);
    }
  }
  if (!train_labels.empty() && !p.actual.empty()) {
    const MajorityBaseline mb = MajorityBaseline::fit(train_labels);
    r.extra["majority_baseline_accuracy"] = accuracy(mb.predict(p.actual.size()), p.actual);
  }
  return r;
}

struct FinetuneArgs {
  std::string data;
  std::string task;
  std::string checkpoint;
  bool no_pretrain = false;
  std::string freeze;
  bool freeze_backbone = false;
  bool freeze_attention = false;
  std::string preset = "desk";
  std::string position = "relative_key_query";
  TrainFlags train;
  std::string out;
};

template <typename T>
std::pair<TrainLog, TaskPredictions> run_finetune(const ModelConfig& mc, const FinetuneArgs& a, Task task,
                                                  const DataDir& d, const TrainConfig& tc, const fs::path& out) {
  EncoderModel<T> model(mc, tc.seed);
  if (!a.no_pretrain) load_backbone(model, a.checkpoint);
  const auto tr = chunks_of(d, Split::kTrain);
  const auto va = chunks_of(d, Split::kValid);
  const auto te = chunks_of(d, Split::kTest);
  TrainLog log = finetune(model, task, tr, va, tc, (out / "best.mbpt").string(), progress("finetune"));
  if (te.empty()) return {log, {}};
  return {log, predict_task(model, task, te, tc.batch_size)};
}

int cmd_finetune(const FinetuneArgs& a, RunRecord rec) {
  const Task task = parse_task(a.task);
  if (!is_note_level(task) && !is_sequence_level(task)) throw UsageError("--task must be melody, velocity, composer or emotion");
  if (a.no_pretrain == !a.checkpoint.empty()) throw UsageError("give exactly one of --checkpoint and --no-pretrain");
  int freeze_flags = (a.freeze_backbone ? 1 : 0) + (a.freeze_attention ? 1 : 0) + (a.freeze.empty() ? 0 : 1);
  if (freeze_flags > 1) throw UsageError("--freeze, --freeze-backbone and --freeze-attention are mutually exclusive");
  TrainConfig tc = a.train.resolve(TrainConfig::finetune_defaults());
  if (!a.freeze.empty()) tc.freeze = parse_freeze_mode(a.freeze);
  if (a.freeze_backbone) tc.freeze = FreezeMode::kBackbone;
  if (a.freeze_attention) tc.freeze = FreezeMode::kAttention;
  if (a.no_pretrain && tc.freeze != FreezeMode::kNone) throw UsageError("freezing a randomly initialized backbone is not supported");

  const DataDir d = load_data_dir(a.data);
  if (d.store.task != task) {
    throw DataError(a.data + " holds " + to_string(d.store.task) + " labels, not " + to_string(task));
  }
  ModelConfig mc;
  if (a.no_pretrain) {
    mc = ModelConfig::preset(a.preset, d.store.representation);
    mc.position = parse_position_mode(a.position);
  } else {
    require_file(a.checkpoint, "checkpoint");
    mc = read_checkpoint_config(a.checkpoint);
    if (mc.representation != d.store.representation) throw DataError("checkpoint and data use different representations");
  }
  mc.mlm_head = false;
  mc.note_classes = is_note_level(task) ? num_classes(task) : 0;
  mc.seq_classes = is_sequence_level(task) ? num_classes(task) : 0;
  mc.validate();

  rec.add_input(chunks_path(d.path));
  rec.add_input(manifest_path(d.path));
  if (!a.checkpoint.empty()) rec.add_input(a.checkpoint);
  if (!a.train.config_file.empty()) rec.add_input(a.train.config_file);

  const fs::path out(a.out);
  make_dir(out);
  rec.resolved = {{"data", a.data},
                  {"task", to_string(task)},
                  {"checkpoint", a.checkpoint},
                  {"no_pretrain", a.no_pretrain},
                  {"model", json::parse(to_json(mc))},
                  {"train", json::parse(to_json(tc))},
                  {"out", a.out}};
  rec.seeds = {{"seed", tc.seed}};
  rec.write(out);

  const auto [log, test] = tc.precision == Precision::kDouble ? run_finetune<double>(mc, a, task, d, tc, out)
                                                              : run_finetune<float>(mc, a, task, d, tc, out);
  write_log(out, log);
  std::cout << "best epoch " << log.best_epoch << " valid_acc " << log.best().valid_accuracy << '\n';
  if (!test.actual.empty()) {
    write_report((out / "test").string(), make_report(d, task, Split::kTest, test));
    std::cout << "test accuracy " << accuracy(test.predicted, test.actual) << '\n';
  }
  return kExitOk;
}

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string split = "test";
  int batch_size = 12;
  std::string out;
};

template <typename T>
TaskPredictions run_eval(const EvalArgs& a, Task task, const std::vector<LabeledChunk>& chunks) {
  const EncoderModel<T> model = load_checkpoint<T>(a.checkpoint);
  return predict_task(model, task, chunks, a.batch_size);
}

int cmd_eval(const EvalArgs& a, RunRecord rec) {
  const Split split = parse_split(a.split);
  if (a.batch_size <= 0) throw UsageError("--batch-size must be positive");
  require_file(a.checkpoint, "checkpoint");
  const DataDir d = load_data_dir(a.data);
  const Task task = d.store.task;
  const ModelConfig mc = read_checkpoint_config(a.checkpoint);
  if (is_note_level(task) ? mc.note_classes != num_classes(task)
                          : (!is_sequence_level(task) || mc.seq_classes != num_classes(task))) {
    throw DataError("checkpoint has no head for task " + to_string(task));
  }
  const auto chunks = chunks_of(d, split);
  if (chunks.empty()) throw DataError("split " + a.split + " of " + a.data + " is empty");
  rec.add_input(chunks_path(d.path));
  rec.add_input(manifest_path(d.path));
  rec.add_input(a.checkpoint);

  const TaskPredictions p = run_eval<float>(a, task, chunks);
  const fs::path out(a.out);
  make_dir(out);
  EvalReport report = make_report(d, task, split, p);
  if (task == Task::kMelody && fs::is_regular_file(pieces_path(d.path))) {
    std::vector<int32_t> sky, truth;
    for (const auto& piece : read_piece_store(pieces_path(d.path).string())) {
      if (d.manifest.split_of(piece.piece_id()) != split) continue;
      const auto s = skyline(piece.score);
      const auto t = merge_melody_binary(*piece.note_labels);
      sky.insert(sky.end(), s.begin(), s.end());
      truth.insert(truth.end(), t.begin(), t.end());
    }
    if (!truth.empty()) report.extra["skyline_binary_accuracy"] = accuracy(sky, truth);
    rec.add_input(pieces_path(d.path));
  }
  write_report(out.string(), report);
  rec.resolved = {{"data", a.data}, {"checkpoint", a.checkpoint}, {"split", a.split}, {"batch_size", a.batch_size},
                  {"task", to_string(task)}, {"out", a.out}};
  rec.write(out);
  std::cout << to_string(task) << " " << a.split << " accuracy " << accuracy(p.predicted, p.actual) << '\n';
  return kExitOk;
}

struct SkylineArgs {
  std::string data;
  std::string split = "test";
  std::string out;
};

int cmd_skyline(const SkylineArgs& a, RunRecord rec) {
  std::optional<Split> split;
  if (a.split != "all") split = parse_split(a.split);
  require_file(pieces_path(a.data), "piece store");
  require_file(manifest_path(a.data), "manifest");
  const auto pieces = read_piece_store(pieces_path(a.data).string());
  const SplitManifest manifest = read_manifest(manifest_path(a.data).string());
  std::vector<int32_t> sky, truth;
  for (const auto& p : pieces) {
    if (p.task != Task::kMelody || !p.note_labels) throw DataError("skyline needs melody-labeled pieces");
    if (split && manifest.split_of(p.piece_id()) != split) continue;
    const auto s = skyline(p.score);
    const auto t = merge_melody_binary(*p.note_labels);
    sky.insert(sky.end(), s.begin(), s.end());
    truth.insert(truth.end(), t.begin(), t.end());
  }
  if (truth.empty()) throw DataError("no notes in split " + a.split);
  rec.add_input(pieces_path(a.data));
  rec.add_input(manifest_path(a.data));

  const ConfusionTable t = confusion(sky, truth, 2, binary_melody_names());
  const fs::path out(a.out);
  make_dir(out);
  const json j = {{"method", "skyline"}, {"split", a.split}, {"notes", truth.size()}, {"binary_accuracy", t.accuracy()}};
  write_text(out / "metrics.json", j.dump(2) + "\n");
  write_text(out / "binary_confusion.csv", t.to_csv());
  write_text(out / "binary_confusion.txt", t.to_text());
  rec.resolved = {{"data", a.data}, {"split", a.split}, {"out", a.out}};
  rec.write(out);
  std::cout << "skyline " << a.split << " binary accuracy " << t.accuracy() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"MIDI encoder pre-training toolkit"};
  app.set_version_flag("--version", kToolkitVersion);
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic labeled corpus as MIDI files");
  s->add_option("--task", synth.task, "melody, velocity, composer, emotion or pretrain")->required();
  s->add_option("--pieces", synth.pieces, "number of pieces");
  s->add_option("--bars", synth.bars, "bars per piece");
  s->add_option("--notes-per-bar", synth.notes_per_bar, "approximate notes per bar");
  s->add_option("--seed", synth.seed, "generator seed");
  s->add_flag("--ostinato", synth.ostinato, "repeating four-note figures (pretrain only)");
  s->add_option("--prefix", synth.prefix, "piece id prefix");
  s->add_option("--out", synth.out, "output directory")->required();

  PrepareArgs prep;
  auto* p = app.add_subcommand("prepare", "quantize, label, tokenize, chunk and split a MIDI directory");
  p->add_option("--midi-dir", prep.midi_dir, "directory of .mid files")->required();
  p->add_option("--task", prep.task, "melody, velocity, composer, emotion or pretrain")->required();
  p->add_option("--labels", prep.labels, "note_labels.csv (melody) or sequence_labels.csv (composer, emotion)");
  p->add_option("--rep", prep.rep, "remi or cp");
  p->add_option("--seed", prep.seed, "split seed");
  p->add_option("--chunk-length", prep.chunk_length, "steps per chunk");
  p->add_flag("--strict", prep.strict, "fail on the first unusable file instead of skipping it");
  p->add_flag("--force-four-four", prep.force_four_four, "accept files whose time signature is not 4/4");
  p->add_option("--out", prep.out, "output directory")->required();

  PretrainArgs pre;
  auto* pt = app.add_subcommand("pretrain", "masked-token pre-training");
  pt->add_option("--data", pre.data, "prepared data directory (repeatable)")->required();
  pt->add_option("--corpus", pre.corpus, "all, train-splits or pretrain-only");
  pt->add_option("--preset", pre.preset, "desk or paper");
  pt->add_option("--position", pre.position, "relative_key_query or sinusoidal");
  pre.train.attach(pt);
  pt->add_option("--out", pre.out, "run directory")->required();

  FinetuneArgs ft;
  auto* f = app.add_subcommand("finetune", "train a task head on a prepared labeled directory");
  f->add_option("--data", ft.data, "prepared data directory")->required();
  f->add_option("--task", ft.task, "melody, velocity, composer or emotion")->required();
  f->add_option("--checkpoint", ft.checkpoint, "pre-trained checkpoint for the backbone");
  f->add_flag("--no-pretrain", ft.no_pretrain, "initialize the backbone randomly");
  f->add_option("--freeze", ft.freeze, "none, backbone or attention");
  f->add_flag("--freeze-backbone", ft.freeze_backbone, "train the head only");
  f->add_flag("--freeze-attention", ft.freeze_attention, "train embeddings and head only");
  f->add_option("--preset", ft.preset, "desk or paper (with --no-pretrain)");
  f->add_option("--position", ft.position, "relative_key_query or sinusoidal (with --no-pretrain)");
  ft.train.attach(f);
  f->add_option("--out", ft.out, "run directory")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score a fine-tuned checkpoint on one split");
  e->add_option("--data", ev.data, "prepared data directory")->required();
  e->add_option("--checkpoint", ev.checkpoint, "fine-tuned checkpoint")->required();
  e->add_option("--split", ev.split, "train, valid or test");
  e->add_option("--batch-size", ev.batch_size, "sequences per batch");
  e->add_option("--out", ev.out, "report directory")->required();

  SkylineArgs sky;
  auto* k = app.add_subcommand("skyline", "score the skyline melody heuristic");
  k->add_option("--data", sky.data, "prepared melody data directory")->required();
  k->add_option("--split", sky.split, "train, valid, test or all");
  k->add_option("--out", sky.out, "report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitUsage;
  }

  RunRecord rec;
  for (int i = 0; i < argc; ++i) rec.argv.emplace_back(argv[i]);
  try {
    configure_threads();
    if (*s) return (rec.command = "synth", cmd_synth(synth, rec));
    if (*p) return (rec.command = "prepare", cmd_prepare(prep, rec));
    if (*pt) return (rec.command = "pretrain", cmd_pretrain(pre, rec));
    if (*f) return (rec.command = "finetune", cmd_finetune(ft, rec));
    if (*e) return (rec.command = "eval", cmd_eval(ev, rec));
    if (*k) return (rec.command = "skyline", cmd_skyline(sky, rec));
  } catch (const UsageError& ex) {
    std::cerr << "usage error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const DataError& ex) {
    std::cerr << "data error: " << ex.what() << '\n';
    return kExitData;
  } catch (const NumericError& ex) {
    std::cerr << "numeric error: " << ex.what() << '\n';
    return kExitNumeric;
  } catch (const IoError& ex) {
    std::cerr << "i/o error: " << ex.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& ex) {
    std::cerr << "i/o error: " << ex.what() << '\n';
    return kExitIo;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace midibert
