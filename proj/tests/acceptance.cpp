// Acceptance gates 1-10. Prints one PASS/FAIL line per criterion and exits
// nonzero when any fails. Criterion numbers given on the command line select a
// subset.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "midibert/eval.h"
#include "midibert/masking.h"
#include "midibert/model.h"
#include "midibert/smf_io.h"
#include "midibert/train.h"
#include "skyline_oracle.h"
#include "test_util.h"

using namespace midibert;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path g_work;

// Runs the command-line tool, appending its output to cli.log.
int cli(const std::string& args) {
  const std::string cmd =
      std::string(MIDIBERT_CLI) + " " + args + " >> " + (g_work / "cli.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void cli_ok(const std::string& args) {
  if (cli(args) != 0) throw std::runtime_error("command failed: midibert " + args);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("missing file " + p.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

size_t csv_rows(const fs::path& p) {
  std::istringstream in(slurp(p));
  size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n - 1;
}

std::vector<ChunkedSequence> random_chunks(Representation rep, Rng& rng, int length, int min_content) {
  for (;;) {
    const Score s = fixtures::random_score(rng, {.max_bars = 12, .max_notes = 90});
    auto chunks = encode_and_chunk(s, rep, length);
    if (!chunks.empty() && chunks[0].content_length() >= min_content) {
      chunks.resize(1);
      return chunks;
    }
  }
}

// ---------------------------------------------------------------------------

Outcome vocab_sizes() {
  const int remi = vocab(Representation::kRemi).total_size();
  const int cp = vocab(Representation::kCp).total_size();
  int fields = 0;
  for (int f = 0; f < kCpFields; ++f) fields += vocab(Representation::kCp).field_size(f);
  return {remi == 169 && cp == 176 && fields == 176, fmt("REMI %d, CP %d (fields sum %d)", remi, cp, fields)};
}

Outcome codec_round_trip() {
  Rng rng(20240101);
  int remi_bad = 0, cp_bad = 0, smf_bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const Score s = fixtures::random_score(rng);
    const Score bare = without_velocity(s);
    remi_bad += decode_remi(encode_remi(bare)) != bare;
    cp_bad += decode_cp(encode_cp(bare)) != bare;
    smf_bad += quantize(parse_smf(write_smf(s))) != s;
  }
  return {remi_bad + cp_bad + smf_bad == 0,
          fmt("1000 scores, mismatches: REMI %d, CP %d, SMF %d", remi_bad, cp_bad, smf_bad)};
}

Outcome masking_statistics() {
  bool pass = true;
  std::string detail;
  for (Representation rep : {Representation::kRemi, Representation::kCp}) {
    Rng rng(rep == Representation::kCp ? 31 : 32);
    size_t content = 0, selected = 0, masked = 0, random = 0, kept = 0, coupling_bad = 0;
    for (uint64_t round = 0; content < 100000; ++round) {
      std::vector<ChunkedSequence> chunks;
      for (int i = 0; i < 16; ++i) chunks.push_back(random_chunks(rep, rng, 256, 1)[0]);
      const MaskedBatch m = corrupt(chunks, round);
      for (int b = 0; b < m.batch; ++b) {
        for (int s = 0; s < m.length; ++s) {
          if (chunks[b].is_pad(s)) continue;
          ++content;
          if (!m.selected(b, s)) continue;
          ++selected;
          const Corruption c = m.corruption[static_cast<size_t>(b) * m.length + s];
          masked += c == Corruption::kMasked;
          random += c == Corruption::kRandom;
          kept += c == Corruption::kKept;
          for (int f = 0; f < m.fields; ++f) {
            const size_t i = m.index(b, s, f);
            bool ok = m.loss_mask[i] == 1 && m.target_ids[i] == chunks[b].id(s, f);
            if (c == Corruption::kMasked) ok = ok && m.input_ids[i] == kMaskId;
            if (c == Corruption::kKept) ok = ok && m.input_ids[i] == chunks[b].id(s, f);
            if (c == Corruption::kRandom) {
              ok = ok && m.input_ids[i] >= kFirstContentId && m.input_ids[i] < vocab(rep).field_size(f);
            }
            coupling_bad += !ok;
          }
        }
      }
    }
    const double frac = static_cast<double>(selected) / content;
    const double pm = static_cast<double>(masked) / selected;
    const double pr = static_cast<double>(random) / selected;
    const double pk = static_cast<double>(kept) / selected;
    pass = pass && std::abs(frac - 0.15) <= 0.01 && std::abs(pm - 0.8) <= 0.02 && std::abs(pr - 0.1) <= 0.02 &&
           std::abs(pk - 0.1) <= 0.02 && coupling_bad == 0;
    detail += fmt("%s: %zu steps, selected %.4f, mask/random/keep %.4f/%.4f/%.4f, coupling violations %zu; ",
                  to_string(rep).c_str(), content, frac, pm, pr, pk, coupling_bad);
  }
  return {pass, detail};
}

Outcome desk_gradcheck() {
  bool pass = true;
  std::string detail;
  for (Representation rep : {Representation::kRemi, Representation::kCp}) {
    ModelConfig c = ModelConfig::desk(rep);
    c.note_classes = 3;
    c.seq_classes = 4;
    c.init_std = 0.1;
    EncoderModel<double> m(c, 5);
    Rng rng(6);
    const int length = 24;
    std::vector<ChunkedSequence> rows = random_chunks(rep, rng, length, length);
    std::vector<ChunkedSequence> second = random_chunks(rep, rng, length, 12);
    rows.push_back(second[0]);
    MaskedBatch masked = corrupt(rows, 3);
    for (uint64_t s = 4; masked.num_selected() < 4; ++s) masked = corrupt(rows, s);
    const TokenBatch b = make_token_batch(masked);
    std::vector<int32_t> note_labels(static_cast<size_t>(b.batch) * b.length, kIgnoreLabel);
    for (size_t i = 0; i < note_labels.size(); i += 3) note_labels[i] = static_cast<int32_t>(i % 3);
    const std::vector<int32_t> seq_labels = {2, 0};
    std::vector<ad::Tensor<double>> params;
    for (auto& [name, t] : m.params().entries()) params.push_back(t);
    const double err = ad::gradcheck(
        [&](ad::Tape<double>& t) {
          const auto h = m.forward(t, b);
          auto loss = t.add(m.mlm_loss(t, h, masked), t.cross_entropy(m.note_logits(t, h), note_labels));
          return t.add(loss, t.cross_entropy(m.seq_logits(t, h, b).logits, seq_labels));
        },
        params, rep == Representation::kCp ? 3e-5 : 5e-5, 300, 7);
    pass = pass && err <= 1e-5;
    detail += fmt("%s: max rel err %.3g over 300 coords; ", to_string(rep).c_str(), err);
  }
  return {pass, detail};
}

Outcome mlm_learning() {
  const Representation rep = Representation::kCp;
  const auto corpus = ostinato_corpus(200, 32, 11);
  std::vector<std::string> ids;
  for (const auto& p : corpus) ids.push_back(p.piece_id());
  const SplitManifest man = make_splits(ids, kPretrainRatios, 5);
  std::vector<ChunkedSequence> train, valid;
  for (const auto& p : corpus) {
    const auto chunks = encode_and_chunk(p.score, rep);
    auto& dst = man.split_of(p.piece_id()) == Split::kTrain ? train : valid;
    dst.insert(dst.end(), chunks.begin(), chunks.end());
  }
  EncoderModel<float> m(ModelConfig::desk(rep), 1);
  TrainConfig tc = TrainConfig::pretrain_defaults();
  tc.lr = 1e-3;
  tc.max_epochs = 30;
  tc.patience = 30;
  const TrainLog log = pretrain(m, train, valid, tc);
  double best_cloze = 0;
  for (const auto& e : log.epochs) best_cloze = std::max(best_cloze, e.valid_accuracy);
  double uniform = 0;
  const auto w = cp_field_weights();
  for (int f = 0; f < kCpFields; ++f) uniform += w[f] * std::log(kCpFieldSizes[f]);
  const bool has30 = log.epochs.size() == 30;
  const double last_loss = log.epochs.back().valid_loss;
  return {has30 && best_cloze >= 0.9 && last_loss < uniform,
          fmt("CP ostinato 200x32: %zu epochs, best valid cloze %.4f, epoch-30 valid loss %.4f vs uniform %.4f",
              log.epochs.size(), best_cloze, last_loss, uniform)};
}

Outcome finetune_floors() {
  const fs::path d = g_work / "c6";
  fs::create_directories(d);
  const std::string p = d.string() + "/";
  cli_ok("synth --task melody --pieces 100 --bars 16 --seed 7 --out " + p + "raw");
  cli_ok("prepare --midi-dir " + p + "raw/midi --labels " + p + "raw/note_labels.csv --task melody --out " + p + "mel");
  cli_ok("synth --task pretrain --pieces 300 --bars 16 --seed 11 --out " + p + "preraw");
  cli_ok("prepare --midi-dir " + p + "preraw/midi --task pretrain --out " + p + "pre");
  cli_ok("pretrain --data " + p + "mel --data " + p + "pre --epochs 30 --lr 1e-3 --out " + p + "pt");
  bool pass = true;
  std::string detail;
  for (int seed : {0, 1}) {
    const std::string common =
        "finetune --data " + p + "mel --task melody --epochs 30 --patience 10 --lr 1e-3 --seed " + std::to_string(seed);
    const std::string pre_dir = p + "pre_" + std::to_string(seed);
    const std::string scr_dir = p + "scr_" + std::to_string(seed);
    cli_ok(common + " --checkpoint " + p + "pt/best.mbpt --out " + pre_dir);
    cli_ok(common + " --no-pretrain --out " + scr_dir);
    const auto pre = read_json(fs::path(pre_dir) / "test/metrics.json");
    const auto scr = read_json(fs::path(scr_dir) / "test/metrics.json");
    const double acc_pre = pre["metrics"]["accuracy"].get<double>();
    const double acc_scr = scr["metrics"]["accuracy"].get<double>();
    const double majority = pre["extra"]["majority_baseline_accuracy"].get<double>();
    pass = pass && acc_pre >= 0.95 && acc_scr >= 0.95 && acc_pre > majority && acc_scr > majority &&
           acc_pre >= acc_scr;
    detail += fmt("seed %d: pretrained %.4f, scratch %.4f, majority %.4f; ", seed, acc_pre, acc_scr, majority);
  }
  return {pass, detail};
}

Outcome skyline_equivalence() {
  Rng rng(2025);
  int mismatches = 0;
  for (int i = 0; i < 500; ++i) {
    const Score s = fixtures::random_score(rng, {.max_bars = 2, .max_notes = 14, .velocity = false, .chord_prob = 0.4});
    mismatches += skyline(s) != fixtures::skyline_oracle(s);
  }
  std::vector<int32_t> pred, gold;
  for (const auto& p : synth_corpus({.task = Task::kMelody, .pieces = 100, .bars_per_piece = 16}, 7)) {
    const auto sky = skyline(p.score);
    const auto bin = merge_melody_binary(*p.note_labels);
    pred.insert(pred.end(), sky.begin(), sky.end());
    gold.insert(gold.end(), bin.begin(), bin.end());
  }
  const double acc = accuracy(pred, gold);
  return {mismatches == 0 && acc == 1.0,
          fmt("oracle mismatches %d/500, synthetic melody binary accuracy %.4f over %zu notes", mismatches, acc,
              gold.size())};
}

Outcome pad_invariance() {
  bool pass = true;
  std::string detail;
  for (Representation rep : {Representation::kRemi, Representation::kCp}) {
    ModelConfig c = ModelConfig::desk(rep);
    c.note_classes = 3;
    c.seq_classes = 4;
    const EncoderModel<float> m(c, 9);
    Rng rng(10);
    double drift = 0;
    int argmax_changes = 0;
    for (int trial = 0; trial < 8; ++trial) {
      const ChunkedSequence full = random_chunks(rep, rng, kChunkLength, 40)[0];
      const int content = full.content_length();
      std::vector<float> ref_logits;
      int ref_argmax = -1;
      for (int length : {kChunkLength, content, content + 1, content + 37, 256}) {
        if (length > kChunkLength || length < content) continue;
        ChunkedSequence row = full;
        row.ids.resize(static_cast<size_t>(length) * row.num_fields());
        const std::vector<ChunkedSequence> rows = {row};
        const TokenBatch b = make_token_batch(rows);
        ad::Tape<float> tape({.record = false});
        const auto h = m.forward(tape, b);
        const auto note = m.note_logits(tape, h);
        const auto seq = m.seq_logits(tape, h, b).logits;
        std::vector<float> logits(note.data().begin(), note.data().begin() + static_cast<size_t>(content) * 3);
        const int am = static_cast<int>(std::max_element(seq.data().begin(), seq.data().end()) - seq.data().begin());
        if (ref_argmax < 0) {
          ref_logits = logits;
          ref_argmax = am;
          continue;
        }
        for (size_t i = 0; i < logits.size(); ++i) {
          drift = std::max(drift, static_cast<double>(std::abs(logits[i] - ref_logits[i])));
        }
        argmax_changes += am != ref_argmax;
      }
    }
    pass = pass && drift <= 1e-5 && argmax_changes == 0;
    detail += fmt("%s: max note-logit drift %.3g, sequence argmax changes %d; ", to_string(rep).c_str(), drift,
                  argmax_changes);
  }
  return {pass, detail};
}

Outcome determinism() {
  std::vector<std::string> files;
  for (int run = 0; run < 2; ++run) {
    const std::string p = (g_work / ("c9_" + std::to_string(run))).string() + "/";
    cli_ok("synth --task melody --pieces 50 --seed 21 --out " + p + "raw");
    cli_ok("prepare --midi-dir " + p + "raw/midi --labels " + p + "raw/note_labels.csv --task melody --seed 2 --out " +
           p + "mel");
    cli_ok("finetune --data " + p + "mel --task melody --no-pretrain --seed 3 --out " + p + "ft");
    cli_ok("eval --data " + p + "mel --checkpoint " + p + "ft/best.mbpt --split test --out " + p + "ev");
    std::string all;
    for (const char* f : {"ft/train_summary.json", "ft/test/metrics.json", "ft/test/confusion.csv", "ev/metrics.json",
                          "ev/confusion.csv", "mel/manifest.csv", "mel/chunks.jsonl"}) {
      all += slurp(p + f) + '\n';
    }
    files.push_back(all);
  }
  const double acc = read_json(g_work / "c9_0/ev/metrics.json")["metrics"]["accuracy"].get<double>();
  return {files[0] == files[1],
          fmt("smoke pipeline twice: metrics %s (test accuracy %.4f)", files[0] == files[1] ? "identical" : "differ",
              acc)};
}

Outcome ablation_plumbing() {
  const std::string p = (g_work / "c10").string() + "/";
  cli_ok("synth --task melody --pieces 30 --bars 4 --seed 5 --out " + p + "mel_raw");
  cli_ok("prepare --midi-dir " + p + "mel_raw/midi --labels " + p + "mel_raw/note_labels.csv --task melody --out " + p +
         "mel");
  cli_ok("synth --task composer --pieces 20 --bars 4 --seed 6 --out " + p + "comp_raw");
  cli_ok("prepare --midi-dir " + p + "comp_raw/midi --labels " + p +
         "comp_raw/sequence_labels.csv --task composer --out " + p + "comp");
  cli_ok("synth --task pretrain --pieces 12 --bars 4 --seed 7 --out " + p + "pop_raw");
  cli_ok("prepare --midi-dir " + p + "pop_raw/midi --task pretrain --out " + p + "pop");
  std::vector<size_t> counts;
  for (const char* sel : {"all", "train-splits", "pretrain-only"}) {
    const std::string out = p + "pt_" + sel;
    cli_ok("pretrain --data " + p + "mel --data " + p + "comp --data " + p + "pop --corpus " + sel +
           " --epochs 1 --batch-size 8 --out " + out);
    counts.push_back(csv_rows(out + "/pretrain_manifest.csv"));
  }
  const bool counts_ok = counts[0] == 62 && counts[1] == 24 + 16 + 12 && counts[2] == 12;

  cli_ok("finetune --data " + p + "mel --task melody --checkpoint " + p + "pt_all/best.mbpt --freeze-backbone" +
         " --epochs 2 --batch-size 8 --out " + p + "frozen");
  const auto pre = load_checkpoint<float>(p + "pt_all/best.mbpt");
  const auto ft = load_checkpoint<float>(p + "frozen/best.mbpt");
  size_t compared = 0, changed = 0;
  for (const auto& [name, t] : pre.params().entries()) {
    if (!is_backbone_parameter(name)) continue;
    ++compared;
    const auto& u = ft.params().get(name);
    changed += t.shape() != u.shape() ||
               !std::equal(t.data().begin(), t.data().end(), u.data().begin(), u.data().end(),
                           [](float a, float b) { return std::memcmp(&a, &b, sizeof a) == 0; });
  }
  return {counts_ok && compared > 0 && changed == 0,
          fmt("manifest counts all/train-splits/pretrain-only = %zu/%zu/%zu; frozen backbone tensors changed %zu/%zu",
              counts[0], counts[1], counts[2], changed, compared)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, vocab_sizes},     {2, codec_round_trip}, {3, masking_statistics}, {4, desk_gradcheck},
      {5, mlm_learning},    {6, finetune_floors},  {7, skyline_equivalence}, {8, pad_invariance},
      {9, determinism},     {10, ablation_plumbing},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  g_work = fixtures::temp_dir("acceptance");
  int failures = 0;
  for (const auto& [n, run] : criteria) {
    if (!selected.empty() && !selected.count(n)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d: %s[%.1fs]\n", o.pass ? "PASS" : "FAIL", n, o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
