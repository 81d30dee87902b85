#include <gtest/gtest.h>

#include <cmath>

#include "midibert/corpus.h"
#include "midibert/error.h"
#include "midibert/train.h"
#include "test_util.h"

using namespace midibert;
using namespace midibert::ad;

namespace {

ModelConfig tiny(Representation rep) {
  ModelConfig c = ModelConfig::desk(rep);
  c.heads = 2;
  c.hidden = 16;
  c.ff_dim = 32;
  c.rel_clip = 8;
  return c;
}

std::vector<ChunkedSequence> ostinato_chunks(Representation rep, int pieces, uint64_t seed) {
  std::vector<ChunkedSequence> out;
  for (const auto& p : ostinato_corpus(pieces, 4, seed)) {
    for (auto& c : encode_and_chunk(p.score, rep, 32)) out.push_back(std::move(c));
  }
  return out;
}

std::vector<LabeledChunk> melody_chunks(Representation rep, int pieces, uint64_t seed) {
  std::vector<LabeledChunk> out;
  for (const auto& p : synth_corpus({Task::kMelody, pieces, 2, 6, ""}, seed)) {
    for (auto& c : propagate_to_chunks(p, encode_and_chunk(p.score, rep, 32))) out.push_back(std::move(c));
  }
  return out;
}

template <typename T>
std::vector<T> values(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

}  // namespace

TEST(Config, Defaults) {
  const TrainConfig p = TrainConfig::pretrain_defaults();
  EXPECT_EQ(p.batch_size, 12);
  EXPECT_DOUBLE_EQ(p.lr, 2e-5);
  EXPECT_DOUBLE_EQ(p.weight_decay, 0.01);
  EXPECT_NO_THROW(p.validate());
  EXPECT_NO_THROW(TrainConfig::finetune_defaults().validate());
}

TEST(Config, TextOverrides) {
  TrainConfig c;
  apply_config_text(c, "# comment\nlr = 0.001\n\nbatch_size=4\nprecision = double\nfreeze = backbone\n");
  EXPECT_DOUBLE_EQ(c.lr, 1e-3);
  EXPECT_EQ(c.batch_size, 4);
  EXPECT_EQ(c.precision, Precision::kDouble);
  EXPECT_EQ(c.freeze, FreezeMode::kBackbone);
  EXPECT_THROW(apply_config_text(c, "learning_rate = 1"), UsageError);
  EXPECT_THROW(apply_config_text(c, "lr = fast"), UsageError);
  c.patience = c.max_epochs + 1;
  EXPECT_THROW(c.validate(), UsageError);
}

TEST(AdamWTest, ZeroGradientOnlyDecays) {
  ParameterStore<double> ps;
  ps.add("w", Tensor<double>::from_data({3}, {1.0, -2.0, 0.5}, true));
  AdamW<double> opt(0.1, 0.01);
  opt.step(ps);
  const auto w = ps.get("w").data();
  EXPECT_DOUBLE_EQ(w[0], 1.0 * (1 - 0.1 * 0.01));
  EXPECT_DOUBLE_EQ(w[1], -2.0 * (1 - 0.1 * 0.01));
  EXPECT_DOUBLE_EQ(w[2], 0.5 * (1 - 0.1 * 0.01));
}

TEST(AdamWTest, ConstantGradientStepsByLr) {
  ParameterStore<double> ps;
  ps.add("w", Tensor<double>::from_data({2}, {0.0, 0.0}, true));
  AdamW<double> opt(0.01, 0.0);
  for (int i = 0; i < 50; ++i) {
    auto g = ps.get("w").grad();
    g[0] = 3.0;
    g[1] = -0.2;
    const double before0 = ps.get("w").data()[0], before1 = ps.get("w").data()[1];
    opt.step(ps);
    EXPECT_NEAR(ps.get("w").data()[0] - before0, -0.01, 1e-8);
    EXPECT_NEAR(ps.get("w").data()[1] - before1, 0.01, 1e-7);
  }
  EXPECT_EQ(opt.steps(), 50);
}

TEST(AdamWTest, FrozenUntouchedAndNonFiniteRejected) {
  ParameterStore<double> ps;
  ps.add("frozen", Tensor<double>::from_data({1}, {1.0}, false));
  ps.add("w", Tensor<double>::from_data({1}, {1.0}, true));
  AdamW<double> opt(0.1, 0.1);
  opt.step(ps);
  EXPECT_EQ(ps.get("frozen").data()[0], 1.0);
  ps.get("w").grad()[0] = std::nan("");
  try {
    opt.step(ps);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("w"), std::string::npos);
  }
}

TEST(AdamWTest, QuadraticBowlDecreases) {
  ParameterStore<double> ps;
  ps.add("theta", Tensor<double>::from_data({4}, {10.0, -8.0, 6.0, -12.0}, true));
  AdamW<double> opt(0.05, 0.0);
  double prev = 1e300;
  for (int step = 0; step < 100; ++step) {
    Tape<double> tape;
    auto& th = ps.get("theta");
    const auto loss = tape.sum(tape.mul(th, th));
    th.zero_grad();
    tape.backward(loss);
    if (step >= 5) EXPECT_LT(loss.item(), prev) << "step " << step;
    prev = loss.item();
    opt.step(ps);
  }
}

TEST(Clip, ScalesToMaxNorm) {
  ParameterStore<double> ps;
  auto a = ps.add("a", Tensor<double>::zeros({2}, true));
  auto b = ps.add("b", Tensor<double>::zeros({1}, true));
  a.grad()[0] = 3;
  a.grad()[1] = 0;
  b.grad()[0] = 4;
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-6);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-6);
  EXPECT_NEAR(clip_grad_norm(ps, 10.0), 1.0, 1e-6);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-6);
  zero_grads(ps);
  EXPECT_EQ(a.grad()[0], 0.0);
}

TEST(EarlyStop, StrictImprovement) {
  EarlyStopping lower(2, false);
  EXPECT_TRUE(lower.update(1, 3.0));
  EXPECT_TRUE(lower.update(2, 2.0));
  EXPECT_FALSE(lower.update(3, 2.0));
  EXPECT_FALSE(lower.should_stop());
  EXPECT_FALSE(lower.update(4, 2.5));
  EXPECT_TRUE(lower.should_stop());
  EXPECT_EQ(lower.best_epoch(), 2);
  EXPECT_EQ(lower.best_value(), 2.0);

  EarlyStopping higher(1, true);
  EXPECT_TRUE(higher.update(1, 0.5));
  EXPECT_TRUE(higher.update(2, 0.6));
  EXPECT_FALSE(higher.update(3, 0.6));
  EXPECT_TRUE(higher.should_stop());
}

TEST(Pretrain, DeterministicAcrossRuns) {
  const auto train = ostinato_chunks(Representation::kCp, 12, 1);
  const auto valid = ostinato_chunks(Representation::kCp, 3, 2);
  TrainConfig tc;
  tc.max_epochs = 1;
  tc.patience = 1;
  tc.batch_size = 4;
  tc.lr = 1e-3;
  std::vector<TrainLog> logs;
  for (int run = 0; run < 2; ++run) {
    EncoderModel<float> m(tiny(Representation::kCp), 3);
    logs.push_back(pretrain(m, train, valid, tc));
  }
  EXPECT_EQ(logs[0].epochs[0].train_loss, logs[1].epochs[0].train_loss);
  EXPECT_EQ(logs[0].epochs[0].valid_loss, logs[1].epochs[0].valid_loss);
  EXPECT_EQ(logs[0].summary_json(), logs[1].summary_json());
}

TEST(Pretrain, LossDropsAndBestRestored) {
  const auto dir = fixtures::temp_dir("pretrain");
  for (Representation rep : {Representation::kRemi, Representation::kCp}) {
    const auto train = ostinato_chunks(rep, 24, 1);
    const auto valid = ostinato_chunks(rep, 6, 2);
    TrainConfig tc;
    tc.max_epochs = 6;
    tc.patience = 6;
    tc.batch_size = 8;
    tc.lr = 1e-3;
    EncoderModel<float> m(tiny(rep), 4);
    const std::string ckpt = (dir / (to_string(rep) + ".mbpt")).string();
    const TrainLog log = pretrain(m, train, valid, tc, ckpt);
    EXPECT_EQ(log.monitor, "valid_loss");
    EXPECT_LT(log.best().valid_loss, log.epochs.front().valid_loss);
    // in-memory model and checkpoint both hold the best epoch
    const auto again = evaluate_mlm(m, valid, tc.batch_size, mix_seed({tc.seed, 0x7A11D}));
    const EncoderModel<float> saved = load_checkpoint<float>(ckpt);
    const auto from_file = evaluate_mlm(saved, valid, tc.batch_size, mix_seed({tc.seed, 0x7A11D}));
    EXPECT_EQ(again.loss, from_file.loss);
    EXPECT_EQ(again.loss, log.best().valid_loss);
  }
}

TEST(Pretrain, EmptyCorpusThrows) {
  EncoderModel<float> m(tiny(Representation::kCp), 1);
  EXPECT_THROW(pretrain(m, std::vector<ChunkedSequence>{}, ostinato_chunks(Representation::kCp, 2, 1), TrainConfig{}),
               DataError);
}

TEST(Finetune, FreezeBackboneLeavesItBitwise) {
  const auto chunks = melody_chunks(Representation::kCp, 12, 3);
  ModelConfig mc = tiny(Representation::kCp);
  mc.mlm_head = false;
  mc.note_classes = 3;
  for (FreezeMode mode : {FreezeMode::kBackbone, FreezeMode::kAttention}) {
    EncoderModel<float> m(mc, 5);
    const EncoderModel<float> before(mc, 5);
    TrainConfig tc = TrainConfig::finetune_defaults();
    tc.max_epochs = 2;
    tc.patience = 2;
    tc.lr = 1e-3;
    tc.batch_size = 4;
    tc.freeze = mode;
    finetune(m, Task::kMelody, chunks, chunks, tc);
    bool head_changed = false, embed_changed = false;
    for (const auto& [name, t] : m.params().entries()) {
      const bool same = values(t) == values(before.params().get(name));
      if (is_frozen(name, mode)) EXPECT_TRUE(same) << name;
      if (name.rfind("heads.", 0) == 0) head_changed |= !same;
      if (name.rfind("embed.", 0) == 0) embed_changed |= !same;
    }
    EXPECT_TRUE(head_changed);
    EXPECT_EQ(embed_changed, mode == FreezeMode::kAttention);
  }
}

TEST(Finetune, HeadMustMatchTask) {
  const auto chunks = melody_chunks(Representation::kCp, 4, 3);
  ModelConfig mc = tiny(Representation::kCp);
  mc.note_classes = 6;
  EncoderModel<float> m(mc, 5);
  EXPECT_THROW(finetune(m, Task::kMelody, chunks, chunks, TrainConfig::finetune_defaults()), DataError);
}

TEST(Finetune, SequenceTaskRuns) {
  std::vector<LabeledChunk> chunks;
  for (const auto& p : synth_corpus({Task::kEmotion, 8, 2, 6, ""}, 1)) {
    for (auto& c : propagate_to_chunks(p, encode_and_chunk(p.score, Representation::kRemi, 32))) chunks.push_back(c);
  }
  ModelConfig mc = tiny(Representation::kRemi);
  mc.mlm_head = false;
  mc.seq_classes = 4;
  EncoderModel<float> m(mc, 2);
  TrainConfig tc = TrainConfig::finetune_defaults();
  tc.max_epochs = 2;
  tc.patience = 2;
  tc.batch_size = 4;
  const TrainLog log = finetune(m, Task::kEmotion, chunks, chunks, tc);
  EXPECT_EQ(log.monitor, "valid_accuracy");
  const TaskPredictions p = predict_task(m, Task::kEmotion, chunks, 4);
  EXPECT_EQ(p.predicted.size(), chunks.size());
  EXPECT_EQ(p.actual.size(), chunks.size());
}

TEST(Log, CsvHeader) {
  TrainLog log;
  log.epochs.push_back({1, 0.5, 0.25, 0.4, 0.3, 1.0});
  log.best_epoch = 1;
  EXPECT_EQ(log.to_csv().substr(0, log.to_csv().find('\n')),
            "epoch,train_loss,train_accuracy,valid_loss,valid_accuracy,seconds");
  EXPECT_EQ(log.summary_json().find("seconds"), std::string::npos);
}
