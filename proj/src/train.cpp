#include "midibert/train.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "midibert/error.h"
#include "midibert/masking.h"
#include "midibert/rng.h"

namespace midibert {

using ad::Tape;
using ad::TapeOptions;
using ad::Tensor;
using json = nlohmann::json;

std::string to_string(Precision p) { return p == Precision::kSingle ? "single" : "double"; }

Precision parse_precision(const std::string& name) {
  if (name == "single" || name == "float32") return Precision::kSingle;
  if (name == "double" || name == "float64") return Precision::kDouble;
  throw UsageError("unknown precision '" + name + "' (expected single or double)");
}

TrainConfig TrainConfig::pretrain_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::finetune_defaults() {
  TrainConfig c;
  c.max_epochs = 10;
  c.patience = 3;
  return c;
}

void TrainConfig::validate() const {
  if (batch_size <= 0) throw UsageError("batch_size must be positive");
  if (!(lr > 0)) throw UsageError("lr must be positive");
  if (!(weight_decay >= 0)) throw UsageError("weight_decay must be non-negative");
  if (max_epochs <= 0) throw UsageError("max_epochs must be positive");
  if (patience <= 0) throw UsageError("patience must be positive");
  if (patience > max_epochs) throw UsageError("patience must not exceed max_epochs");
  if (!(clip_norm >= 0)) throw UsageError("clip_norm must be non-negative");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw UsageError("config key " + key + ": '" + v + "' is not a number");
  return out;
}

int64_t parse_int(const std::string& key, const std::string& v) {
  size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw UsageError("config key " + key + ": '" + v + "' is not an integer");
  return out;
}

}  // namespace

void apply_config_text(TrainConfig& c, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "batch_size") {
      c.batch_size = static_cast<int>(parse_int(key, value));
    } else if (key == "lr") {
      c.lr = parse_double(key, value);
    } else if (key == "weight_decay") {
      c.weight_decay = parse_double(key, value);
    } else if (key == "max_epochs") {
      c.max_epochs = static_cast<int>(parse_int(key, value));
    } else if (key == "patience") {
      c.patience = static_cast<int>(parse_int(key, value));
    } else if (key == "seed") {
      c.seed = static_cast<uint64_t>(parse_int(key, value));
    } else if (key == "clip_norm") {
      c.clip_norm = parse_double(key, value);
    } else if (key == "precision") {
      c.precision = parse_precision(value);
    } else if (key == "freeze") {
      c.freeze = parse_freeze_mode(value);
    } else {
      throw UsageError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
}

void apply_config_file(TrainConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  apply_config_text(c, buf.str());
}

std::string to_json(const TrainConfig& c) {
  const json j = {{"batch_size", c.batch_size}, {"lr", c.lr},
                  {"weight_decay", c.weight_decay}, {"max_epochs", c.max_epochs},
                  {"patience", c.patience}, {"seed", c.seed},
                  {"clip_norm", c.clip_norm}, {"precision", to_string(c.precision)},
                  {"freeze", to_string(c.freeze)}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename T>
void AdamW<T>::step(ParameterStore<T>& params) {
  for (auto& [name, t] : params.entries()) {
    if (!t.requires_grad() || !t.has_grad()) continue;
    for (T g : std::as_const(t).grad()) {
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in parameter " + name);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double decay = 1.0 - lr_ * wd_;
  for (auto& [name, t] : params.entries()) {
    if (!t.requires_grad()) continue;
    auto& [m, v] = moments_[name];
    const size_t n = static_cast<size_t>(t.numel());
    if (m.empty()) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
    }
    auto w = t.data();
    const std::span<const T> g = std::as_const(t).grad();
    for (size_t i = 0; i < n; ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      w[i] = static_cast<T>(static_cast<double>(w[i]) * decay - lr_ * update);
    }
  }
}

template <typename T>
double clip_grad_norm(ParameterStore<T>& params, double max_norm) {
  double sq = 0;
  for (auto& [name, t] : params.entries()) {
    if (!t.requires_grad() || !t.has_grad()) continue;
    for (T g : std::as_const(t).grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / (norm + 1e-6));
    for (auto& [name, t] : params.entries()) {
      if (!t.requires_grad() || !t.has_grad()) continue;
      for (T& g : t.grad()) g *= s;
    }
  }
  return norm;
}

template <typename T>
void zero_grads(ParameterStore<T>& params) {
  for (auto& [name, t] : params.entries()) t.zero_grad();
}

template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm(ParameterStore<float>&, double);
template double clip_grad_norm(ParameterStore<double>&, double);
template void zero_grads(ParameterStore<float>&);
template void zero_grads(ParameterStore<double>&);

bool EarlyStopping::update(int epoch, double value) {
  const bool better = !has_best_ || (higher_ ? value > best_ : value < best_);
  if (better) {
    has_best_ = true;
    best_ = value;
    best_epoch_ = epoch;
    bad_epochs_ = 0;
  } else {
    ++bad_epochs_;
  }
  return better;
}

// ---------------------------------------------------------------------------
// Logs

const EpochRecord& TrainLog::best() const {
  for (const auto& e : epochs) {
    if (e.epoch == best_epoch) return e;
  }
  throw UsageError("training log has no best epoch");
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os.precision(9);
  os << "epoch,train_loss,train_accuracy,valid_loss,valid_accuracy,seconds\n";
  for (const auto& e : epochs) {
    os << e.epoch << ',' << e.train_loss << ',' << e.train_accuracy << ',' << e.valid_loss << ',' << e.valid_accuracy
       << ',' << e.seconds << '\n';
  }
  return os.str();
}

std::string TrainLog::summary_json() const {
  json rows = json::array();
  for (const auto& e : epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"train_accuracy", e.train_accuracy},
                    {"valid_loss", e.valid_loss},
                    {"valid_accuracy", e.valid_accuracy}});
  }
  json j = {{"kind", kind},
            {"monitor", monitor},
            {"epochs_run", epochs.size()},
            {"best_epoch", best_epoch},
            {"stopped_early", stopped_early},
            {"epochs", rows}};
  if (!epochs.empty()) {
    const auto& b = best();
    j["best"] = {{"valid_loss", b.valid_loss}, {"valid_accuracy", b.valid_accuracy}};
  }
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Loops

namespace {

using Clock = std::chrono::steady_clock;

template <typename T>
std::vector<std::vector<T>> snapshot(const EncoderModel<T>& model) {
  std::vector<std::vector<T>> out;
  for (const auto& [name, t] : model.params().entries()) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

template <typename T>
void restore(EncoderModel<T>& model, const std::vector<std::vector<T>>& saved) {
  auto& entries = model.params().entries();
  for (size_t i = 0; i < entries.size(); ++i) std::copy(saved[i].begin(), saved[i].end(), entries[i].second.data().begin());
}

int32_t argmax_row(std::span<const float> row) {
  return static_cast<int32_t>(std::max_element(row.begin(), row.end()) - row.begin());
}
int32_t argmax_row(std::span<const double> row) {
  return static_cast<int32_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

template <typename T>
int32_t argmax_at(const Tensor<T>& logits, int64_t row) {
  const int64_t c = logits.dim(-1);
  return argmax_row(logits.data().subspan(static_cast<size_t>(row * c), static_cast<size_t>(c)));
}

struct Selection {
  std::vector<int64_t> rows;
  std::vector<int32_t> targets;
};

Selection selected_rows(const MaskedBatch& mb) {
  Selection s;
  for (int b = 0; b < mb.batch; ++b) {
    for (int step = 0; step < mb.length; ++step) {
      if (!mb.selected(b, step)) continue;
      s.rows.push_back(static_cast<int64_t>(b) * mb.length + step);
      for (int f = 0; f < mb.fields; ++f) s.targets.push_back(mb.target_ids[mb.index(b, step, f)]);
    }
  }
  return s;
}

template <typename T>
size_t cloze_correct(const std::vector<Tensor<T>>& logits, const Selection& sel) {
  const size_t fields = logits.size();
  size_t correct = 0;
  for (size_t r = 0; r < sel.rows.size(); ++r) {
    bool ok = true;
    for (size_t f = 0; f < fields && ok; ++f) ok = argmax_at(logits[f], static_cast<int64_t>(r)) == sel.targets[r * fields + f];
    correct += ok;
  }
  return correct;
}

std::vector<ChunkedSequence> gather(std::span<const ChunkedSequence> all, std::span<const size_t> idx) {
  std::vector<ChunkedSequence> out;
  out.reserve(idx.size());
  for (size_t i : idx) out.push_back(all[i]);
  return out;
}

struct StepOutcome {
  double loss = 0;
  size_t count = 0;
  size_t correct = 0;
};

template <typename T>
StepOutcome mlm_batch(const EncoderModel<T>& model, std::span<const ChunkedSequence> chunks, uint64_t mask_seed,
                      Tape<T>& tape, bool train) {
  MaskedBatch mb = corrupt(chunks, mask_seed);
  if (mb.num_selected() == 0) return {};
  TokenBatch tb = make_token_batch(mb);
  const int len = tb.content_length();
  tb = tb.truncated(len);
  mb = mb.truncated(len);
  const Selection sel = selected_rows(mb);
  const Tensor<T> hidden = model.forward(tape, tb);
  const auto logits = model.mlm_logits(tape, hidden, sel.rows);
  const Tensor<T> loss = EncoderModel<T>::mlm_loss_from_logits(tape, model.config().representation, logits, sel.targets);
  const double value = static_cast<double>(loss.item());
  if (!std::isfinite(value)) throw NumericError("non-finite MLM loss");
  if (train) tape.backward(loss);
  return {value, sel.rows.size(), cloze_correct(logits, sel)};
}

constexpr uint64_t kShuffleStream = 0x5155FF1EULL;
constexpr uint64_t kMaskStream = 0x3A5CULL;
constexpr uint64_t kDropoutStream = 0xD0ULL;
constexpr uint64_t kValidStream = 0x7A11DULL;

}  // namespace

template <typename T>
MlmEvaluation evaluate_mlm(const EncoderModel<T>& model, std::span<const ChunkedSequence> chunks, int batch_size,
                           uint64_t seed) {
  MlmEvaluation out;
  double loss_sum = 0;
  size_t correct = 0;
  for (size_t start = 0, bi = 0; start < chunks.size(); start += batch_size, ++bi) {
    const size_t n = std::min<size_t>(batch_size, chunks.size() - start);
    Tape<T> tape(TapeOptions{false, false, 0});
    const StepOutcome r = mlm_batch(model, chunks.subspan(start, n), mix_seed({seed, bi}), tape, false);
    loss_sum += r.loss * r.count;
    out.selected_steps += r.count;
    correct += r.correct;
  }
  if (out.selected_steps > 0) {
    out.loss = loss_sum / out.selected_steps;
    out.cloze_accuracy = static_cast<double>(correct) / out.selected_steps;
  }
  return out;
}

template <typename T>
TrainLog pretrain(EncoderModel<T>& model, std::span<const ChunkedSequence> train, std::span<const ChunkedSequence> valid,
                  const TrainConfig& config, const std::string& checkpoint_path, const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty()) throw DataError("pre-training corpus has no training chunks");
  if (valid.empty()) throw DataError("pre-training corpus has no validation chunks");
  if (!model.config().mlm_head) throw UsageError("pre-training needs a model with an MLM head");
  model.apply_freeze(config.freeze);

  TrainLog log;
  log.kind = "pretrain";
  log.monitor = "valid_loss";
  AdamW<T> opt(config.lr, config.weight_decay);
  EarlyStopping stopper(config.patience, false);
  std::vector<std::vector<T>> best = snapshot(model);
  std::vector<size_t> order(train.size());

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = Clock::now();
    std::iota(order.begin(), order.end(), 0);
    Rng(mix_seed({config.seed, kShuffleStream, static_cast<uint64_t>(epoch)})).shuffle(order.begin(), order.end());
    double loss_sum = 0;
    size_t count = 0, correct = 0;
    for (size_t start = 0, bi = 0; start < order.size(); start += config.batch_size, ++bi) {
      const size_t n = std::min<size_t>(config.batch_size, order.size() - start);
      const auto batch = gather(train, std::span<const size_t>(order).subspan(start, n));
      const uint64_t e = static_cast<uint64_t>(epoch);
      zero_grads(model.params());
      Tape<T> tape(TapeOptions{true, true, mix_seed({config.seed, kDropoutStream, e, bi})});
      const StepOutcome r = mlm_batch(model, batch, mix_seed({config.seed, kMaskStream, e, bi}), tape, true);
      if (r.count == 0) continue;
      clip_grad_norm(model.params(), config.clip_norm);
      opt.step(model.params());
      loss_sum += r.loss * r.count;
      count += r.count;
      correct += r.correct;
    }
    const MlmEvaluation v = evaluate_mlm(model, valid, config.batch_size, mix_seed({config.seed, kValidStream}));
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = count ? loss_sum / count : 0.0;
    rec.train_accuracy = count ? static_cast<double>(correct) / count : 0.0;
    rec.valid_loss = v.loss;
    rec.valid_accuracy = v.cloze_accuracy;
    rec.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    log.epochs.push_back(rec);
    if (stopper.update(epoch, v.loss)) {
      best = snapshot(model);
      if (!checkpoint_path.empty()) save_checkpoint(model, checkpoint_path);
    }
    if (on_epoch) on_epoch(rec);
    if (stopper.should_stop()) {
      log.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  log.best_epoch = stopper.best_epoch();
  restore(model, best);
  return log;
}

namespace {

void check_task_fit(const ModelConfig& mc, Task task) {
  if (is_note_level(task)) {
    if (mc.note_classes != num_classes(task)) {
      throw DataError("model note head has " + std::to_string(mc.note_classes) + " classes but task " + to_string(task) +
                      " needs " + std::to_string(num_classes(task)));
    }
  } else if (is_sequence_level(task)) {
    if (mc.seq_classes != num_classes(task)) {
      throw DataError("model sequence head has " + std::to_string(mc.seq_classes) + " classes but task " +
                      to_string(task) + " needs " + std::to_string(num_classes(task)));
    }
  } else {
    throw DataError("task " + to_string(task) + " has no fine-tuning labels");
  }
}

void check_labels(std::span<const LabeledChunk> chunks, Task task) {
  for (const auto& c : chunks) {
    const std::string where = c.chunk.piece_id + " chunk " + std::to_string(c.chunk.chunk_index);
    if (is_note_level(task)) {
      if (static_cast<int>(c.step_labels.size()) != c.chunk.length()) throw DataError("missing note labels for " + where);
      for (int32_t l : c.step_labels) {
        if (l != kIgnoreLabel && (l < 0 || l >= num_classes(task))) throw DataError("label out of range in " + where);
      }
    } else if (c.sequence_label < 0 || c.sequence_label >= num_classes(task)) {
      throw DataError("missing or out-of-range sequence label for " + where);
    }
  }
}

struct TaskBatch {
  TokenBatch tokens;
  std::vector<int32_t> labels;
  size_t labeled = 0;
};

TaskBatch make_task_batch(std::span<const LabeledChunk> all, std::span<const size_t> idx, Task task) {
  std::vector<const ChunkedSequence*> ptrs;
  for (size_t i : idx) ptrs.push_back(&all[i].chunk);
  TaskBatch tb;
  tb.tokens = make_token_batch(std::span<const ChunkedSequence* const>(ptrs));
  const int len = tb.tokens.content_length();
  tb.tokens = tb.tokens.truncated(len);
  for (size_t i : idx) {
    if (is_note_level(task)) {
      tb.labels.insert(tb.labels.end(), all[i].step_labels.begin(), all[i].step_labels.begin() + len);
    } else {
      tb.labels.push_back(all[i].sequence_label);
    }
  }
  for (int32_t l : tb.labels) tb.labeled += l != kIgnoreLabel;
  return tb;
}

template <typename T>
Tensor<T> task_logits(const EncoderModel<T>& model, Tape<T>& tape, const TaskBatch& tb, Task task) {
  const Tensor<T> hidden = model.forward(tape, tb.tokens);
  return is_note_level(task) ? model.note_logits(tape, hidden) : model.seq_logits(tape, hidden, tb.tokens).logits;
}

}  // namespace

template <typename T>
TaskPredictions predict_task(const EncoderModel<T>& model, Task task, std::span<const LabeledChunk> chunks,
                             int batch_size) {
  check_task_fit(model.config(), task);
  check_labels(chunks, task);
  TaskPredictions out;
  double loss_sum = 0;
  std::vector<size_t> idx;
  for (size_t start = 0; start < chunks.size(); start += batch_size) {
    const size_t n = std::min<size_t>(batch_size, chunks.size() - start);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), start);
    const TaskBatch tb = make_task_batch(chunks, idx, task);
    if (tb.labeled == 0) continue;
    Tape<T> tape(TapeOptions{false, false, 0});
    const Tensor<T> logits = task_logits(model, tape, tb, task);
    loss_sum += static_cast<double>(tape.cross_entropy(logits, tb.labels).item()) * tb.labeled;
    for (size_t r = 0; r < tb.labels.size(); ++r) {
      if (tb.labels[r] == kIgnoreLabel) continue;
      out.predicted.push_back(argmax_at(logits, static_cast<int64_t>(r)));
      out.actual.push_back(tb.labels[r]);
    }
  }
  if (!out.actual.empty()) out.loss = loss_sum / out.actual.size();
  return out;
}

template <typename T>
TrainLog finetune(EncoderModel<T>& model, Task task, std::span<const LabeledChunk> train,
                  std::span<const LabeledChunk> valid, const TrainConfig& config, const std::string& checkpoint_path,
                  const EpochCallback& on_epoch) {
  config.validate();
  check_task_fit(model.config(), task);
  if (train.empty()) throw DataError("fine-tuning set has no training chunks");
  if (valid.empty()) throw DataError("fine-tuning set has no validation chunks");
  check_labels(train, task);
  check_labels(valid, task);
  model.apply_freeze(config.freeze);

  TrainLog log;
  log.kind = "finetune";
  log.monitor = "valid_accuracy";
  AdamW<T> opt(config.lr, config.weight_decay);
  EarlyStopping stopper(config.patience, true);
  std::vector<std::vector<T>> best = snapshot(model);
  std::vector<size_t> order(train.size());

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = Clock::now();
    std::iota(order.begin(), order.end(), 0);
    Rng(mix_seed({config.seed, kShuffleStream, static_cast<uint64_t>(epoch)})).shuffle(order.begin(), order.end());
    double loss_sum = 0;
    size_t count = 0, correct = 0;
    for (size_t start = 0, bi = 0; start < order.size(); start += config.batch_size, ++bi) {
      const size_t n = std::min<size_t>(config.batch_size, order.size() - start);
      const TaskBatch tb = make_task_batch(train, std::span<const size_t>(order).subspan(start, n), task);
      if (tb.labeled == 0) continue;
      zero_grads(model.params());
      Tape<T> tape(TapeOptions{true, true, mix_seed({config.seed, kDropoutStream, static_cast<uint64_t>(epoch), bi})});
      const Tensor<T> logits = task_logits(model, tape, tb, task);
      const Tensor<T> loss = tape.cross_entropy(logits, tb.labels);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) throw NumericError("non-finite fine-tuning loss at epoch " + std::to_string(epoch));
      tape.backward(loss);
      clip_grad_norm(model.params(), config.clip_norm);
      opt.step(model.params());
      loss_sum += value * tb.labeled;
      count += tb.labeled;
      for (size_t r = 0; r < tb.labels.size(); ++r) {
        if (tb.labels[r] != kIgnoreLabel) correct += argmax_at(logits, static_cast<int64_t>(r)) == tb.labels[r];
      }
    }
    const TaskPredictions v = predict_task(model, task, valid, config.batch_size);
    size_t vc = 0;
    for (size_t i = 0; i < v.actual.size(); ++i) vc += v.predicted[i] == v.actual[i];
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = count ? loss_sum / count : 0.0;
    rec.train_accuracy = count ? static_cast<double>(correct) / count : 0.0;
    rec.valid_loss = v.loss;
    rec.valid_accuracy = v.actual.empty() ? 0.0 : static_cast<double>(vc) / v.actual.size();
    rec.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    log.epochs.push_back(rec);
    if (stopper.update(epoch, rec.valid_accuracy)) {
      best = snapshot(model);
      if (!checkpoint_path.empty()) save_checkpoint(model, checkpoint_path);
    }
    if (on_epoch) on_epoch(rec);
    if (stopper.should_stop()) {
      log.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  log.best_epoch = stopper.best_epoch();
  restore(model, best);
  return log;
}

#define MIDIBERT_INSTANTIATE(T)                                                                                      \
  template MlmEvaluation evaluate_mlm(const EncoderModel<T>&, std::span<const ChunkedSequence>, int, uint64_t);      \
  template TrainLog pretrain(EncoderModel<T>&, std::span<const ChunkedSequence>, std::span<const ChunkedSequence>,   \
                             const TrainConfig&, const std::string&, const EpochCallback&);                          \
  template TaskPredictions predict_task(const EncoderModel<T>&, Task, std::span<const LabeledChunk>, int);           \
  template TrainLog finetune(EncoderModel<T>&, Task, std::span<const LabeledChunk>, std::span<const LabeledChunk>,   \
                             const TrainConfig&, const std::string&, const EpochCallback&);

MIDIBERT_INSTANTIATE(float)
MIDIBERT_INSTANTIATE(double)
#undef MIDIBERT_INSTANTIATE

}  // namespace midibert
