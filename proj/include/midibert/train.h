#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "midibert/corpus.h"
#include "midibert/model.h"

namespace midibert {

enum class Precision { kSingle, kDouble };
std::string to_string(Precision p);
Precision parse_precision(const std::string& name);

struct TrainConfig {
  int batch_size = 12;
  double lr = 2e-5;
  double weight_decay = 0.01;
  int max_epochs = 500;
  int patience = 30;
  uint64_t seed = 0;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;
  Precision precision = Precision::kSingle;
  FreezeMode freeze = FreezeMode::kNone;

  static TrainConfig pretrain_defaults();
  static TrainConfig finetune_defaults();
  /// Throws UsageError unless all sizes and rates are positive and
  /// patience <= max_epochs.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Applies `key = value` lines (# comments, blank lines allowed). Keys:
/// batch_size, lr, weight_decay, max_epochs, patience, seed, clip_norm,
/// precision (single|double), freeze (none|backbone|attention).
/// Throws UsageError on unknown keys or unparsable values.
void apply_config_text(TrainConfig& config, const std::string& text);
void apply_config_file(TrainConfig& config, const std::string& path);
std::string to_json(const TrainConfig& config);

// ---------------------------------------------------------------------------
// Optimizer

/// AdamW with decoupled weight decay: theta <- theta * (1 - lr * wd), then the
/// bias-corrected Adam step. Parameters with requires_grad == false are left
/// untouched; a trainable parameter without a gradient buffer counts as a
/// zero gradient.
template <typename T>
class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Throws NumericError naming the first parameter with a non-finite gradient.
  void step(ParameterStore<T>& params);
  int64_t steps() const { return t_; }

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

/// Scales all gradients so their global L2 norm is at most max_norm. Returns
/// the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterStore<T>& params, double max_norm);

template <typename T>
void zero_grads(ParameterStore<T>& params);

/// Patience counter over a monitored value with strict improvement.
class EarlyStopping {
 public:
  EarlyStopping(int patience, bool higher_is_better) : patience_(patience), higher_(higher_is_better) {}
  /// Records one epoch; returns true when the value is a new best.
  bool update(int epoch, double value);
  bool should_stop() const { return bad_epochs_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_value() const { return best_; }
  int bad_epochs() const { return bad_epochs_; }

 private:
  int patience_;
  bool higher_;
  bool has_best_ = false;
  double best_ = 0;
  int best_epoch_ = 0;
  int bad_epochs_ = 0;
};

// ---------------------------------------------------------------------------
// Logs

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double valid_loss = 0;
  double valid_accuracy = 0;
  double seconds = 0;
};

struct TrainLog {
  std::string kind;      // "pretrain" or "finetune"
  std::string monitor;   // "valid_loss" or "valid_accuracy"
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool stopped_early = false;

  const EpochRecord& best() const;
  /// epoch,train_loss,train_accuracy,valid_loss,valid_accuracy,seconds
  std::string to_csv() const;
  /// Summary without wall-clock fields.
  std::string summary_json() const;
};

// ---------------------------------------------------------------------------
// Loops

using EpochCallback = std::function<void(const EpochRecord&)>;

struct MlmEvaluation {
  double loss = 0;
  /// Fraction of selected steps reconstructed exactly (all fields for CP).
  double cloze_accuracy = 0;
  size_t selected_steps = 0;
};

/// Masks each batch with a fixed seed and scores reconstruction.
template <typename T>
MlmEvaluation evaluate_mlm(const EncoderModel<T>& model, std::span<const ChunkedSequence> chunks, int batch_size,
                           uint64_t seed);

/// Pre-trains with MLM. Chunks are reshuffled and remasked every epoch;
/// validation masking is fixed. Monitors validation loss; writes
/// checkpoint_path (if non-empty) at every new best and leaves the model at
/// its best parameters. Throws DataError on an empty corpus.
template <typename T>
TrainLog pretrain(EncoderModel<T>& model, std::span<const ChunkedSequence> train,
                  std::span<const ChunkedSequence> valid, const TrainConfig& config,
                  const std::string& checkpoint_path = "", const EpochCallback& on_epoch = {});

struct TaskPredictions {
  /// One entry per labeled note (note-level tasks) or chunk (sequence-level).
  std::vector<int32_t> predicted;
  std::vector<int32_t> actual;
  double loss = 0;
};

template <typename T>
TaskPredictions predict_task(const EncoderModel<T>& model, Task task, std::span<const LabeledChunk> chunks,
                             int batch_size);

/// Fine-tunes the note or sequence head (and, unless frozen, the backbone).
/// Monitors validation accuracy; the model ends at its best parameters.
/// Throws DataError when the model head or chunk labels do not fit the task.
template <typename T>
TrainLog finetune(EncoderModel<T>& model, Task task, std::span<const LabeledChunk> train,
                  std::span<const LabeledChunk> valid, const TrainConfig& config,
                  const std::string& checkpoint_path = "", const EpochCallback& on_epoch = {});

}  // namespace midibert
