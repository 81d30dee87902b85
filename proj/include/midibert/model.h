#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "midibert/autodiff.h"
#include "midibert/masking.h"
#include "midibert/tokenizer.h"

namespace midibert {

enum class PositionMode { kRelativeKeyQuery, kSinusoidal };
std::string to_string(PositionMode mode);
PositionMode parse_position_mode(const std::string& name);

/// Which parameters fine-tuning may update. kBackbone freezes embeddings and
/// every encoder layer; kAttention freezes the encoder layers only.
enum class FreezeMode { kNone, kBackbone, kAttention };
std::string to_string(FreezeMode mode);
FreezeMode parse_freeze_mode(const std::string& name);

struct ModelConfig {
  int layers = 2;
  int heads = 4;
  int hidden = 128;
  int ff_dim = 512;
  int max_len = kChunkLength;
  int rel_clip = 64;
  double dropout_p = 0.1;
  /// Std of the truncated-normal weight initializer.
  double init_std = 0.02;
  Representation representation = Representation::kCp;
  PositionMode position = PositionMode::kRelativeKeyQuery;
  bool mlm_head = true;
  /// 0 disables the head.
  int note_classes = 0;
  int seq_classes = 0;

  static ModelConfig desk(Representation rep);
  static ModelConfig paper(Representation rep);
  /// "desk" or "paper".
  static ModelConfig preset(const std::string& name, Representation rep);

  int head_dim() const { return hidden / heads; }
  /// Throws UsageError on non-positive sizes or hidden % heads != 0.
  void validate() const;
  bool same_backbone(const ModelConfig& other) const;
  bool operator==(const ModelConfig&) const = default;
};

std::string to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

/// Per-field CP embedding widths: proportional to ln|V_k|, rounded to a
/// multiple of 8 (at least 8).
std::vector<int> cp_embedding_dims(int hidden);

/// Input ids for one forward pass. Arrays are row-major [batch][length][fields]
/// (ids) and [batch][length] (pad).
struct TokenBatch {
  Representation representation = Representation::kRemi;
  int batch = 0;
  int length = 0;
  int fields = 1;
  std::vector<int32_t> ids;
  std::vector<uint8_t> pad;

  int32_t id(int b, int step, int field = 0) const {
    return ids[(static_cast<size_t>(b) * length + step) * fields + field];
  }
  bool is_pad(int b, int step) const { return pad[static_cast<size_t>(b) * length + step] != 0; }
  /// Longest non-Pad prefix over all rows.
  int content_length() const;
  TokenBatch truncated(int new_length) const;
};

TokenBatch make_token_batch(std::span<const ChunkedSequence> chunks);
TokenBatch make_token_batch(std::span<const ChunkedSequence* const> chunks);
TokenBatch make_token_batch(const MaskedBatch& masked);

/// Ordered named parameters. Names are unique; iteration follows insertion.
template <typename T>
class ParameterStore {
 public:
  ad::Tensor<T>& add(const std::string& name, ad::Tensor<T> tensor);
  ad::Tensor<T>& get(const std::string& name);
  const ad::Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  size_t size() const { return entries_.size(); }
  int64_t num_elements() const;

  std::vector<std::pair<std::string, ad::Tensor<T>>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, ad::Tensor<T>>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, ad::Tensor<T>>> entries_;
  std::map<std::string, size_t> index_;
};

/// True for embed.* and layers.* names.
bool is_backbone_parameter(const std::string& name);
bool is_frozen(const std::string& name, FreezeMode mode);

template <typename T>
struct SeqOutput {
  ad::Tensor<T> logits;   // [batch, classes]
  ad::Tensor<T> weights;  // [batch, length], zero at Pad
};

template <typename T>
class EncoderModel {
 public:
  EncoderModel(const ModelConfig& config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  /// Sets requires_grad according to the freeze mode.
  void apply_freeze(FreezeMode mode);

  /// [batch, length, hidden]. Throws DataError on out-of-vocabulary ids.
  ad::Tensor<T> embed(ad::Tape<T>& tape, const TokenBatch& batch) const;
  /// Bidirectional self-attention stack over embedded input.
  ad::Tensor<T> encode(ad::Tape<T>& tape, const ad::Tensor<T>& x, const TokenBatch& batch) const;
  ad::Tensor<T> forward(ad::Tape<T>& tape, const TokenBatch& batch) const { return encode(tape, embed(tape, batch), batch); }

  /// Per-field logits at the given flattened (b * length + step) rows:
  /// one tensor [rows, |V|] for REMI, four for CP.
  std::vector<ad::Tensor<T>> mlm_logits(ad::Tape<T>& tape, const ad::Tensor<T>& hidden,
                                        std::span<const int64_t> rows) const;
  /// Weighted reconstruction loss at selected steps. Throws DataError when
  /// nothing is selected.
  ad::Tensor<T> mlm_loss(ad::Tape<T>& tape, const ad::Tensor<T>& hidden, const MaskedBatch& masked) const;
  /// Loss from precomputed logits (as returned by mlm_logits) against
  /// targets laid out [rows][fields].
  static ad::Tensor<T> mlm_loss_from_logits(ad::Tape<T>& tape, Representation rep,
                                            const std::vector<ad::Tensor<T>>& logits,
                                            std::span<const int32_t> targets);

  /// [batch * length, note_classes].
  ad::Tensor<T> note_logits(ad::Tape<T>& tape, const ad::Tensor<T>& hidden) const;
  SeqOutput<T> seq_logits(ad::Tape<T>& tape, const ad::Tensor<T>& hidden, const TokenBatch& batch) const;

 private:
  ad::Tensor<T> dense(ad::Tape<T>& tape, const ad::Tensor<T>& x, const std::string& prefix) const;
  ad::Tensor<T> attention(ad::Tape<T>& tape, const ad::Tensor<T>& x, const TokenBatch& batch, int layer) const;
  const ad::Tensor<T>& p(const std::string& name) const { return params_.get(name); }

  ModelConfig config_;
  ParameterStore<T> params_;
};

// ---------------------------------------------------------------------------
// Checkpoints: "MBPT", uint32 version, uint64 header size, JSON header
// {config, tensors: [{name, shape, dtype}]}, then little-endian payloads in
// header order.

inline constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const EncoderModel<T>& model, const std::string& path);
/// Reads and validates the whole file before constructing the model.
template <typename T>
EncoderModel<T> load_checkpoint(const std::string& path);
/// Copies embed.* and layers.* from a checkpoint into model. Heads keep their
/// current values. Throws DataError on backbone config or shape mismatch.
template <typename T>
void load_backbone(EncoderModel<T>& model, const std::string& path);
ModelConfig read_checkpoint_config(const std::string& path);

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;
extern template class EncoderModel<float>;
extern template class EncoderModel<double>;

}  // namespace midibert
