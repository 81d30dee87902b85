#include "midibert/model.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "midibert/error.h"
#include "midibert/rng.h"

namespace midibert {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

std::string to_string(PositionMode mode) {
  return mode == PositionMode::kRelativeKeyQuery ? "relative_key_query" : "sinusoidal";
}

PositionMode parse_position_mode(const std::string& name) {
  if (name == "relative_key_query" || name == "relative") return PositionMode::kRelativeKeyQuery;
  if (name == "sinusoidal") return PositionMode::kSinusoidal;
  throw UsageError("unknown position mode '" + name + "' (expected relative_key_query or sinusoidal)");
}

std::string to_string(FreezeMode mode) {
  switch (mode) {
    case FreezeMode::kNone: return "none";
    case FreezeMode::kBackbone: return "backbone";
    case FreezeMode::kAttention: return "attention";
  }
  return "none";
}

FreezeMode parse_freeze_mode(const std::string& name) {
  if (name == "none") return FreezeMode::kNone;
  if (name == "backbone") return FreezeMode::kBackbone;
  if (name == "attention") return FreezeMode::kAttention;
  throw UsageError("unknown freeze mode '" + name + "' (expected none, backbone or attention)");
}

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::desk(Representation rep) {
  ModelConfig c;
  c.representation = rep;
  return c;
}

ModelConfig ModelConfig::paper(Representation rep) {
  ModelConfig c;
  c.layers = 12;
  c.heads = 12;
  c.hidden = 768;
  c.ff_dim = 3072;
  c.representation = rep;
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name, Representation rep) {
  if (name == "desk") return desk(rep);
  if (name == "paper") return paper(rep);
  throw UsageError("unknown model preset '" + name + "' (expected desk or paper)");
}

void ModelConfig::validate() const {
  if (layers <= 0 || heads <= 0 || hidden <= 0 || ff_dim <= 0 || max_len <= 0 || rel_clip <= 0) {
    throw UsageError("model sizes must be positive");
  }
  if (hidden % heads != 0) {
    throw UsageError("hidden size " + std::to_string(hidden) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw UsageError("dropout must be in [0, 1)");
  if (!(init_std > 0.0)) throw UsageError("init_std must be positive");
  if (note_classes < 0 || seq_classes < 0) throw UsageError("class counts must be non-negative");
}

bool ModelConfig::same_backbone(const ModelConfig& o) const {
  return layers == o.layers && heads == o.heads && hidden == o.hidden && ff_dim == o.ff_dim &&
         rel_clip == o.rel_clip && representation == o.representation && position == o.position;
}

std::string to_json(const ModelConfig& c) {
  json j = {{"layers", c.layers},
            {"heads", c.heads},
            {"hidden", c.hidden},
            {"ff_dim", c.ff_dim},
            {"max_len", c.max_len},
            {"rel_clip", c.rel_clip},
            {"dropout_p", c.dropout_p},
            {"init_std", c.init_std},
            {"representation", to_string(c.representation)},
            {"position", to_string(c.position)},
            {"mlm_head", c.mlm_head},
            {"note_classes", c.note_classes},
            {"seq_classes", c.seq_classes}};
  return j.dump();
}

namespace {

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.ff_dim = j.at("ff_dim").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.rel_clip = j.at("rel_clip").get<int>();
  c.dropout_p = j.at("dropout_p").get<double>();
  c.init_std = j.at("init_std").get<double>();
  c.representation = parse_representation(j.at("representation").get<std::string>());
  c.position = parse_position_mode(j.at("position").get<std::string>());
  c.mlm_head = j.at("mlm_head").get<bool>();
  c.note_classes = j.at("note_classes").get<int>();
  c.seq_classes = j.at("seq_classes").get<int>();
  return c;
}

}  // namespace

ModelConfig model_config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw DataError(std::string("bad model config: ") + e.what());
  }
}

std::vector<int> cp_embedding_dims(int hidden) {
  double total = 0;
  for (int v : kCpFieldSizes) total += std::log(static_cast<double>(v));
  std::vector<int> dims;
  for (int v : kCpFieldSizes) {
    const double share = hidden * std::log(static_cast<double>(v)) / total;
    dims.push_back(std::max(8, static_cast<int>(std::lround(share / 8.0)) * 8));
  }
  return dims;
}

// ---------------------------------------------------------------------------
// TokenBatch

int TokenBatch::content_length() const {
  int n = 0;
  for (int b = 0; b < batch; ++b) {
    for (int s = length - 1; s >= n; --s) {
      if (!is_pad(b, s)) {
        n = s + 1;
        break;
      }
    }
  }
  return n;
}

TokenBatch TokenBatch::truncated(int new_length) const {
  new_length = std::clamp(new_length, 0, length);
  TokenBatch out;
  out.representation = representation;
  out.batch = batch;
  out.length = new_length;
  out.fields = fields;
  for (int b = 0; b < batch; ++b) {
    const size_t from = static_cast<size_t>(b) * length;
    out.ids.insert(out.ids.end(), ids.begin() + from * fields, ids.begin() + (from + new_length) * fields);
    out.pad.insert(out.pad.end(), pad.begin() + from, pad.begin() + from + new_length);
  }
  return out;
}

namespace {

void fill_pad(TokenBatch& t) {
  t.pad.resize(static_cast<size_t>(t.batch) * t.length);
  for (int b = 0; b < t.batch; ++b) {
    bool any = false;
    for (int s = 0; s < t.length; ++s) {
      const bool pad = t.id(b, s, 0) == kPadId;
      t.pad[static_cast<size_t>(b) * t.length + s] = pad;
      any |= !pad;
    }
    if (!any) throw DataError("batch row " + std::to_string(b) + " contains only Pad steps");
  }
}

}  // namespace

TokenBatch make_token_batch(std::span<const ChunkedSequence* const> chunks) {
  if (chunks.empty()) throw DataError("empty batch");
  TokenBatch t;
  t.representation = chunks[0]->representation;
  t.fields = chunks[0]->num_fields();
  t.length = chunks[0]->length();
  t.batch = static_cast<int>(chunks.size());
  for (const ChunkedSequence* c : chunks) {
    if (c->representation != t.representation || c->length() != t.length) {
      throw DataError("batch mixes representations or chunk lengths");
    }
    t.ids.insert(t.ids.end(), c->ids.begin(), c->ids.end());
  }
  fill_pad(t);
  return t;
}

TokenBatch make_token_batch(std::span<const ChunkedSequence> chunks) {
  std::vector<const ChunkedSequence*> ptrs;
  for (const auto& c : chunks) ptrs.push_back(&c);
  return make_token_batch(std::span<const ChunkedSequence* const>(ptrs));
}

TokenBatch make_token_batch(const MaskedBatch& masked) {
  TokenBatch t;
  t.representation = masked.representation;
  t.batch = masked.batch;
  t.length = masked.length;
  t.fields = masked.fields;
  t.ids = masked.input_ids;
  fill_pad(t);
  return t;
}

// ---------------------------------------------------------------------------
// ParameterStore

template <typename T>
Tensor<T>& ParameterStore<T>::add(const std::string& name, Tensor<T> tensor) {
  if (index_.count(name)) throw UsageError("duplicate parameter name " + name);
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(tensor));
  return entries_.back().second;
}

template <typename T>
Tensor<T>& ParameterStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("no parameter named " + name);
  return entries_[it->second].second;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("no parameter named " + name);
  return entries_[it->second].second;
}

template <typename T>
int64_t ParameterStore<T>::num_elements() const {
  int64_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

bool is_backbone_parameter(const std::string& name) {
  return name.rfind("embed.", 0) == 0 || name.rfind("layers.", 0) == 0;
}

bool is_frozen(const std::string& name, FreezeMode mode) {
  switch (mode) {
    case FreezeMode::kNone: return false;
    case FreezeMode::kBackbone: return is_backbone_parameter(name);
    case FreezeMode::kAttention: return name.rfind("layers.", 0) == 0;
  }
  return false;
}

// ---------------------------------------------------------------------------
// EncoderModel

namespace {

uint64_t name_hash(const std::string& s) {
  uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

struct Init {
  uint64_t seed;
  double std;
};

template <typename T>
Tensor<T> init_normal(const Shape& shape, Init init, const std::string& name) {
  Rng rng(mix_seed({init.seed, name_hash(name)}));
  std::vector<T> v(static_cast<size_t>(ad::numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.truncated_normal(init.std));
  return Tensor<T>::from_data(shape, std::move(v), true);
}

template <typename T>
void add_dense(ParameterStore<T>& ps, const std::string& prefix, int in, int out, Init seed) {
  ps.add(prefix + ".weight", init_normal<T>({in, out}, seed, prefix + ".weight"));
  ps.add(prefix + ".bias", Tensor<T>::zeros({out}, true));
}

template <typename T>
void add_norm(ParameterStore<T>& ps, const std::string& prefix, int dim) {
  ps.add(prefix + ".gamma", Tensor<T>::full({dim}, T(1), true));
  ps.add(prefix + ".beta", Tensor<T>::zeros({dim}, true));
}

}  // namespace

template <typename T>
EncoderModel<T>::EncoderModel(const ModelConfig& config, uint64_t base_seed) : config_(config) {
  config_.validate();
  const Init seed{base_seed, config_.init_std};
  const int h = config_.hidden;
  auto& ps = params_;
  if (config_.representation == Representation::kRemi) {
    ps.add("embed.token", init_normal<T>({kRemiVocabSize, h}, seed, "embed.token"));
  } else {
    const auto dims = cp_embedding_dims(h);
    int total = 0;
    for (int k = 0; k < kCpFields; ++k) {
      const std::string name = "embed.field" + std::to_string(k);
      ps.add(name, init_normal<T>({kCpFieldSizes[k], dims[k]}, seed, name));
      total += dims[k];
    }
    add_dense(ps, "embed.proj", total, h, seed);
  }
  add_norm(ps, "embed.norm", h);

  for (int l = 0; l < config_.layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    for (const char* m : {"query", "key", "value", "out"}) add_dense(ps, pre + "attn." + m, h, h, seed);
    if (config_.position == PositionMode::kRelativeKeyQuery) {
      ps.add(pre + "attn.rel", init_normal<T>({2 * config_.rel_clip + 1, config_.head_dim()}, seed, pre + "attn.rel"));
    }
    add_norm(ps, pre + "attn_norm", h);
    add_dense(ps, pre + "ff1", h, config_.ff_dim, seed);
    add_dense(ps, pre + "ff2", config_.ff_dim, h, seed);
    add_norm(ps, pre + "ff_norm", h);
  }

  if (config_.mlm_head) {
    if (config_.representation == Representation::kRemi) {
      add_dense(ps, "heads.mlm", h, kRemiVocabSize, seed);
    } else {
      for (int k = 0; k < kCpFields; ++k) add_dense(ps, "heads.mlm.field" + std::to_string(k), h, kCpFieldSizes[k], seed);
    }
  }
  if (config_.note_classes > 0) {
    add_dense(ps, "heads.note.dense1", h, h, seed);
    add_dense(ps, "heads.note.dense2", h, config_.note_classes, seed);
  }
  if (config_.seq_classes > 0) {
    ps.add("heads.seq.score", init_normal<T>({h, 1}, seed, "heads.seq.score"));
    add_dense(ps, "heads.seq.dense1", h, h, seed);
    add_dense(ps, "heads.seq.dense2", h, config_.seq_classes, seed);
  }
}

template <typename T>
void EncoderModel<T>::apply_freeze(FreezeMode mode) {
  for (auto& [name, t] : params_.entries()) t.set_requires_grad(!is_frozen(name, mode));
}

template <typename T>
Tensor<T> EncoderModel<T>::dense(Tape<T>& tape, const Tensor<T>& x, const std::string& prefix) const {
  return tape.add(tape.matmul(x, p(prefix + ".weight")), p(prefix + ".bias"));
}

template <typename T>
Tensor<T> EncoderModel<T>::embed(Tape<T>& tape, const TokenBatch& batch) const {
  if (batch.representation != config_.representation) throw DataError("batch representation does not match the model");
  if (batch.length > config_.max_len) {
    throw DataError("sequence length " + std::to_string(batch.length) + " exceeds max_len " + std::to_string(config_.max_len));
  }
  const Shape ids_shape = {batch.batch, batch.length};
  Tensor<T> x;
  if (config_.representation == Representation::kRemi) {
    x = tape.embedding(p("embed.token"), batch.ids, ids_shape);
  } else {
    const size_t steps = static_cast<size_t>(batch.batch) * batch.length;
    std::vector<Tensor<T>> parts;
    for (int k = 0; k < kCpFields; ++k) {
      std::vector<int32_t> ids(steps);
      for (size_t i = 0; i < steps; ++i) ids[i] = batch.ids[i * kCpFields + k];
      parts.push_back(tape.embedding(p("embed.field" + std::to_string(k)), ids, ids_shape));
    }
    x = dense(tape, tape.concat_last(parts), "embed.proj");
  }
  if (config_.position == PositionMode::kSinusoidal) {
    const int h = config_.hidden;
    std::vector<T> pe(static_cast<size_t>(batch.length) * h);
    for (int pos = 0; pos < batch.length; ++pos) {
      for (int i = 0; i < h; i += 2) {
        const double angle = pos / std::pow(10000.0, static_cast<double>(i) / h);
        pe[static_cast<size_t>(pos) * h + i] = static_cast<T>(std::sin(angle));
        if (i + 1 < h) pe[static_cast<size_t>(pos) * h + i + 1] = static_cast<T>(std::cos(angle));
      }
    }
    x = tape.add(x, Tensor<T>::from_data({batch.length, h}, std::move(pe)));
  }
  x = tape.layer_norm(x, p("embed.norm.gamma"), p("embed.norm.beta"));
  return tape.dropout(x, config_.dropout_p);
}

template <typename T>
Tensor<T> EncoderModel<T>::attention(Tape<T>& tape, const Tensor<T>& x, const TokenBatch& batch, int layer) const {
  const std::string pre = "layers." + std::to_string(layer) + ".attn.";
  const int64_t b = batch.batch, len = batch.length, nh = config_.heads, dh = config_.head_dim();
  auto split_heads = [&](const Tensor<T>& t) {
    return tape.permute(tape.reshape(t, {b, len, nh, dh}), {0, 2, 1, 3});
  };
  const Tensor<T> q = split_heads(dense(tape, x, pre + "query"));
  const Tensor<T> k = split_heads(dense(tape, x, pre + "key"));
  const Tensor<T> v = split_heads(dense(tape, x, pre + "value"));

  Tensor<T> scores = tape.matmul(q, k, false, true);
  if (config_.position == PositionMode::kRelativeKeyQuery) {
    const Tensor<T>& rel = p(pre + "rel");
    scores = tape.add(scores, tape.relative_gather(tape.matmul(q, rel, false, true), config_.rel_clip, false));
    scores = tape.add(scores, tape.relative_gather(tape.matmul(k, rel, false, true), config_.rel_clip, true));
  }
  scores = tape.scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  scores = tape.mask_keys(scores, batch.pad);
  Tensor<T> probs = tape.dropout(tape.softmax(scores), config_.dropout_p);
  Tensor<T> ctx = tape.matmul(probs, v);
  ctx = tape.reshape(tape.permute(ctx, {0, 2, 1, 3}), {b, len, nh * dh});
  return dense(tape, ctx, pre + "out");
}

template <typename T>
Tensor<T> EncoderModel<T>::encode(Tape<T>& tape, const Tensor<T>& input, const TokenBatch& batch) const {
  Tensor<T> x = input;
  for (int l = 0; l < config_.layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    Tensor<T> a = tape.dropout(attention(tape, x, batch, l), config_.dropout_p);
    x = tape.layer_norm(tape.add(x, a), p(pre + "attn_norm.gamma"), p(pre + "attn_norm.beta"));
    Tensor<T> f = dense(tape, tape.gelu(dense(tape, x, pre + "ff1")), pre + "ff2");
    f = tape.dropout(f, config_.dropout_p);
    x = tape.layer_norm(tape.add(x, f), p(pre + "ff_norm.gamma"), p(pre + "ff_norm.beta"));
  }
  return x;
}

template <typename T>
std::vector<Tensor<T>> EncoderModel<T>::mlm_logits(Tape<T>& tape, const Tensor<T>& hidden,
                                                   std::span<const int64_t> rows) const {
  if (!config_.mlm_head) throw UsageError("model has no MLM head");
  const Tensor<T> g = tape.gather_rows(hidden, rows);
  if (config_.representation == Representation::kRemi) return {dense(tape, g, "heads.mlm")};
  std::vector<Tensor<T>> out;
  for (int k = 0; k < kCpFields; ++k) out.push_back(dense(tape, g, "heads.mlm.field" + std::to_string(k)));
  return out;
}

template <typename T>
Tensor<T> EncoderModel<T>::mlm_loss_from_logits(Tape<T>& tape, Representation rep, const std::vector<Tensor<T>>& logits,
                                                std::span<const int32_t> targets) {
  if (rep == Representation::kRemi) {
    static const std::vector<double> w64 = remi_class_weights();
    const std::vector<T> w(w64.begin(), w64.end());
    return tape.cross_entropy(logits.at(0), targets, w);
  }
  static const std::vector<double> fw = cp_field_weights();
  const size_t rows = targets.size() / kCpFields;
  Tensor<T> total;
  for (int k = 0; k < kCpFields; ++k) {
    std::vector<int32_t> t(rows);
    for (size_t i = 0; i < rows; ++i) t[i] = targets[i * kCpFields + k];
    Tensor<T> term = tape.scale(tape.cross_entropy(logits.at(k), t), static_cast<T>(fw[k]));
    total = total.defined() ? tape.add(total, term) : term;
  }
  return total;
}

template <typename T>
Tensor<T> EncoderModel<T>::mlm_loss(Tape<T>& tape, const Tensor<T>& hidden, const MaskedBatch& masked) const {
  std::vector<int64_t> rows;
  std::vector<int32_t> targets;
  for (int b = 0; b < masked.batch; ++b) {
    for (int s = 0; s < masked.length; ++s) {
      if (!masked.selected(b, s)) continue;
      rows.push_back(static_cast<int64_t>(b) * masked.length + s);
      for (int f = 0; f < masked.fields; ++f) targets.push_back(masked.target_ids[masked.index(b, s, f)]);
    }
  }
  if (rows.empty()) throw DataError("MLM loss needs at least one selected step");
  return mlm_loss_from_logits(tape, config_.representation, mlm_logits(tape, hidden, rows), targets);
}

template <typename T>
Tensor<T> EncoderModel<T>::note_logits(Tape<T>& tape, const Tensor<T>& hidden) const {
  if (config_.note_classes <= 0) throw UsageError("model has no note head");
  Tensor<T> h = tape.relu(dense(tape, hidden, "heads.note.dense1"));
  h = dense(tape, tape.dropout(h, config_.dropout_p), "heads.note.dense2");
  return tape.reshape(h, {h.numel() / config_.note_classes, config_.note_classes});
}

template <typename T>
SeqOutput<T> EncoderModel<T>::seq_logits(Tape<T>& tape, const Tensor<T>& hidden, const TokenBatch& batch) const {
  if (config_.seq_classes <= 0) throw UsageError("model has no sequence head");
  const int64_t b = batch.batch, len = batch.length, h = config_.hidden;
  Tensor<T> scores = tape.reshape(tape.matmul(hidden, p("heads.seq.score")), {b, len});
  scores = tape.mask_keys(scores, batch.pad);
  Tensor<T> weights = tape.softmax(scores);
  Tensor<T> pooled = tape.reshape(tape.matmul(tape.reshape(weights, {b, 1, len}), hidden), {b, h});
  Tensor<T> x = tape.relu(dense(tape, pooled, "heads.seq.dense1"));
  x = dense(tape, tape.dropout(x, config_.dropout_p), "heads.seq.dense2");
  return {x, weights};
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class EncoderModel<float>;
template class EncoderModel<double>;

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'M', 'B', 'P', 'T'};

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct CheckpointData {
  ModelConfig config;
  std::vector<StoredTensor> tensors;
};

template <typename U>
void append_raw(std::string& out, const U& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(U));
}

CheckpointData read_checkpoint_data(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& what) -> DataError { return DataError("checkpoint " + path + ": " + what); };

  constexpr size_t kPrefix = 4 + sizeof(uint32_t) + sizeof(uint64_t);
  if (bytes.size() < kPrefix) throw fail("truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw fail("bad magic");
  uint32_t version = 0;
  uint64_t header_size = 0;
  std::memcpy(&version, bytes.data() + 4, sizeof version);
  std::memcpy(&header_size, bytes.data() + 8, sizeof header_size);
  if (version != kCheckpointVersion) throw fail("unsupported version " + std::to_string(version));
  if (header_size > bytes.size() - kPrefix) throw fail("truncated header");

  json header;
  try {
    header = json::parse(bytes.begin() + kPrefix, bytes.begin() + kPrefix + static_cast<std::ptrdiff_t>(header_size));
  } catch (const json::exception& e) {
    throw fail(std::string("unreadable header: ") + e.what());
  }

  CheckpointData out;
  size_t offset = kPrefix + header_size;
  try {
    out.config = config_from(header.at("config"));
    for (const auto& entry : header.at("tensors")) {
      StoredTensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<Shape>();
      const std::string dtype = entry.at("dtype").get<std::string>();
      const size_t width = dtype == "float32" ? 4 : dtype == "float64" ? 8 : 0;
      if (width == 0) throw fail("unknown dtype " + dtype + " for " + t.name);
      const int64_t n = ad::numel(t.shape);
      if (n < 0 || static_cast<uint64_t>(n) * width > bytes.size() - offset) throw fail("truncated payload at " + t.name);
      t.values.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) {
        if (width == 4) {
          float f;
          std::memcpy(&f, bytes.data() + offset + i * 4, 4);
          t.values[i] = f;
        } else {
          std::memcpy(&t.values[i], bytes.data() + offset + i * 8, 8);
        }
      }
      offset += static_cast<size_t>(n) * width;
      out.tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw fail(std::string("malformed header: ") + e.what());
  }
  if (offset != bytes.size()) throw fail("trailing bytes after payload");
  return out;
}

template <typename T>
void copy_into(Tensor<T>& dst, const StoredTensor& src, const std::string& path) {
  if (dst.shape() != src.shape) {
    throw DataError("checkpoint " + path + ": shape mismatch for " + src.name + " (" + ad::to_string(src.shape) +
                    " vs " + ad::to_string(dst.shape()) + ")");
  }
  auto d = dst.data();
  for (size_t i = 0; i < src.values.size(); ++i) d[i] = static_cast<T>(src.values[i]);
}

}  // namespace

template <typename T>
void save_checkpoint(const EncoderModel<T>& model, const std::string& path) {
  const char* dtype = sizeof(T) == 4 ? "float32" : "float64";
  json tensors = json::array();
  for (const auto& [name, t] : model.params().entries()) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", dtype}});
  }
  const json header = {{"config", json::parse(to_json(model.config()))}, {"tensors", tensors}};
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  append_raw(out, kCheckpointVersion);
  append_raw(out, static_cast<uint64_t>(text.size()));
  out += text;
  for (const auto& [name, t] : model.params().entries()) {
    out.append(reinterpret_cast<const char*>(t.data().data()), t.data().size_bytes());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing checkpoint " + path);
}

template <typename T>
EncoderModel<T> load_checkpoint(const std::string& path) {
  const CheckpointData data = read_checkpoint_data(path);
  EncoderModel<T> model(data.config, 0);
  auto& entries = model.params().entries();
  if (entries.size() != data.tensors.size()) throw DataError("checkpoint " + path + ": parameter count mismatch");
  for (size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].first != data.tensors[i].name) {
      throw DataError("checkpoint " + path + ": expected parameter " + entries[i].first + ", found " + data.tensors[i].name);
    }
    copy_into(entries[i].second, data.tensors[i], path);
  }
  return model;
}

template <typename T>
void load_backbone(EncoderModel<T>& model, const std::string& path) {
  const CheckpointData data = read_checkpoint_data(path);
  if (!data.config.same_backbone(model.config())) {
    throw DataError("checkpoint " + path + ": backbone config " + to_json(data.config) + " does not match " +
                    to_json(model.config()));
  }
  size_t loaded = 0;
  for (const StoredTensor& t : data.tensors) {
    if (!is_backbone_parameter(t.name)) continue;
    if (!model.params().contains(t.name)) throw DataError("checkpoint " + path + ": unexpected parameter " + t.name);
    copy_into(model.params().get(t.name), t, path);
    ++loaded;
  }
  size_t expected = 0;
  for (const auto& [name, t] : model.params().entries()) expected += is_backbone_parameter(name);
  if (loaded != expected) throw DataError("checkpoint " + path + ": incomplete backbone");
}

ModelConfig read_checkpoint_config(const std::string& path) { return read_checkpoint_data(path).config; }

template void save_checkpoint(const EncoderModel<float>&, const std::string&);
template void save_checkpoint(const EncoderModel<double>&, const std::string&);
template EncoderModel<float> load_checkpoint(const std::string&);
template EncoderModel<double> load_checkpoint(const std::string&);
template void load_backbone(EncoderModel<float>&, const std::string&);
template void load_backbone(EncoderModel<double>&, const std::string&);

}  // namespace midibert
