#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "midibert/error.h"

namespace midibert::ad {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised when operand shapes are incompatible. Names the op and the shapes.
class ShapeError : public NumericError {
 public:
  using NumericError::NumericError;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first written
  bool requires_grad = false;
};

/// Reference-counted handle to a dense row-major array. Copies share storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T value) { return from_data({}, {value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  /// Size of dimension i; negative i counts from the back.
  int64_t dim(int i) const;
  int64_t numel() const { return static_cast<int64_t>(impl_->value.size()); }

  std::span<T> data() { return impl_->value; }
  std::span<const T> data() const { return impl_->value; }
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer, allocated as zeros on first access.
  std::span<T> grad();
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad();

  /// Deep copy of the values without gradient history.
  Tensor clone() const;

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

struct TapeOptions {
  /// Record backward rules. Off for inference and finite-difference probes.
  bool record = true;
  /// Enables dropout.
  bool training = false;
  /// Base seed for dropout masks; each dropout call draws a fresh sub-seed.
  uint64_t seed = 0;
};

/// Records operations in execution order (a valid topological order) so that
/// backward() can replay their gradient rules in reverse, each exactly once.
/// A tape is single-threaded and single-use: a second backward() throws.
template <typename T>
class Tape {
 public:
  explicit Tape(TapeOptions options = {}) : options_(options) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool training() const { return options_.training; }
  bool recording() const { return options_.record; }
  size_t size() const { return backward_.size(); }

  /// op(a) @ op(b) over the last two dims. b is either 2-D (shared across all
  /// leading dims of a) or has the same leading dims as a.
  Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false);
  /// Elementwise sum. b may also match a trailing suffix of a's shape and is
  /// then broadcast over the leading dims (bias add).
  Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> scale(const Tensor<T>& a, T factor);
  /// Scalar sum / mean of all elements.
  Tensor<T> sum(const Tensor<T>& a);
  Tensor<T> mean(const Tensor<T>& a);

  Tensor<T> relu(const Tensor<T>& a);
  /// Exact (erf) GELU.
  Tensor<T> gelu(const Tensor<T>& a);
  /// Normalizes the last dim, then applies gamma * x + beta.
  Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta);
  /// Softmax over the last dim with max subtraction.
  Tensor<T> softmax(const Tensor<T>& x);
  /// Writes -inf wherever key_pad[b * Lk + j] is set, where b is the index
  /// along dim 0 and j the index along the last dim (size Lk).
  Tensor<T> mask_keys(const Tensor<T>& scores, std::span<const uint8_t> key_pad);
  /// Inverted dropout; identity outside training or when p == 0.
  Tensor<T> dropout(const Tensor<T>& x, double p);

  /// Row lookup into table [V, D]; result has shape ids_shape + [D].
  Tensor<T> embedding(const Tensor<T>& table, std::span<const int32_t> ids, const Shape& ids_shape);
  /// Selects rows of x viewed as [N, D] (D = last dim) -> [rows.size(), D].
  Tensor<T> gather_rows(const Tensor<T>& x, std::span<const int64_t> rows);
  /// Concatenation along the last dim.
  Tensor<T> concat_last(const std::vector<Tensor<T>>& parts);
  Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);
  Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm);

  /// Expands relative-distance scores p [..., L, 2c+1] into [..., L, L]:
  /// out[.., i, j] = p[.., i, d] (query form) or p[.., j, d] (key form), with
  /// d = clamp(i - j, -c, c) + c.
  Tensor<T> relative_gather(const Tensor<T>& p, int clip, bool key_form);

  /// Weighted mean cross-entropy over rows of logits [N, C]:
  ///   sum_i w(t_i) * CE_i / sum_i w(t_i),
  /// skipping rows whose target equals ignore_label. class_weights may be
  /// empty (all ones). Throws DataError when no row carries weight.
  Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int32_t> targets,
                          std::span<const T> class_weights = {}, int32_t ignore_label = -100);

  /// Runs the recorded gradient rules from a scalar loss.
  void backward(const Tensor<T>& loss);

 private:
  Tensor<T> output(Shape shape, std::initializer_list<const Tensor<T>*> inputs);
  void record(std::function<void()> rule) { backward_.push_back(std::move(rule)); }

  TapeOptions options_;
  std::vector<std::function<void()>> backward_;
  bool consumed_ = false;
  uint64_t dropout_calls_ = 0;
};

/// Compares reverse-mode gradients of f with central differences
/// (f(x+eps) - f(x-eps)) / (2 eps) on up to num_coords coordinates sampled
/// without replacement across params. Returns the largest
/// |a - n| / max(|a|, |n|, 1e-8). f must be deterministic; it receives a tape
/// with dropout disabled.
double gradcheck(const std::function<Tensor<double>(Tape<double>&)>& f, std::vector<Tensor<double>> params,
                 double eps = 1e-5, size_t num_coords = 200, uint64_t seed = 0);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace midibert::ad
