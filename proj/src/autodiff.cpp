#include "midibert/autodiff.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "midibert/rng.h"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace midibert::ad {

#if defined(__GLIBC__)
namespace {
// Activation buffers are allocated and freed every step. Keeping them on the
// heap instead of fresh mmap pages avoids repeated page faults.
[[maybe_unused]] const int kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return 0;
}();
}  // namespace
#endif

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b = {}) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << to_string(a);
  if (!b.empty()) os << " and " << to_string(b);
  throw ShapeError(os.str());
}

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[m, n] (+)= op(A) op(B). A is stored [k, m] when ta else [m, k]; B is
// stored [n, k] when tb else [k, n].
template <typename T>
void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c, bool accumulate) {
  Eigen::Map<const MatRM<T>> A(a, ta ? k : m, ta ? m : k);
  Eigen::Map<const MatRM<T>> B(b, tb ? n : k, tb ? k : n);
  Eigen::Map<MatRM<T>> C(c, m, n);
  if (!accumulate) C.setZero();
  if (!ta && !tb) {
    C.noalias() += A * B;
  } else if (!ta && tb) {
    C.noalias() += A * B.transpose();
  } else if (ta && !tb) {
    C.noalias() += A.transpose() * B;
  } else {
    C.noalias() += A.transpose() * B.transpose();
  }
}

template <typename T>
std::vector<T>& grad_of(const std::shared_ptr<TensorImpl<T>>& t) {
  if (t->grad.empty()) t->grad.assign(t->value.size(), T(0));
  return t->grad;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->value.assign(static_cast<size_t>(ad::numel(shape)), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  if (static_cast<int64_t>(data.size()) != ad::numel(shape)) {
    throw ShapeError("from_data: " + std::to_string(data.size()) + " values for shape " + ad::to_string(shape));
  }
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->value = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

template <typename T>
int64_t Tensor<T>::dim(int i) const {
  const int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw ShapeError("dim " + std::to_string(i) + " out of range for " + ad::to_string(shape()));
  return impl_->shape[i];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + ad::to_string(shape()));
  return impl_->value[0];
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  return grad_of(impl_);
}

template <typename T>
void Tensor<T>::zero_grad() {
  impl_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return from_data(shape(), impl_->value, false);
}

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Tensor<T> Tape<T>::output(Shape shape, std::initializer_list<const Tensor<T>*> inputs) {
  Tensor<T> out = Tensor<T>::zeros(std::move(shape));
  if (options_.record) {
    for (const Tensor<T>* in : inputs) {
      if (in->requires_grad()) {
        out.set_requires_grad(true);
        break;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  if (a.rank() < 2 || b.rank() < 2) shape_error("matmul", a.shape(), b.shape());
  const int64_t m = trans_a ? a.dim(-1) : a.dim(-2);
  const int64_t k = trans_a ? a.dim(-2) : a.dim(-1);
  const int64_t kb = trans_b ? b.dim(-1) : b.dim(-2);
  const int64_t n = trans_b ? b.dim(-2) : b.dim(-1);
  if (k != kb) shape_error("matmul", a.shape(), b.shape());
  const Shape prefix(a.shape().begin(), a.shape().end() - 2);
  const bool shared_b = b.rank() == 2;
  if (!shared_b && Shape(b.shape().begin(), b.shape().end() - 2) != prefix) shape_error("matmul", a.shape(), b.shape());
  const int64_t batch = numel(prefix);

  Shape out_shape = prefix;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out = output(out_shape, {&a, &b});

  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = out.data().data();
  const int64_t sa = m * k, sb = shared_b ? 0 : k * n, sc = m * n;
  if (shared_b && !trans_a) {
    gemm(false, trans_b, batch * m, n, k, pa, pb, pc, false);
  } else {
    for (int64_t p = 0; p < batch; ++p) gemm(trans_a, trans_b, m, n, k, pa + p * sa, pb + p * sb, pc + p * sc, false);
  }

  if (out.requires_grad()) {
    record([ai = a.impl(), bi = b.impl(), oi = out.impl(), trans_a, trans_b, shared_b, batch, m, n, k, sa, sb, sc] {
      if (oi->grad.empty()) return;
      const T* dc = oi->grad.data();
      const T* A = ai->value.data();
      const T* B = bi->value.data();
      if (ai->requires_grad) {
        T* da = grad_of(ai).data();
        if (shared_b && !trans_a) {
          // dA = dC op(B)^T
          gemm(false, !trans_b, batch * m, k, n, dc, B, da, true);
        } else {
          for (int64_t p = 0; p < batch; ++p) {
            const T* g = dc + p * sc;
            const T* bp = B + p * sb;
            T* d = da + p * sa;
            if (!trans_a) {
              gemm(false, !trans_b, m, k, n, g, bp, d, true);
            } else {
              // stored A is [k, m]: dA = op(B) dC^T
              gemm(trans_b, true, k, m, n, bp, g, d, true);
            }
          }
        }
      }
      if (bi->requires_grad) {
        T* db = grad_of(bi).data();
        if (shared_b && !trans_a) {
          if (!trans_b) {
            gemm(true, false, k, n, batch * m, A, dc, db, true);
          } else {
            gemm(true, false, n, k, batch * m, dc, A, db, true);
          }
        } else {
          for (int64_t p = 0; p < batch; ++p) {
            const T* g = dc + p * sc;
            const T* ap = A + p * sa;
            T* d = db + p * sb;
            if (!trans_b) {
              // dB [k, n] = op(A)^T dC
              gemm(!trans_a, false, k, n, m, ap, g, d, true);
            } else {
              // dB [n, k] = dC^T op(A)
              gemm(true, trans_a, n, k, m, g, ap, d, true);
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::add(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) shape_error("add", sa, sb);
  Tensor<T> out = output(sa, {&a, &b});
  const int64_t nb = b.numel();
  const int64_t reps = nb == 0 ? 0 : a.numel() / nb;
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (int64_t r = 0; r < reps; ++r) {
    for (int64_t j = 0; j < nb; ++j) o[r * nb + j] = x[r * nb + j] + y[j];
  }
  if (out.requires_grad()) {
    record([ai = a.impl(), bi = b.impl(), oi = out.impl(), nb, reps] {
      if (oi->grad.empty()) return;
      const auto& g = oi->grad;
      if (ai->requires_grad) {
        auto& da = grad_of(ai);
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      if (bi->requires_grad) {
        auto& db = grad_of(bi);
        for (int64_t r = 0; r < reps; ++r) {
          for (int64_t j = 0; j < nb; ++j) db[j] += g[r * nb + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  Tensor<T> out = output(a.shape(), {&a, &b});
  auto o = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) o[i] = a.data()[i] * b.data()[i];
  if (out.requires_grad()) {
    record([ai = a.impl(), bi = b.impl(), oi = out.impl()] {
      if (oi->grad.empty()) return;
      const auto& g = oi->grad;
      if (ai->requires_grad) {
        auto& da = grad_of(ai);
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bi->value[i];
      }
      if (bi->requires_grad) {
        auto& db = grad_of(bi);
        for (size_t i = 0; i < g.size(); ++i) db[i] += g[i] * ai->value[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::scale(const Tensor<T>& a, T factor) {
  Tensor<T> out = output(a.shape(), {&a});
  auto o = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) o[i] = a.data()[i] * factor;
  if (out.requires_grad()) {
    record([ai = a.impl(), oi = out.impl(), factor] {
      if (oi->grad.empty()) return;
      auto& da = grad_of(ai);
      for (size_t i = 0; i < da.size(); ++i) da[i] += oi->grad[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::sum(const Tensor<T>& a) {
  Tensor<T> out = output({}, {&a});
  T s = 0;
  for (T v : a.data()) s += v;
  out.data()[0] = s;
  if (out.requires_grad()) {
    record([ai = a.impl(), oi = out.impl()] {
      if (oi->grad.empty()) return;
      auto& da = grad_of(ai);
      for (auto& d : da) d += oi->grad[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::mean(const Tensor<T>& a) {
  if (a.numel() == 0) shape_error("mean", a.shape());
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> Tape<T>::relu(const Tensor<T>& a) {
  Tensor<T> out = output(a.shape(), {&a});
  auto o = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) o[i] = std::max(a.data()[i], T(0));
  if (out.requires_grad()) {
    record([ai = a.impl(), oi = out.impl()] {
      if (oi->grad.empty()) return;
      auto& da = grad_of(ai);
      for (size_t i = 0; i < da.size(); ++i) {
        if (ai->value[i] > T(0)) da[i] += oi->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::gelu(const Tensor<T>& a) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
  Tensor<T> out = output(a.shape(), {&a});
  auto o = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) {
    const T x = a.data()[i];
    o[i] = T(0.5) * x * (T(1) + std::erf(x * kInvSqrt2));
  }
  if (out.requires_grad()) {
    record([ai = a.impl(), oi = out.impl()] {
      if (oi->grad.empty()) return;
      auto& da = grad_of(ai);
      for (size_t i = 0; i < da.size(); ++i) {
        const T x = ai->value[i];
        const T cdf = T(0.5) * (T(1) + std::erf(x * kInvSqrt2));
        const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * x * x);
        da[i] += oi->grad[i] * (cdf + x * pdf);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
  constexpr double kEps = 1e-12;
  const int64_t d = x.dim(-1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) shape_error("layer_norm", x.shape(), gamma.shape());
  const int64_t rows = x.numel() / d;
  Tensor<T> out = output(x.shape(), {&x, &gamma, &beta});
  auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(x.numel()));
  auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  const T* xv = x.data().data();
  const T* g = gamma.data().data();
  const T* bt = beta.data().data();
  T* o = out.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = xv + r * d;
    double mu = 0;
    for (int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0;
    for (int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const T rs = static_cast<T>(1.0 / std::sqrt(var + kEps));
    (*rstd)[r] = rs;
    for (int64_t j = 0; j < d; ++j) {
      const T h = static_cast<T>(row[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      o[r * d + j] = h * g[j] + bt[j];
    }
  }
  if (out.requires_grad()) {
    record([xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl(), xhat, rstd, rows, d] {
      if (oi->grad.empty()) return;
      const T* dy = oi->grad.data();
      const T* g = gi->value.data();
      if (gi->requires_grad || bi->requires_grad) {
        auto& dg = grad_of(gi);
        auto& db = grad_of(bi);
        for (int64_t r = 0; r < rows; ++r) {
          for (int64_t j = 0; j < d; ++j) {
            dg[j] += dy[r * d + j] * (*xhat)[r * d + j];
            db[j] += dy[r * d + j];
          }
        }
      }
      if (xi->requires_grad) {
        auto& dx = grad_of(xi);
        for (int64_t r = 0; r < rows; ++r) {
          T mean_dh = 0, mean_dh_h = 0;
          for (int64_t j = 0; j < d; ++j) {
            const T dh = dy[r * d + j] * g[j];
            mean_dh += dh;
            mean_dh_h += dh * (*xhat)[r * d + j];
          }
          mean_dh /= static_cast<T>(d);
          mean_dh_h /= static_cast<T>(d);
          for (int64_t j = 0; j < d; ++j) {
            const T dh = dy[r * d + j] * g[j];
            dx[r * d + j] += (*rstd)[r] * (dh - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::softmax(const Tensor<T>& x) {
  const int64_t d = x.dim(-1);
  const int64_t rows = x.numel() / d;
  Tensor<T> out = output(x.shape(), {&x});
  const T* xv = x.data().data();
  T* o = out.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = xv + r * d;
    T* orow = o + r * d;
    const T mx = *std::max_element(row, row + d);
    T total = 0;
    for (int64_t j = 0; j < d; ++j) {
      orow[j] = std::exp(row[j] - mx);
      total += orow[j];
    }
    for (int64_t j = 0; j < d; ++j) orow[j] /= total;
  }
  if (out.requires_grad()) {
    record([xi = x.impl(), oi = out.impl(), rows, d] {
      if (oi->grad.empty()) return;
      auto& dx = grad_of(xi);
      const T* y = oi->value.data();
      const T* dy = oi->grad.data();
      for (int64_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (int64_t j = 0; j < d; ++j) dot += dy[r * d + j] * y[r * d + j];
        for (int64_t j = 0; j < d; ++j) dx[r * d + j] += y[r * d + j] * (dy[r * d + j] - dot);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::mask_keys(const Tensor<T>& scores, std::span<const uint8_t> key_pad) {
  const int64_t lk = scores.dim(-1);
  const int64_t batch = scores.dim(0);
  if (static_cast<int64_t>(key_pad.size()) != batch * lk) {
    shape_error("mask_keys", scores.shape(), Shape{static_cast<int64_t>(key_pad.size())});
  }
  const int64_t per_batch = scores.numel() / batch;
  Tensor<T> out = output(scores.shape(), {&scores});
  auto keep = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(scores.numel()));
  auto o = out.data();
  auto s = scores.data();
  for (int64_t i = 0; i < scores.numel(); ++i) {
    const int64_t b = i / per_batch;
    const int64_t j = i % lk;
    const bool pad = key_pad[b * lk + j] != 0;
    (*keep)[i] = !pad;
    o[i] = pad ? -std::numeric_limits<T>::infinity() : s[i];
  }
  if (out.requires_grad()) {
    record([si = scores.impl(), oi = out.impl(), keep] {
      if (oi->grad.empty()) return;
      auto& ds = grad_of(si);
      for (size_t i = 0; i < ds.size(); ++i) {
        if ((*keep)[i]) ds[i] += oi->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::dropout(const Tensor<T>& x, double p) {
  if (!options_.training || p <= 0.0) return x;
  if (p >= 1.0) throw NumericError("dropout probability must be below 1");
  Rng rng(mix_seed({options_.seed, 0xD50D50ULL, dropout_calls_++}));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(static_cast<size_t>(x.numel()));
  for (auto& m : *mask) m = rng.uniform() < p ? T(0) : keep_scale;
  Tensor<T> out = output(x.shape(), {&x});
  auto o = out.data();
  for (int64_t i = 0; i < x.numel(); ++i) o[i] = x.data()[i] * (*mask)[i];
  if (out.requires_grad()) {
    record([xi = x.impl(), oi = out.impl(), mask] {
      if (oi->grad.empty()) return;
      auto& dx = grad_of(xi);
      for (size_t i = 0; i < dx.size(); ++i) dx[i] += oi->grad[i] * (*mask)[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::embedding(const Tensor<T>& table, std::span<const int32_t> ids, const Shape& ids_shape) {
  if (table.rank() != 2 || numel(ids_shape) != static_cast<int64_t>(ids.size())) {
    shape_error("embedding", table.shape(), ids_shape);
  }
  const int64_t vocab = table.dim(0);
  const int64_t d = table.dim(1);
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw DataError("embedding: id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                      " outside vocabulary of " + std::to_string(vocab));
    }
  }
  Shape out_shape = ids_shape;
  out_shape.push_back(d);
  Tensor<T> out = output(out_shape, {&table});
  const T* tv = table.data().data();
  T* o = out.data().data();
  for (size_t i = 0; i < ids.size(); ++i) std::copy_n(tv + ids[i] * d, d, o + static_cast<int64_t>(i) * d);
  if (out.requires_grad()) {
    record([ti = table.impl(), oi = out.impl(), idv = std::vector<int32_t>(ids.begin(), ids.end()), d] {
      if (oi->grad.empty()) return;
      auto& dt = grad_of(ti);
      for (size_t i = 0; i < idv.size(); ++i) {
        for (int64_t j = 0; j < d; ++j) dt[idv[i] * d + j] += oi->grad[static_cast<int64_t>(i) * d + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::gather_rows(const Tensor<T>& x, std::span<const int64_t> rows) {
  const int64_t d = x.dim(-1);
  const int64_t n = x.numel() / d;
  for (int64_t r : rows) {
    if (r < 0 || r >= n) shape_error("gather_rows", x.shape(), Shape{r});
  }
  Tensor<T> out = output({static_cast<int64_t>(rows.size()), d}, {&x});
  const T* xv = x.data().data();
  T* o = out.data().data();
  for (size_t i = 0; i < rows.size(); ++i) std::copy_n(xv + rows[i] * d, d, o + static_cast<int64_t>(i) * d);
  if (out.requires_grad()) {
    record([xi = x.impl(), oi = out.impl(), rv = std::vector<int64_t>(rows.begin(), rows.end()), d] {
      if (oi->grad.empty()) return;
      auto& dx = grad_of(xi);
      for (size_t i = 0; i < rv.size(); ++i) {
        for (int64_t j = 0; j < d; ++j) dx[rv[i] * d + j] += oi->grad[static_cast<int64_t>(i) * d + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::concat_last(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  const Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  int64_t total = 0;
  std::vector<int64_t> widths;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin(), p.shape().end() - 1) != lead) shape_error("concat_last", parts[0].shape(), p.shape());
    widths.push_back(p.dim(-1));
    total += widths.back();
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor<T> out = output(out_shape, {});
  bool any_grad = false;
  for (const auto& p : parts) any_grad |= p.requires_grad();
  out.set_requires_grad(options_.record && any_grad);
  const int64_t rows = numel(lead);
  T* o = out.data().data();
  int64_t offset = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    const T* pv = parts[k].data().data();
    for (int64_t r = 0; r < rows; ++r) std::copy_n(pv + r * widths[k], widths[k], o + r * total + offset);
    offset += widths[k];
  }
  if (out.requires_grad()) {
    std::vector<std::shared_ptr<TensorImpl<T>>> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    record([impls, oi = out.impl(), widths, rows, total] {
      if (oi->grad.empty()) return;
      int64_t offset = 0;
      for (size_t k = 0; k < impls.size(); ++k) {
        if (impls[k]->requires_grad) {
          auto& dp = grad_of(impls[k]);
          for (int64_t r = 0; r < rows; ++r) {
            for (int64_t j = 0; j < widths[k]; ++j) dp[r * widths[k] + j] += oi->grad[r * total + offset + j];
          }
        }
        offset += widths[k];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::reshape(const Tensor<T>& x, const Shape& shape) {
  if (numel(shape) != x.numel()) shape_error("reshape", x.shape(), shape);
  Tensor<T> out = output(shape, {&x});
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  if (out.requires_grad()) {
    record([xi = x.impl(), oi = out.impl()] {
      if (oi->grad.empty()) return;
      auto& dx = grad_of(xi);
      for (size_t i = 0; i < dx.size(); ++i) dx[i] += oi->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::permute(const Tensor<T>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) shape_error("permute", x.shape());
  std::vector<int> seen(perm);
  std::sort(seen.begin(), seen.end());
  for (int i = 0; i < r; ++i) {
    if (seen[i] != i) shape_error("permute", x.shape());
  }
  Shape out_shape(r);
  for (int i = 0; i < r; ++i) out_shape[i] = x.dim(perm[i]);
  // in_strides[d]: stride of input dim d; out element walks its own shape
  std::vector<int64_t> in_strides(r, 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * x.dim(i + 1);
  std::vector<int64_t> src_stride(r);
  for (int i = 0; i < r; ++i) src_stride[i] = in_strides[perm[i]];
  // map[out_index] = in_index
  auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(x.numel()));
  std::vector<int64_t> idx(r, 0);
  for (int64_t o = 0; o < x.numel(); ++o) {
    int64_t src = 0;
    for (int i = 0; i < r; ++i) src += idx[i] * src_stride[i];
    (*map)[o] = src;
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor<T> out = output(out_shape, {&x});
  auto o = out.data();
  auto xv = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) o[i] = xv[(*map)[i]];
  if (out.requires_grad()) {
    record([xi = x.impl(), oi = out.impl(), map] {
      if (oi->grad.empty()) return;
      auto& dx = grad_of(xi);
      for (size_t i = 0; i < map->size(); ++i) dx[(*map)[i]] += oi->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::relative_gather(const Tensor<T>& p, int clip, bool key_form) {
  const int64_t range = 2 * static_cast<int64_t>(clip) + 1;
  if (p.rank() < 2 || p.dim(-1) != range) shape_error("relative_gather", p.shape());
  const int64_t len = p.dim(-2);
  const int64_t batch = p.numel() / (len * range);
  Shape out_shape(p.shape().begin(), p.shape().end() - 1);
  out_shape.push_back(len);
  Tensor<T> out = output(out_shape, {&p});
  const T* pv = p.data().data();
  T* o = out.data().data();
  auto dist = [clip](int64_t i, int64_t j) {
    return std::clamp<int64_t>(i - j, -clip, clip) + clip;
  };
  for (int64_t b = 0; b < batch; ++b) {
    const T* pb = pv + b * len * range;
    T* ob = o + b * len * len;
    for (int64_t i = 0; i < len; ++i) {
      for (int64_t j = 0; j < len; ++j) {
        ob[i * len + j] = key_form ? pb[j * range + dist(i, j)] : pb[i * range + dist(i, j)];
      }
    }
  }
  if (out.requires_grad()) {
    record([pi = p.impl(), oi = out.impl(), batch, len, range, key_form, dist] {
      if (oi->grad.empty()) return;
      auto& dp = grad_of(pi);
      for (int64_t b = 0; b < batch; ++b) {
        T* db = dp.data() + b * len * range;
        const T* gb = oi->grad.data() + b * len * len;
        for (int64_t i = 0; i < len; ++i) {
          for (int64_t j = 0; j < len; ++j) {
            const T g = gb[i * len + j];
            if (key_form) {
              db[j * range + dist(i, j)] += g;
            } else {
              db[i * range + dist(i, j)] += g;
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Tape<T>::cross_entropy(const Tensor<T>& logits, std::span<const int32_t> targets,
                                 std::span<const T> class_weights, int32_t ignore_label) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<int64_t>(targets.size())) {
    shape_error("cross_entropy", logits.shape(), Shape{static_cast<int64_t>(targets.size())});
  }
  const int64_t n = logits.dim(0);
  const int64_t c = logits.dim(1);
  if (!class_weights.empty() && static_cast<int64_t>(class_weights.size()) != c) {
    shape_error("cross_entropy", logits.shape(), Shape{static_cast<int64_t>(class_weights.size())});
  }
  auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(n * c));
  auto weights = std::make_shared<std::vector<T>>(static_cast<size_t>(n), T(0));
  double total_w = 0, loss = 0;
  const T* lv = logits.data().data();
  for (int64_t i = 0; i < n; ++i) {
    const int32_t t = targets[i];
    if (t == ignore_label) continue;
    if (t < 0 || t >= c) throw DataError("cross_entropy: target " + std::to_string(t) + " outside 0.." + std::to_string(c - 1));
    const T w = class_weights.empty() ? T(1) : class_weights[t];
    if (w == T(0)) continue;
    const T* row = lv + i * c;
    T* prow = probs->data() + i * c;
    const T mx = *std::max_element(row, row + c);
    double z = 0;
    for (int64_t j = 0; j < c; ++j) {
      prow[j] = std::exp(row[j] - mx);
      z += prow[j];
    }
    for (int64_t j = 0; j < c; ++j) prow[j] = static_cast<T>(prow[j] / z);
    loss += w * (std::log(z) + mx - row[t]);
    total_w += w;
    (*weights)[i] = w;
  }
  if (total_w <= 0) throw DataError("cross_entropy: no weighted targets");
  Tensor<T> out = output({}, {&logits});
  out.data()[0] = static_cast<T>(loss / total_w);
  if (out.requires_grad()) {
    record([li = logits.impl(), oi = out.impl(), probs, weights, tv = std::vector<int32_t>(targets.begin(), targets.end()),
            n, c, inv_w = T(1.0 / total_w)] {
      if (oi->grad.empty()) return;
      auto& dl = grad_of(li);
      const T g = oi->grad[0] * inv_w;
      for (int64_t i = 0; i < n; ++i) {
        const T w = (*weights)[i];
        if (w == T(0)) continue;
        for (int64_t j = 0; j < c; ++j) dl[i * c + j] += g * w * (*probs)[i * c + j];
        dl[i * c + tv[i]] -= g * w;
      }
    });
  }
  return out;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw NumericError("backward called twice on the same tape; run the forward pass again");
  if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got shape " + ad::to_string(loss.shape()));
  consumed_ = true;
  if (!loss.requires_grad()) return;
  grad_of(loss.impl())[0] += T(1);
  for (auto it = backward_.rbegin(); it != backward_.rend(); ++it) (*it)();
  backward_.clear();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

// ---------------------------------------------------------------------------
// Gradient check

double gradcheck(const std::function<Tensor<double>(Tape<double>&)>& f, std::vector<Tensor<double>> params,
                 double eps, size_t num_coords, uint64_t seed) {
  for (auto& p : params) p.zero_grad();
  {
    Tape<double> tape(TapeOptions{true, false, 0});
    Tensor<double> loss = f(tape);
    tape.backward(loss);
  }
  std::vector<std::pair<size_t, int64_t>> coords;
  size_t total = 0;
  for (const auto& p : params) total += static_cast<size_t>(p.numel());
  if (total <= num_coords) {
    for (size_t k = 0; k < params.size(); ++k) {
      for (int64_t i = 0; i < params[k].numel(); ++i) coords.emplace_back(k, i);
    }
  } else {
    Rng rng(seed);
    std::unordered_set<size_t> picked;
    while (picked.size() < num_coords) picked.insert(rng.below(total));
    std::vector<size_t> flat(picked.begin(), picked.end());
    std::sort(flat.begin(), flat.end());
    size_t k = 0, base = 0;
    for (size_t g : flat) {
      while (g >= base + static_cast<size_t>(params[k].numel())) base += static_cast<size_t>(params[k++].numel());
      coords.emplace_back(k, static_cast<int64_t>(g - base));
    }
  }

  auto eval = [&] {
    Tape<double> probe(TapeOptions{false, false, 0});
    return f(probe).item();
  };
  double worst = 0;
  for (const auto& [k, i] : coords) {
    Tensor<double>& p = params[k];
    const double analytic = p.has_grad() ? p.grad()[i] : 0.0;
    const double saved = p.data()[i];
    p.data()[i] = saved + eps;
    const double up = eval();
    p.data()[i] = saved - eps;
    const double down = eval();
    p.data()[i] = saved;
    const double numeric = (up - down) / (2 * eps);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

}  // namespace midibert::ad
