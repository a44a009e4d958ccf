#pragma once

// Dense row-major tensors with a reverse-mode gradient tape.
//
// A Tensor is a shared handle to its storage. Operations allocate fresh
// outputs; when a Tape is active on the calling thread and any input requires
// a gradient, the op appends a backward closure to that tape. Tape::backward
// replays the closures in exact reverse order, accumulating (summing) into
// every input's grad buffer.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tinyalign/errors.hpp"

namespace tinyalign {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Guard added inside logs and loss/normalization denominators.
inline constexpr double kEpsilon = 1e-12;

/// Storage is aligned to the widest vector width so that vectorized
/// reductions split the same way on every run (bit-reproducible training).
template <class T>
using Storage = std::vector<T, Eigen::aligned_allocator<T>>;

template <class T>
struct TensorImpl {
  Shape shape;
  Storage<T> data;
  Storage<T> grad;  // empty until first needed
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl<T>>()) {
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
    set_requires_grad(requires_grad);
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl<T>>()) {
    if (shape_numel(shape) != values.size())
      fail(ErrorKind::shape, "tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    impl_->shape = std::move(shape);
    impl_->data.assign(values.begin(), values.end());
    set_requires_grad(requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor(Shape{}, std::vector<T>{v}, requires_grad); }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim() const { return impl_->shape.size(); }
  std::size_t size(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  std::span<T> grad() { return impl_->grad; }
  std::span<const T> grad() const { return impl_->grad; }
  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }

  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }

  T item() const {
    if (numel() != 1) fail(ErrorKind::shape, "item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }

  /// Leaves that require a gradient get a zeroed buffer immediately, so an
  /// unreached parameter reads back as zero after backward().
  void set_requires_grad(bool on) {
    impl_->requires_grad = on;
    if (on) impl_->ensure_grad();
  }

  void zero_grad() {
    if (has_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  /// Copy of the values with no gradient tracking.
  Tensor detach() const {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->shape = shape();
    t.impl_->data = impl_->data;
    return t;
  }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

template <class T>
class Tape {
 public:
  Tape() : prev_(current_) { current_ = this; }
  ~Tape() { current_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_; }

  void record(std::function<void()> backward_fn) { entries_.push_back(std::move(backward_fn)); }
  std::size_t size() const { return entries_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. The tape is
  /// consumed.
  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) fail(ErrorKind::shape, "backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (entries_.empty()) fail(ErrorKind::invalid_argument, "backward: tape is empty");
    auto& impl = *loss.impl();
    impl.ensure_grad();
    impl.grad[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

 private:
  static inline thread_local Tape* current_ = nullptr;
  Tape* prev_;
  std::vector<std::function<void()>> entries_;
};

namespace detail {

template <class T, class... Ts>
Tape<T>* recording(const Tensor<T>& first, const Ts&... rest) {
  Tape<T>* tape = Tape<T>::current();
  if (!tape) return nullptr;
  bool any = first.requires_grad();
  ((any = any || (rest.defined() && rest.requires_grad())), ...);
  return any ? tape : nullptr;
}

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  // Branch-free scan: x - x is 0 for finite x and NaN otherwise.
  const auto v = t.data();
  const Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> a(v.data(), static_cast<Eigen::Index>(v.size()));
  if ((a - a).sum() != T(0)) fail(ErrorKind::numeric, std::string(op) + ": non-finite value produced");
}

/// False when no gradient flowed into `out` during backward, so the caller's
/// closure can return early.
template <class T>
bool reached(const std::shared_ptr<TensorImpl<T>>& out) {
  return out->grad.size() == out->data.size();
}

template <class T>
Tensor<T> make_output(Shape shape, Tape<T>* tape) {
  Tensor<T> out(std::move(shape));
  if (tape) out.impl()->requires_grad = true;
  return out;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      fail(ErrorKind::shape, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// Flat index into an operand for every flat index of the broadcast output.
inline std::vector<std::size_t> broadcast_index(const Shape& operand, const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < operand.size(); ++k) {
    const std::size_t axis = operand.size() - 1 - k;
    const std::size_t oaxis = rank - 1 - k;
    strides[oaxis] = operand[axis] == 1 ? 0 : stride;
    stride *= operand[axis];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t flat = 0;
  for (std::size_t i = 0; i < n; ++i) {
    index[i] = flat;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      flat += strides[d];
      if (counter[d] < out[d]) break;
      flat -= strides[d] * counter[d];
      counter[d] = 0;
    }
  }
  return index;
}

}  // namespace detail

enum class Elementwise { add, sub, mul, div, exp, log, sigmoid, relu6, clamp };

namespace detail {

/// log(sigmoid(x)) without overflow or underflow.
inline double log_sigmoid(double x) { return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

template <class T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
Tensor<T> binary(Elementwise kind, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tape<T>* tape = recording(a, b);
  Tensor<T> out = make_output<T>(out_shape, tape);
  const bool same = a.shape() == out_shape && b.shape() == out_shape;
  std::vector<std::size_t> ia, ib;
  if (!same) {
    ia = broadcast_index(a.shape(), out_shape);
    ib = broadcast_index(b.shape(), out_shape);
  }
  const auto av = a.data();
  const auto bv = b.data();
  auto ov = out.data();
  const std::size_t n = ov.size();
  auto A = [&](std::size_t i) { return same ? av[i] : av[ia[i]]; };
  auto B = [&](std::size_t i) { return same ? bv[i] : bv[ib[i]]; };
  switch (kind) {
    case Elementwise::add: for (std::size_t i = 0; i < n; ++i) ov[i] = A(i) + B(i); break;
    case Elementwise::sub: for (std::size_t i = 0; i < n; ++i) ov[i] = A(i) - B(i); break;
    case Elementwise::mul: for (std::size_t i = 0; i < n; ++i) ov[i] = A(i) * B(i); break;
    case Elementwise::div: for (std::size_t i = 0; i < n; ++i) ov[i] = A(i) / B(i); break;
    default: fail(ErrorKind::invalid_argument, "elementwise: not a binary op");
  }
  check_finite(out, "elementwise");
  if (tape) {
    tape->record([kind, same, ia = std::move(ia), ib = std::move(ib), a = a.impl(), b = b.impl(),
                  o = out.impl()] {
      if (!reached(o)) return;
      const std::size_t n = o->data.size();
      auto idx_a = [&](std::size_t i) { return same ? i : ia[i]; };
      auto idx_b = [&](std::size_t i) { return same ? i : ib[i]; };
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const T g = o->grad[i];
          switch (kind) {
            case Elementwise::add:
            case Elementwise::sub: a->grad[idx_a(i)] += g; break;
            case Elementwise::mul: a->grad[idx_a(i)] += g * b->data[idx_b(i)]; break;
            default: a->grad[idx_a(i)] += g / b->data[idx_b(i)]; break;
          }
        }
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const T g = o->grad[i];
          const T bi = b->data[idx_b(i)];
          switch (kind) {
            case Elementwise::add: b->grad[idx_b(i)] += g; break;
            case Elementwise::sub: b->grad[idx_b(i)] -= g; break;
            case Elementwise::mul: b->grad[idx_b(i)] += g * a->data[idx_a(i)]; break;
            default: b->grad[idx_b(i)] -= g * a->data[idx_a(i)] / (bi * bi); break;
          }
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> unary(Elementwise kind, const Tensor<T>& a, T lo = T(0), T hi = T(0)) {
  Tape<T>* tape = recording(a);
  Tensor<T> out = make_output<T>(a.shape(), tape);
  const auto av = a.data();
  auto ov = out.data();
  const T eps = static_cast<T>(kEpsilon);
  const std::size_t n = ov.size();
  switch (kind) {
    case Elementwise::exp: for (std::size_t i = 0; i < n; ++i) ov[i] = std::exp(av[i]); break;
    case Elementwise::log:
      for (std::size_t i = 0; i < n; ++i) {
        if (!(av[i] + eps > T(0))) fail(ErrorKind::numeric, "log: argument below -epsilon");
        ov[i] = std::log(av[i] + eps);
      }
      break;
    case Elementwise::sigmoid: for (std::size_t i = 0; i < n; ++i) ov[i] = sigmoid_scalar(av[i]); break;
    case Elementwise::relu6: for (std::size_t i = 0; i < n; ++i) ov[i] = std::min(std::max(av[i], T(0)), T(6)); break;
    case Elementwise::clamp: for (std::size_t i = 0; i < n; ++i) ov[i] = std::min(std::max(av[i], lo), hi); break;
    default: fail(ErrorKind::invalid_argument, "elementwise: not a unary op");
  }
  check_finite(out, "elementwise");
  if (tape) {
    tape->record([kind, lo, hi, eps, a = a.impl(), o = out.impl()] {
      if (!reached(o)) return;
      a->ensure_grad();
      const std::size_t n = o->data.size();
      const T* g = o->grad.data();
      const T* x = a->data.data();
      const T* y = o->data.data();
      T* ga = a->grad.data();
      switch (kind) {
        case Elementwise::exp: for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i]; break;
        case Elementwise::log: for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / (x[i] + eps); break;
        case Elementwise::sigmoid: for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]); break;
        case Elementwise::relu6:
          for (std::size_t i = 0; i < n; ++i) ga[i] += (x[i] > T(0) && x[i] < T(6)) ? g[i] : T(0);
          break;
        default:
          for (std::size_t i = 0; i < n; ++i) ga[i] += (x[i] > lo && x[i] < hi) ? g[i] : T(0);
          break;
      }
    });
  }
  return out;
}

}  // namespace detail

/// Dispatch by kind; binary kinds require `b`, unary kinds ignore it.
/// `clamp` through this entry point clamps to [0, 1].
template <class T>
Tensor<T> elementwise(Elementwise kind, const Tensor<T>& a, const Tensor<T>& b = {}) {
  switch (kind) {
    case Elementwise::add:
    case Elementwise::sub:
    case Elementwise::mul:
    case Elementwise::div:
      if (!b.defined()) fail(ErrorKind::invalid_argument, "elementwise: binary op needs two operands");
      return detail::binary(kind, a, b);
    case Elementwise::clamp: return detail::unary(kind, a, T(0), T(1));
    default: return detail::unary(kind, a);
  }
}

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(Elementwise::add, a, b); }
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(Elementwise::sub, a, b); }
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(Elementwise::mul, a, b); }
template <class T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(Elementwise::div, a, b); }
template <class T> Tensor<T> exp(const Tensor<T>& a) { return detail::unary(Elementwise::exp, a); }
template <class T> Tensor<T> log(const Tensor<T>& a) { return detail::unary(Elementwise::log, a); }
template <class T> Tensor<T> sigmoid(const Tensor<T>& a) { return detail::unary(Elementwise::sigmoid, a); }
template <class T> Tensor<T> relu6(const Tensor<T>& a) { return detail::unary(Elementwise::relu6, a); }
template <class T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) { return detail::unary(Elementwise::clamp, a, lo, hi); }

template <class T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <class T> Tensor<T> operator*(const Tensor<T>& a, T s) { return mul(a, Tensor<T>::scalar(s)); }
template <class T> Tensor<T> operator*(T s, const Tensor<T>& a) { return mul(a, Tensor<T>::scalar(s)); }
template <class T> Tensor<T> operator+(const Tensor<T>& a, T s) { return add(a, Tensor<T>::scalar(s)); }
template <class T> Tensor<T> operator-(const Tensor<T>& a, T s) { return sub(a, Tensor<T>::scalar(s)); }

enum class Reduce { sum, mean, max };

/// Reduces over `axes` (all axes when empty); reduced axes are dropped from
/// the result shape. Sum of an empty extent is 0; mean and max of an empty
/// extent are errors.
template <class T>
Tensor<T> reduce(Reduce kind, const Tensor<T>& a, std::vector<int> axes = {}) {
  const std::size_t rank = a.dim();
  std::vector<bool> reduced(rank, axes.empty());
  for (int ax : axes) {
    if (ax < 0 || static_cast<std::size_t>(ax) >= rank)
      fail(ErrorKind::shape, "reduce: invalid axis " + std::to_string(ax) + " for shape " + shape_str(a.shape()));
    reduced[ax] = true;
  }
  Shape out_shape, kept_shape(rank);
  std::size_t count = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    kept_shape[d] = reduced[d] ? 1 : a.shape()[d];
    if (reduced[d]) count *= a.shape()[d];
    else out_shape.push_back(a.shape()[d]);
  }
  if (count == 0 && kind != Reduce::sum) fail(ErrorKind::shape, "reduce: mean/max over an empty extent");

  // Map every input element to its output slot by broadcasting the output
  // (with reduced axes kept as 1) back over the input shape.
  std::vector<std::size_t> slot = detail::broadcast_index(kept_shape, a.shape());
  Tape<T>* tape = detail::recording(a);
  Tensor<T> out = detail::make_output<T>(out_shape, tape);
  auto ov = out.data();
  const auto av = a.data();
  std::vector<std::size_t> arg;
  if (kind == Reduce::max) {
    arg.assign(ov.size(), std::numeric_limits<std::size_t>::max());
    for (std::size_t i = 0; i < av.size(); ++i) {
      std::size_t& best = arg[slot[i]];
      if (best == std::numeric_limits<std::size_t>::max() || av[i] > av[best]) best = i;
    }
    for (std::size_t k = 0; k < ov.size(); ++k) ov[k] = av[arg[k]];
  } else {
    for (std::size_t i = 0; i < av.size(); ++i) ov[slot[i]] += av[i];
    if (kind == Reduce::mean)
      for (T& v : ov) v /= static_cast<T>(count);
  }
  detail::check_finite(out, "reduce");
  if (tape) {
    tape->record([kind, count, slot = std::move(slot), arg = std::move(arg), a = a.impl(), o = out.impl()] {
      if (!detail::reached(o)) return;
      a->ensure_grad();
      if (kind == Reduce::max) {
        for (std::size_t k = 0; k < arg.size(); ++k) a->grad[arg[k]] += o->grad[k];
        return;
      }
      const T scale = kind == Reduce::mean ? T(1) / static_cast<T>(count) : T(1);
      for (std::size_t i = 0; i < slot.size(); ++i) a->grad[i] += o->grad[slot[i]] * scale;
    });
  }
  return out;
}

template <class T> Tensor<T> sum(const Tensor<T>& a, std::vector<int> axes = {}) { return reduce(Reduce::sum, a, std::move(axes)); }
template <class T> Tensor<T> mean(const Tensor<T>& a, std::vector<int> axes = {}) { return reduce(Reduce::mean, a, std::move(axes)); }

/// Same values under a new shape of equal element count.
template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    fail(ErrorKind::shape, "reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  Tape<T>* tape = detail::recording(a);
  Tensor<T> out = detail::make_output<T>(std::move(shape), tape);
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  if (tape) {
    tape->record([a = a.impl(), o = out.impl()] {
      if (!detail::reached(o)) return;
      a->ensure_grad();
      for (std::size_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i];
    });
  }
  return out;
}

}  // namespace tinyalign
