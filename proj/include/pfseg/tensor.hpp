#pragma once

// Dense double-precision tensors with a reverse-mode gradient tape.
//
// A Tensor is a shared handle to an immutable value (shape + contiguous data).
// Operations executed while a GradientTape is active, and touching at least one
// tensor that requires gradients, append a backward closure to that tape.
// GradientTape::backward replays the closures in exact reverse recording order,
// which is a reverse topological order because inputs always exist before the
// outputs computed from them.

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace pfseg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or extent mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation (e.g. log of 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced, or a numeric check (such as a gradient check) failed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or parameter value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the gradient tape (double backward, non-scalar loss, ...).
class TapeError : public Error {
 public:
  using Error::Error;
};

/// The finite-difference oracle itself is unusable (non-deterministic f).
class OracleError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  bool has_producer = false;  // output of a recorded op (not a leaf)
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : impl_(std::make_shared<detail::TensorImpl>()) {
    validate_shape(shape);
    impl_->data.assign(pfseg::numel(shape), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<double> data) : impl_(std::make_shared<detail::TensorImpl>()) {
    validate_shape(shape);
    if (pfseg::numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + to_string(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
  }

  static Tensor scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

  /// n x n identity matrix.
  static Tensor eye(std::size_t n) {
    Tensor t(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) t.impl_->data[i * n + i] = 1.0;
    return t;
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  const double* raw() const { return impl_->data.data(); }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t i) const { return impl_->data.at(i); }

  /// Value of a single-element tensor.
  double item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
    return impl_->data[0];
  }

  /// Writable view for leaves (parameters, inputs). Mutating a tensor that
  /// has already been consumed by a recorded op invalidates that recording.
  std::span<double> mutable_data() { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    impl_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return !impl_->has_producer; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  /// Detached copy: same values, no gradient history.
  Tensor detach() const { return Tensor(shape(), impl_->data); }

  bool same_node(const Tensor& other) const { return impl_ == other.impl_; }
  detail::TensorImpl* impl() const { return impl_.get(); }

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
    for (auto e : shape) {
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
    }
  }

  std::shared_ptr<detail::TensorImpl> impl_;
};

class GradientTape;

namespace detail {

inline GradientTape*& active_tape_slot() {
  thread_local GradientTape* tape = nullptr;
  return tape;
}

}  // namespace detail

inline GradientTape* active_tape() { return detail::active_tape_slot(); }

class GradientTape {
 public:
  GradientTape() = default;
  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  void record(std::initializer_list<Tensor> inputs, Tensor& output, std::function<void()> backward) {
    record(std::vector<Tensor>(inputs), output, std::move(backward));
  }

  void record(const std::vector<Tensor>& inputs, Tensor& output, std::function<void()> backward) {
    for (const auto& in : inputs) {
      if (!in.defined() || !in.requires_grad() || !in.is_leaf()) continue;
      if (leaf_set_.insert(in.impl()).second) leaves_.push_back(in);
    }
    output.impl()->has_producer = true;
    output.impl()->requires_grad = true;
    entries_.push_back(std::move(backward));
    consumed_ = false;
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  void backward(const Tensor& loss) {
    if (consumed_) throw TapeError("backward called twice without a new forward pass");
    if (!loss.defined() || loss.numel() != 1) throw TapeError("backward requires a scalar loss");
    if (!loss.requires_grad()) throw TapeError("loss does not depend on any recorded operation");
    auto& g = loss.impl()->grad;
    if (g.empty()) g.assign(1, 0.0);
    g[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
    consumed_ = true;
  }

  const std::vector<Tensor>& leaves() const { return leaves_; }
  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> entries_;
  std::vector<Tensor> leaves_;
  std::unordered_set<const detail::TensorImpl*> leaf_set_;
  bool consumed_ = false;
};

/// Makes `tape` the active tape for the current thread for the scope's
/// lifetime. Passing nullptr disables recording (evaluation mode).
class TapeScope {
 public:
  explicit TapeScope(GradientTape* tape) : previous_(detail::active_tape_slot()) {
    detail::active_tape_slot() = tape;
  }
  ~TapeScope() { detail::active_tape_slot() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradientTape* previous_;
};

class NoGradScope : public TapeScope {
 public:
  NoGradScope() : TapeScope(nullptr) {}
};

namespace detail {

/// Active tape if any input requires a gradient, else nullptr.
inline GradientTape* recording(std::initializer_list<const Tensor*> inputs) {
  GradientTape* tape = active_tape();
  if (!tape) return nullptr;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

/// Gradient buffer of `t`, allocated (zeroed) on first use.
inline std::span<double> grad_of(const Tensor& t) {
  auto& g = t.impl()->grad;
  if (g.empty()) g.assign(t.numel(), 0.0);
  return g;
}

/// Gradient of an op output; zeros when nothing downstream contributed.
inline std::span<const double> out_grad(const Tensor& t) { return grad_of(t); }

inline void ensure_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

}  // namespace detail

}  // namespace pfseg
