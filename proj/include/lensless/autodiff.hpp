#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "lensless/numerics.hpp"

// Minimal reverse-mode differentiation over the primitive set used by the
// reconstruction pipelines. Values are computed eagerly. An operation is
// recorded on a Tape only when one of its inputs is recorded, so the same code
// runs as a plain evaluation when no tape is involved.
//
// Complex gradients follow the convention dL/da + i dL/db for z = a + ib.
namespace lensless::ad {

class Tape;

template <typename T>
class Handle {
 public:
  Handle() = default;
  explicit Handle(T value) : value_(std::make_shared<const T>(std::move(value))) {}

  const T& value() const { return *value_; }
  const Shape& shape() const { return value_->shape(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool recorded() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  std::shared_ptr<const T> value_;
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using Var = Handle<Tensor>;
using CVar = Handle<Spectrum>;

Var scalar(double v);

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  CVar leaf(Spectrum value);

  Var record(Tensor value, std::function<void(Tape&, const Tensor&)> backward);
  CVar record(Spectrum value, std::function<void(Tape&, const Spectrum&)> backward);

  // Adds g into the gradient of v. No-op for handles not recorded here.
  void accumulate(const Var& v, const Tensor& g);
  void accumulate(const CVar& v, const Spectrum& g);

  // Seals the graph; no further operations may be recorded.
  void finalize() { finalized_ = true; }
  bool finalized() const { return finalized_; }

  // Reverse sweep from `output` seeded with `seed`. Throws GraphNotFinalized
  // unless finalize() was called.
  void backward(const Var& output, const Tensor& seed);
  void backward(const Var& scalar_output);

  // Gradient of the last backward sweep; zeros when nothing reached v.
  Tensor grad(const Var& v) const;
  Spectrum grad(const CVar& v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    bool complex = false;
    std::function<void(Tape&, const Tensor&)> real_backward;
    std::function<void(Tape&, const Spectrum&)> complex_backward;
    std::optional<Tensor> real_grad;
    std::optional<Spectrum> complex_grad;
  };

  std::size_t push(Node node);

  std::vector<Node> nodes_;
  bool finalized_ = false;
};

// Elementwise arithmetic on equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var reciprocal(const Var& a);

// Scalar (1x1x1) broadcasting.
Var scale(const Var& s, const Var& a);
Var div_scalar(const Var& a, const Var& s);
Var add_scalar(const Var& a, const Var& s);

// Nonlinearities.
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var clamp(const Var& a, double lo, double hi);
// sign(a) max(|a| - thr, 0) with a scalar threshold. The derivative at the kink
// is taken as zero.
Var soft_threshold(const Var& a, const Var& thr);
Var softplus(const Var& a);

// Circular forward difference along axis 0 (rows) or 1 (columns), and its
// adjoint.
Var circ_diff(const Var& a, int axis);
Var circ_diff_adjoint(const Var& a, int axis);

Var pad(const Var& a, int height, int width);
Var crop(const Var& a, int height, int width);
Var concat(const Var& a, const Var& b);
Var slice(const Var& a, int first, int count);

// 3x3 zero-padded stride-1 correlation. weight has shape (cout, cin * 9, 1)
// laid out as [o][i][ky][kx]; bias has shape (cout, 1, 1).
Var conv3x3(const Var& x, const Var& weight, const Var& bias);

// Reductions to a 1x1x1 scalar.
Var mse(const Var& a, const Var& b);
Var sum_squares(const Var& a);

// Spectral primitives.
CVar fft(const Var& a);
CVar ifft(const CVar& z);
Var real(const CVar& z);
CVar cmul(const CVar& a, const CVar& b);
CVar cmul_real(const CVar& z, const Var& r);

// Element `index` of a flattened tensor as a scalar.
Var pick(const Var& a, std::size_t index);

// Plain-value softplus shared with the recorded op so both paths agree bitwise.
double softplus_value(double v);
// Inverse of softplus for v > 0.
double softplus_inverse(double v);

// Maps parameter storage to graph leaves. With a tape, each distinct block
// becomes one leaf (repeat binds return the same leaf); without a tape, blocks
// are wrapped as constants. Gradients are looked up by block address, so a
// parameter that never reached the graph reports a zero gradient.
class Binder {
 public:
  explicit Binder(Tape* tape = nullptr) : tape_(tape) {}

  Tape* tape() const { return tape_; }
  Var bind(const Tensor& block);
  CVar bind(const Spectrum& block);

  Tensor grad(const Tensor& block) const;
  Spectrum grad(const Spectrum& block) const;

 private:
  Tape* tape_;
  std::vector<std::pair<const void*, Var>> real_;
  std::vector<std::pair<const void*, CVar>> complex_;
};

}  // namespace lensless::ad
