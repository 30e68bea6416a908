#include "lensless/autodiff.hpp"

#include <cmath>
#include <initializer_list>

namespace lensless::ad {

namespace {

Tape* common_tape(std::initializer_list<Tape*> tapes) {
  Tape* found = nullptr;
  for (Tape* t : tapes) {
    if (t == nullptr) continue;
    if (found != nullptr && found != t) throw Error("operands recorded on different tapes");
    found = t;
  }
  return found;
}

void require_scalar(const Var& s, const char* where) {
  if (!(s.shape() == Shape{1, 1, 1})) {
    throw ShapeMismatch(std::string(where) + ": expected scalar, got " + to_string(s.shape()));
  }
}

Tensor scalar_tensor(double v) { return Tensor({1, 1, 1}, v); }

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

Var scalar(double v) { return Var(scalar_tensor(v)); }

std::size_t Tape::push(Node node) {
  if (finalized_) throw Error("cannot record on a finalized tape");
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

Var Tape::leaf(Tensor value) { return record(std::move(value), nullptr); }
CVar Tape::leaf(Spectrum value) { return record(std::move(value), nullptr); }

Var Tape::record(Tensor value, std::function<void(Tape&, const Tensor&)> backward) {
  Node node;
  node.shape = value.shape();
  node.real_backward = std::move(backward);
  Var v(std::move(value));
  v.tape_ = this;
  v.id_ = push(std::move(node));
  return v;
}

CVar Tape::record(Spectrum value, std::function<void(Tape&, const Spectrum&)> backward) {
  Node node;
  node.shape = value.shape();
  node.complex = true;
  node.complex_backward = std::move(backward);
  CVar v(std::move(value));
  v.tape_ = this;
  v.id_ = push(std::move(node));
  return v;
}

void Tape::accumulate(const Var& v, const Tensor& g) {
  if (v.tape() != this) return;
  Node& n = nodes_[v.id()];
  require_same_shape(n.shape, g.shape(), "gradient accumulation");
  if (!n.real_grad) {
    n.real_grad = g;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) (*n.real_grad)[i] += g[i];
  }
}

void Tape::accumulate(const CVar& v, const Spectrum& g) {
  if (v.tape() != this) return;
  Node& n = nodes_[v.id()];
  require_same_shape(n.shape, g.shape(), "gradient accumulation");
  if (!n.complex_grad) {
    n.complex_grad = g;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) (*n.complex_grad)[i] += g[i];
  }
}

void Tape::backward(const Var& output, const Tensor& seed) {
  if (!finalized_) throw GraphNotFinalized("call finalize() before backward()");
  if (output.tape() != this) throw Error("backward: output was not recorded on this tape");
  for (Node& n : nodes_) {
    n.real_grad.reset();
    n.complex_grad.reset();
  }
  accumulate(output, seed);
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.complex) {
      if (n.complex_grad && n.complex_backward) n.complex_backward(*this, *n.complex_grad);
    } else {
      if (n.real_grad && n.real_backward) n.real_backward(*this, *n.real_grad);
    }
  }
}

void Tape::backward(const Var& scalar_output) {
  require_scalar(scalar_output, "backward");
  backward(scalar_output, scalar_tensor(1.0));
}

Tensor Tape::grad(const Var& v) const {
  if (v.tape() == this && nodes_[v.id()].real_grad) return *nodes_[v.id()].real_grad;
  return Tensor(v.shape());
}

Spectrum Tape::grad(const CVar& v) const {
  if (v.tape() == this && nodes_[v.id()].complex_grad) return *nodes_[v.id()].complex_grad;
  return Spectrum(v.shape());
}

Var add(const Var& a, const Var& b) {
  Tensor out = a.value() + b.value();
  Tape* t = common_tape({a.tape(), b.tape()});
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [a, b](Tape& tape, const Tensor& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  Tensor out = a.value() - b.value();
  Tape* t = common_tape({a.tape(), b.tape()});
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [a, b](Tape& tape, const Tensor& g) {
    tape.accumulate(a, g);
    if (b.recorded()) tape.accumulate(b, -1.0 * g);
  });
}

Var mul(const Var& a, const Var& b) {
  Tensor out = hadamard(a.value(), b.value());
  Tape* t = common_tape({a.tape(), b.tape()});
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [a, b](Tape& tape, const Tensor& g) {
    if (a.recorded()) tape.accumulate(a, hadamard(g, b.value()));
    if (b.recorded()) tape.accumulate(b, hadamard(g, a.value()));
  });
}

Var reciprocal(const Var& a) {
  Tensor out = map(a.value(), [](double v) { return 1.0 / v; });
  Tape* t = a.tape();
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [a](Tape& tape, const Tensor& g) {
    Tensor ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = a.value()[i];
      ga[i] = -g[i] / (v * v);
    }
    tape.accumulate(a, ga);
  });
}

Var scale(const Var& s, const Var& a) {
  require_scalar(s, "scale");
  const double sv = s.value()[0];
  Tensor out = map(a.value(), [sv](double v) { return sv * v; });
  Tape* t = common_tape({s.tape(), a.tape()});
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [s, a](Tape& tape, const Tensor& g) {
    if (a.recorded()) tape.accumulate(a, s.value()[0] * g);
    if (s.recorded()) tape.accumulate(s, scalar_tensor(dot(g, a.value())));
  });
}

Var div_scalar(const Var& a, const Var& s) {
  require_scalar(s, "div_scalar");
  const double sv = s.value()[0];
  Tensor out = map(a.value(), [sv](double v) { return v / sv; });
  Tape* t = common_tape({s.tape(), a.tape()});
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [s, a](Tape& tape, const Tensor& g) {
    const double sv = s.value()[0];
    if (a.recorded()) tape.accumulate(a, map(g, [sv](double v) { return v / sv; }));
    if (s.recorded()) tape.accumulate(s, scalar_tensor(-dot(g, a.value()) / (sv * sv)));
  });
}

Var add_scalar(const Var& a, const Var& s) {
  require_scalar(s, "add_scalar");
  const double sv = s.value()[0];
  Tensor out = map(a.value(), [sv](double v) { return v + sv; });
  Tape* t = common_tape({s.tape(), a.tape()});
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [s, a](Tape& tape, const Tensor& g) {
    tape.accumulate(a, g);
    if (s.recorded()) tape.accumulate(s, scalar_tensor(sum(g)));
  });
}

Var relu(const Var& a) {
  Tensor out = map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  Tape* t = a.tape();
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [a](Tape& tape, const Tensor& g) {
    Tensor ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = a.value()[i] > 0.0 ? g[i] : 0.0;
    tape.accumulate(a, ga);
  });
}

Var leaky_relu(const Var& a, double slope) {
  Tensor out = map(a.value(), [slope](double v) { return v > 0.0 ? v : slope * v; });
  Tape* t = a.tape();
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [a, slope](Tape& tape, const Tensor& g) {
    Tensor ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = a.value()[i] > 0.0 ? g[i] : slope * g[i];
    }
    tape.accumulate(a, ga);
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Tensor out = map(a.value(), [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); });
  Tape* t = a.tape();
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [a, lo, hi](Tape& tape, const Tensor& g) {
    Tensor ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = a.value()[i];
      ga[i] = (v > lo && v < hi) ? g[i] : 0.0;
    }
    tape.accumulate(a, ga);
  });
}

Var soft_threshold(const Var& a, const Var& thr) {
  require_scalar(thr, "soft_threshold");
  const double th = thr.value()[0];
  Tensor out = map(a.value(), [th](double v) {
    const double m = std::abs(v) - th;
    if (m <= 0.0) return 0.0;
    return v > 0.0 ? m : -m;
  });
  Tape* t = common_tape({a.tape(), thr.tape()});
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [a, thr](Tape& tape, const Tensor& g) {
    const double th = thr.value()[0];
    Tensor ga(g.shape());
    double gt = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = a.value()[i];
      if (std::abs(v) - th > 0.0) {
        ga[i] = g[i];
        gt -= v > 0.0 ? g[i] : -g[i];
      }
    }
    if (a.recorded()) tape.accumulate(a, ga);
    if (thr.recorded()) tape.accumulate(thr, scalar_tensor(gt));
  });
}

Var softplus(const Var& a) {
  Tensor out = map(a.value(), softplus_value);
  Tape* t = a.tape();
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [a](Tape& tape, const Tensor& g) {
    Tensor ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] / (1.0 + std::exp(-a.value()[i]));
    }
    tape.accumulate(a, ga);
  });
}

namespace {

// d[y,x] = a[y+1,x] - a[y,x] (axis 0) or a[y,x+1] - a[y,x] (axis 1), circular.
Tensor diff_forward(const Tensor& a, int axis) {
  Tensor out(a.shape());
  const int h = a.height(), w = a.width(), ch = a.channels();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int ny = axis == 0 ? (y + 1) % h : y;
      const int nx = axis == 1 ? (x + 1) % w : x;
      for (int c = 0; c < ch; ++c) out(y, x, c) = a(ny, nx, c) - a(y, x, c);
    }
  }
  return out;
}

// Transpose of diff_forward: d[y,x] = a[y-1,x] - a[y,x].
Tensor diff_adjoint(const Tensor& a, int axis) {
  Tensor out(a.shape());
  const int h = a.height(), w = a.width(), ch = a.channels();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int py = axis == 0 ? (y - 1 + h) % h : y;
      const int px = axis == 1 ? (x - 1 + w) % w : x;
      for (int c = 0; c < ch; ++c) out(y, x, c) = a(py, px, c) - a(y, x, c);
    }
  }
  return out;
}

void check_axis(int axis) {
  if (axis != 0 && axis != 1) throw InvalidParams("axis must be 0 or 1");
}

}  // namespace

Var circ_diff(const Var& a, int axis) {
  check_axis(axis);
  Tensor out = diff_forward(a.value(), axis);
  Tape* t = a.tape();
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [a, axis](Tape& tape, const Tensor& g) {
    tape.accumulate(a, diff_adjoint(g, axis));
  });
}

Var circ_diff_adjoint(const Var& a, int axis) {
  check_axis(axis);
  Tensor out = diff_adjoint(a.value(), axis);
  Tape* t = a.tape();
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [a, axis](Tape& tape, const Tensor& g) {
    tape.accumulate(a, diff_forward(g, axis));
  });
}

Var pad(const Var& a, int height, int width) {
  Tensor out = pad_center(a.value(), height, width);
  Tape* t = a.tape();
  if (!t) return Var(std::move(out));
  const int h = a.shape().height, w = a.shape().width;
  return t->record(std::move(out), [a, h, w](Tape& tape, const Tensor& g) {
    tape.accumulate(a, crop_center(g, h, w));
  });
}

Var crop(const Var& a, int height, int width) {
  Tensor out = crop_center(a.value(), height, width);
  Tape* t = a.tape();
  if (!t) return Var(std::move(out));
  const int h = a.shape().height, w = a.shape().width;
  return t->record(std::move(out), [a, h, w](Tape& tape, const Tensor& g) {
    tape.accumulate(a, pad_center(g, h, w));
  });
}

Var concat(const Var& a, const Var& b) {
  Tensor out = concat_channels(a.value(), b.value());
  Tape* t = common_tape({a.tape(), b.tape()});
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [a, b](Tape& tape, const Tensor& g) {
    const int ca = a.shape().channels;
    if (a.recorded()) tape.accumulate(a, slice_channels(g, 0, ca));
    if (b.recorded()) tape.accumulate(b, slice_channels(g, ca, b.shape().channels));
  });
}

Var slice(const Var& a, int first, int count) {
  Tensor out = slice_channels(a.value(), first, count);
  Tape* t = a.tape();
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [a, first, count](Tape& tape, const Tensor& g) {
    Tensor ga(a.shape());
    for (int y = 0; y < g.height(); ++y) {
      for (int x = 0; x < g.width(); ++x) {
        for (int c = 0; c < count; ++c) ga(y, x, first + c) = g(y, x, c);
      }
    }
    tape.accumulate(a, ga);
  });
}

Var conv3x3(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& in = x.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  const int cin = in.channels();
  const int cout = w.height();
  if (w.width() != cin * 9 || w.channels() != 1 || !(b.shape() == Shape{cout, 1, 1})) {
    throw ShapeMismatch("conv3x3: input " + to_string(in.shape()) + ", weight " +
                        to_string(w.shape()) + ", bias " + to_string(b.shape()));
  }
  const int h = in.height(), wd = in.width();
  Tensor out({h, wd, cout});
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < wd; ++xx) {
      for (int o = 0; o < cout; ++o) {
        double acc = b[static_cast<std::size_t>(o)];
        const double* wo = w.data() + static_cast<std::size_t>(o) * cin * 9;
        for (int i = 0; i < cin; ++i) {
          for (int ky = 0; ky < 3; ++ky) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int sx = xx + kx - 1;
              if (sx < 0 || sx >= wd) continue;
              acc += wo[i * 9 + ky * 3 + kx] * in(sy, sx, i);
            }
          }
        }
        out(y, xx, o) = acc;
      }
    }
  }
  Tape* t = common_tape({x.tape(), weight.tape(), bias.tape()});
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [x, weight, bias](Tape& tape, const Tensor& g) {
    const Tensor& in = x.value();
    const Tensor& w = weight.value();
    const int cin = in.channels(), cout = w.height();
    const int h = in.height(), wd = in.width();
    Tensor gin(in.shape());
    Tensor gw(w.shape());
    Tensor gb(bias.shape());
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < wd; ++xx) {
        for (int o = 0; o < cout; ++o) {
          const double go = g(y, xx, o);
          if (go == 0.0) continue;
          gb[static_cast<std::size_t>(o)] += go;
          const std::size_t base = static_cast<std::size_t>(o) * cin * 9;
          for (int i = 0; i < cin; ++i) {
            for (int ky = 0; ky < 3; ++ky) {
              const int sy = y + ky - 1;
              if (sy < 0 || sy >= h) continue;
              for (int kx = 0; kx < 3; ++kx) {
                const int sx = xx + kx - 1;
                if (sx < 0 || sx >= wd) continue;
                const std::size_t k = base + static_cast<std::size_t>(i * 9 + ky * 3 + kx);
                gw[k] += go * in(sy, sx, i);
                gin(sy, sx, i) += go * w[k];
              }
            }
          }
        }
      }
    }
    if (x.recorded()) tape.accumulate(x, gin);
    if (weight.recorded()) tape.accumulate(weight, gw);
    if (bias.recorded()) tape.accumulate(bias, gb);
  });
}

Var mse(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "mse");
  const double n = static_cast<double>(a.value().size());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    const double d = a.value()[i] - b.value()[i];
    acc += d * d;
  }
  Tensor out = scalar_tensor(acc / n);
  Tape* t = common_tape({a.tape(), b.tape()});
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [a, b, n](Tape& tape, const Tensor& g) {
    const double s = 2.0 * g[0] / n;
    Tensor diff = a.value() - b.value();
    if (a.recorded()) tape.accumulate(a, s * diff);
    if (b.recorded()) tape.accumulate(b, -s * diff);
  });
}

Var sum_squares(const Var& a) {
  Tensor out = scalar_tensor(dot(a.value(), a.value()));
  Tape* t = a.tape();
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [a](Tape& tape, const Tensor& g) {
    tape.accumulate(a, (2.0 * g[0]) * a.value());
  });
}

CVar fft(const Var& a) {
  Spectrum out = fft2(a.value());
  Tape* t = a.tape();
  if (!t) return CVar(std::move(out));
  return t->record(std::move(out), [a](Tape& tape, const Spectrum& g) {
    // Adjoint of the unscaled forward DFT is the unscaled backward DFT.
    tape.accumulate(a, real_part(dft2_backward(g)));
  });
}

CVar ifft(const CVar& z) {
  Spectrum out = ifft2_complex(z.value());
  Tape* t = z.tape();
  if (!t) return CVar(std::move(out));
  return t->record(std::move(out), [z](Tape& tape, const Spectrum& g) {
    Spectrum gz = dft2_forward(g);
    const double s = 1.0 / static_cast<double>(g.shape().plane());
    for (Complex& v : gz.values()) v *= s;
    tape.accumulate(z, gz);
  });
}

Var real(const CVar& z) {
  Tensor out = real_part(z.value());
  Tape* t = z.tape();
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [z](Tape& tape, const Tensor& g) {
    tape.accumulate(z, to_complex(g));
  });
}

CVar cmul(const CVar& a, const CVar& b) {
  require_same_shape(a.shape(), b.shape(), "cmul");
  Spectrum out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  Tape* t = common_tape({a.tape(), b.tape()});
  if (!t) return CVar(std::move(out));
  return t->record(std::move(out), [a, b](Tape& tape, const Spectrum& g) {
    if (a.recorded()) {
      Spectrum ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * std::conj(b.value()[i]);
      tape.accumulate(a, ga);
    }
    if (b.recorded()) {
      Spectrum gb(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * std::conj(a.value()[i]);
      tape.accumulate(b, gb);
    }
  });
}

CVar cmul_real(const CVar& z, const Var& r) {
  require_same_shape(z.shape(), r.shape(), "cmul_real");
  Spectrum out(z.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = z.value()[i] * r.value()[i];
  Tape* t = common_tape({z.tape(), r.tape()});
  if (!t) return CVar(std::move(out));
  return t->record(std::move(out), [z, r](Tape& tape, const Spectrum& g) {
    if (z.recorded()) {
      Spectrum gz(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) gz[i] = g[i] * r.value()[i];
      tape.accumulate(z, gz);
    }
    if (r.recorded()) {
      Tensor gr(r.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        gr[i] = (g[i] * std::conj(z.value()[i])).real();
      }
      tape.accumulate(r, gr);
    }
  });
}

Var pick(const Var& a, std::size_t index) {
  if (index >= a.value().size()) {
    throw OutOfRange("pick: index " + std::to_string(index) + " of " + to_string(a.shape()));
  }
  Tensor out = scalar_tensor(a.value()[index]);
  Tape* t = a.tape();
  if (!t) return Var(std::move(out));
  return t->record(std::move(out), [a, index](Tape& tape, const Tensor& g) {
    Tensor ga(a.shape());
    ga[index] = g[0];
    tape.accumulate(a, ga);
  });
}

double softplus_value(double v) {
  return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

double softplus_inverse(double v) {
  if (!(v > 0.0)) throw InvalidParams("softplus_inverse needs a positive value");
  // log(exp(v) - 1), written to stay accurate for both small and large v.
  return v > 20.0 ? v + std::log1p(-std::exp(-v)) : std::log(std::expm1(v));
}

Var Binder::bind(const Tensor& block) {
  if (!tape_) return Var(block);
  for (const auto& [key, var] : real_) {
    if (key == &block) return var;
  }
  Var leaf = tape_->leaf(block);
  real_.emplace_back(&block, leaf);
  return leaf;
}

CVar Binder::bind(const Spectrum& block) {
  if (!tape_) return CVar(block);
  for (const auto& [key, var] : complex_) {
    if (key == &block) return var;
  }
  CVar leaf = tape_->leaf(block);
  complex_.emplace_back(&block, leaf);
  return leaf;
}

Tensor Binder::grad(const Tensor& block) const {
  for (const auto& [key, var] : real_) {
    if (key == &block) return tape_->grad(var);
  }
  return Tensor(block.shape());
}

Spectrum Binder::grad(const Spectrum& block) const {
  for (const auto& [key, var] : complex_) {
    if (key == &block) return tape_->grad(var);
  }
  return Spectrum(block.shape());
}

}  // namespace lensless::ad
