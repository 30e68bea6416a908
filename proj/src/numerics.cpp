#include "lensless/numerics.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

namespace lensless {

std::string to_string(const Shape& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" +
         std::to_string(s.channels);
}

void require_same_shape(const Shape& a, const Shape& b, const char* where) {
  if (!(a == b)) {
    throw ShapeMismatch(std::string(where) + ": " + to_string(a) + " vs " + to_string(b));
  }
}

namespace {

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* where, F f) {
  require_same_shape(a.shape(), b.shape(), where);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

// FFTW planning is not thread-safe; execution of an existing plan is. Plans are
// cached per (height, width, channels, sign) and never destroyed.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(const Shape& s, int sign) {
    std::lock_guard lock(mutex_);
    auto key = std::make_tuple(s.height, s.width, s.channels, sign);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::vector<Complex> in(s.size()), out(s.size());
    int n[2] = {s.height, s.width};
    fftw_plan plan = fftw_plan_many_dft(
        2, n, s.channels, reinterpret_cast<fftw_complex*>(in.data()), nullptr, s.channels, 1,
        reinterpret_cast<fftw_complex*>(out.data()), nullptr, s.channels, 1, sign,
        FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<int, int, int, int>, fftw_plan> plans_;
};

Spectrum transform(const Spectrum& s, int sign) {
  Spectrum out(s.shape());
  fftw_plan plan = PlanCache::instance().get(s.shape(), sign);
  // FFTW never writes to the input of an out-of-place complex transform.
  fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(const_cast<Complex*>(s.data())),
                   reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

int wrap(int i, int n) {
  int r = i % n;
  return r < 0 ? r + n : r;
}

}  // namespace

Tensor operator+(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", [](double u, double v) { return u + v; });
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  return zip(a, b, "subtract", [](double u, double v) { return u - v; });
}

Tensor operator*(double s, const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  return zip(a, b, "hadamard", [](double u, double v) { return u * v; });
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return acc;
}

double norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

double norm(const Spectrum& a) {
  double acc = 0.0;
  for (const Complex& v : a.values()) acc += std::norm(v);
  return std::sqrt(acc);
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

bool all_finite(const Tensor& a) {
  return std::all_of(a.values().begin(), a.values().end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor real_part(const Spectrum& s) {
  Tensor out(s.shape());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i].real();
  return out;
}

Spectrum to_complex(const Tensor& t) {
  Spectrum out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = Complex(t[i], 0.0);
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeMismatch("concat_channels: " + to_string(a.shape()) + " vs " +
                        to_string(b.shape()));
  }
  Tensor out({a.height(), a.width(), a.channels() + b.channels()});
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      for (int c = 0; c < a.channels(); ++c) out(y, x, c) = a(y, x, c);
      for (int c = 0; c < b.channels(); ++c) out(y, x, a.channels() + c) = b(y, x, c);
    }
  }
  return out;
}

Tensor slice_channels(const Tensor& t, int first, int count) {
  if (first < 0 || count < 1 || first + count > t.channels()) {
    throw ShapeMismatch("slice_channels: [" + std::to_string(first) + ", +" +
                        std::to_string(count) + ") out of " + to_string(t.shape()));
  }
  Tensor out({t.height(), t.width(), count});
  for (int y = 0; y < t.height(); ++y) {
    for (int x = 0; x < t.width(); ++x) {
      for (int c = 0; c < count; ++c) out(y, x, c) = t(y, x, first + c);
    }
  }
  return out;
}

Spectrum dft2_forward(const Spectrum& s) { return transform(s, FFTW_FORWARD); }
Spectrum dft2_backward(const Spectrum& s) { return transform(s, FFTW_BACKWARD); }

Spectrum fft2(const Tensor& t) { return dft2_forward(to_complex(t)); }
Spectrum fft2(const Spectrum& s) { return dft2_forward(s); }

Spectrum ifft2_complex(const Spectrum& s) {
  Spectrum out = dft2_backward(s);
  const double scale = 1.0 / static_cast<double>(s.shape().plane());
  for (Complex& v : out.values()) v *= scale;
  return out;
}

Tensor ifft2(const Spectrum& s) {
  Spectrum full = ifft2_complex(s);
  double max_real = 0.0, max_imag = 0.0;
  for (const Complex& v : full.values()) {
    max_real = std::max(max_real, std::abs(v.real()));
    max_imag = std::max(max_imag, std::abs(v.imag()));
  }
  if (max_imag > 0.0 && !(max_imag < 1e-9 * max_real)) {
    throw ImaginaryResidueTooLarge("max |imag| = " + std::to_string(max_imag) +
                                   ", max |real| = " + std::to_string(max_real));
  }
  return real_part(full);
}

Tensor circ_convolve(const Tensor& t, const Spectrum& k_spec) {
  require_same_shape(t.shape(), k_spec.shape(), "circ_convolve");
  Spectrum s = fft2(t);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] *= k_spec[i];
  return ifft2(s);
}

Tensor spatial_convolve_oracle(const Tensor& t, const Tensor& kernel, Boundary boundary) {
  if (kernel.height() > t.height() || kernel.width() > t.width() ||
      kernel.channels() != t.channels()) {
    throw ShapeMismatch("spatial_convolve_oracle: kernel " + to_string(kernel.shape()) +
                        " vs image " + to_string(t.shape()));
  }
  const int cy = kernel.height() / 2;
  const int cx = kernel.width() / 2;
  Tensor out(t.shape());
  for (int c = 0; c < t.channels(); ++c) {
    for (int y = 0; y < t.height(); ++y) {
      for (int x = 0; x < t.width(); ++x) {
        double acc = 0.0;
        for (int ky = 0; ky < kernel.height(); ++ky) {
          for (int kx = 0; kx < kernel.width(); ++kx) {
            int sy = y - (ky - cy);
            int sx = x - (kx - cx);
            if (boundary == Boundary::circular) {
              sy = wrap(sy, t.height());
              sx = wrap(sx, t.width());
            } else if (sy < 0 || sy >= t.height() || sx < 0 || sx >= t.width()) {
              continue;
            }
            acc += kernel(ky, kx, c) * t(sy, sx, c);
          }
        }
        out(y, x, c) = acc;
      }
    }
  }
  return out;
}

int pad_offset(int small, int large) { return (large - small) / 2; }

Tensor pad_center(const Tensor& t, int height, int width) {
  if (height < t.height() || width < t.width()) {
    throw ShapeMismatch("pad_center: target " + std::to_string(height) + "x" +
                        std::to_string(width) + " smaller than " + to_string(t.shape()));
  }
  Tensor out({height, width, t.channels()});
  const int oy = pad_offset(t.height(), height);
  const int ox = pad_offset(t.width(), width);
  for (int y = 0; y < t.height(); ++y) {
    for (int x = 0; x < t.width(); ++x) {
      for (int c = 0; c < t.channels(); ++c) out(y + oy, x + ox, c) = t(y, x, c);
    }
  }
  return out;
}

Tensor crop_center(const Tensor& t, int height, int width) {
  if (height > t.height() || width > t.width() || height < 1 || width < 1) {
    throw ShapeMismatch("crop_center: target " + std::to_string(height) + "x" +
                        std::to_string(width) + " larger than " + to_string(t.shape()));
  }
  Tensor out({height, width, t.channels()});
  const int oy = pad_offset(height, t.height());
  const int ox = pad_offset(width, t.width());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < t.channels(); ++c) out(y, x, c) = t(y + oy, x + ox, c);
    }
  }
  return out;
}

}  // namespace lensless
