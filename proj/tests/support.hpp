#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "lensless/autodiff.hpp"
#include "lensless/numerics.hpp"

namespace testing {

using lensless::Complex;
using lensless::Shape;
using lensless::Spectrum;
using lensless::Tensor;

inline Tensor random_tensor(const Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(s);
  for (double& v : t.values()) v = d(rng);
  return t;
}

inline Spectrum random_spectrum(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Spectrum z(s);
  for (Complex& v : z.values()) v = {d(rng), d(rng)};
  return z;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double real_inner(const Spectrum& a, const Spectrum& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (std::conj(a[i]) * b[i]).real();
  return acc;
}

// Central differences (h = 1e-5) of a scalar function against an analytic
// gradient, over the given coordinates. Returns the worst relative error.
inline double fd_check(Tensor& param, const Tensor& analytic, const std::function<double()>& f,
                       const std::vector<std::size_t>& coords, double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t i : coords) {
    const double saved = param[i];
    param[i] = saved + h;
    const double up = f();
    param[i] = saved - h;
    const double down = f();
    param[i] = saved;
    worst = std::max(worst, rel_err((up - down) / (2 * h), analytic[i]));
  }
  return worst;
}

inline std::vector<std::size_t> sample_coords(std::size_t n, std::size_t count, std::uint64_t seed) {
  if (n <= count) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out;
  std::uniform_int_distribution<std::size_t> d(0, n - 1);
  for (std::size_t k = 0; k < count; ++k) out.push_back(d(rng));
  return out;
}

// Direct-sum linear convolution with zero boundary: the PSF origin sits at
// (ph/2, pw/2) and the output has the scene's extent.
inline Tensor direct_convolution(const Tensor& x, const Tensor& psf) {
  Tensor out(x.shape());
  const int oy = psf.height() / 2, ox = psf.width() / 2;
  for (int c = 0; c < x.channels(); ++c) {
    for (int i = 0; i < x.height(); ++i) {
      for (int j = 0; j < x.width(); ++j) {
        double acc = 0.0;
        for (int a = 0; a < x.height(); ++a) {
          const int ky = i - a + oy;
          if (ky < 0 || ky >= psf.height()) continue;
          for (int b = 0; b < x.width(); ++b) {
            const int kx = j - b + ox;
            if (kx < 0 || kx >= psf.width()) continue;
            acc += x(a, b, c) * psf(ky, kx, c);
          }
        }
        out(i, j, c) = acc;
      }
    }
  }
  return out;
}

}  // namespace testing
