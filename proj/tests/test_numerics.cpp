#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numbers>

#include "lensless/numerics.hpp"
#include "support.hpp"

using namespace lensless;
using testing::random_spectrum;
using testing::random_tensor;

namespace {

// Textbook O(N^2) DFT of one channel.
Spectrum naive_dft(const Tensor& t) {
  Spectrum out(t.shape());
  const int h = t.height(), w = t.width();
  for (int c = 0; c < t.channels(); ++c) {
    for (int ky = 0; ky < h; ++ky) {
      for (int kx = 0; kx < w; ++kx) {
        Complex acc = 0.0;
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            const double ph = -2.0 * std::numbers::pi * (double(ky * y) / h + double(kx * x) / w);
            acc += t(y, x, c) * Complex(std::cos(ph), std::sin(ph));
          }
        }
        out(ky, kx, c) = acc;
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("fft2 matches a direct DFT sum") {
  const Tensor t = random_tensor({5, 6, 2}, 1);
  const Spectrum fast = fft2(t);
  const Spectrum slow = naive_dft(t);
  for (std::size_t i = 0; i < fast.size(); ++i) CHECK(std::abs(fast[i] - slow[i]) < 1e-12);
}

TEST_CASE("Parseval: sum |x|^2 = sum |X|^2 / N") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor t = random_tensor({8, 12, 3}, seed);
    const Spectrum s = fft2(t);
    const double lhs = dot(t, t);
    double rhs = 0.0;
    for (const Complex& v : s.values()) rhs += std::norm(v);
    rhs /= static_cast<double>(t.shape().plane());
    CHECK(testing::rel_err(lhs, rhs) < 1e-12);
  }
}

TEST_CASE("fft2 is linear") {
  const Tensor a = random_tensor({7, 9, 1}, 2), b = random_tensor({7, 9, 1}, 3);
  const Spectrum lhs = fft2(2.5 * a + (-1.5) * b);
  const Spectrum fa = fft2(a), fb = fft2(b);
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    CHECK(std::abs(lhs[i] - (2.5 * fa[i] - 1.5 * fb[i])) < 1e-12);
  }
}

TEST_CASE("ifft2 inverts fft2 on real data") {
  const Tensor t = random_tensor({16, 10, 3}, 4);
  CHECK(testing::max_abs_diff(ifft2(fft2(t)), t) < 1e-14);
}

TEST_CASE("ifft2 rejects a non-Hermitian spectrum") {
  const Spectrum z = random_spectrum({4, 4, 1}, 5);
  CHECK_THROWS_AS(ifft2(z), ImaginaryResidueTooLarge);
  CHECK_NOTHROW(ifft2_complex(z));
}

TEST_CASE("unscaled transforms are adjoint to each other") {
  const Spectrum u = random_spectrum({6, 5, 2}, 6), v = random_spectrum({6, 5, 2}, 7);
  // <F u, v> = <u, F^H v>
  const double lhs = testing::real_inner(dft2_forward(u), v);
  const double rhs = testing::real_inner(u, dft2_backward(v));
  CHECK(testing::rel_err(lhs, rhs) < 1e-12);
}

TEST_CASE("circular convolution matches the spatial oracle") {
  const Tensor t = random_tensor({9, 8, 2}, 8);
  const Tensor k = random_tensor({9, 8, 2}, 9);
  // Shift the kernel so its origin (h/2, w/2) lands on index (0, 0).
  Tensor rolled(k.shape());
  for (int y = 0; y < 9; ++y) {
    for (int x = 0; x < 8; ++x) {
      for (int c = 0; c < 2; ++c) rolled(((y - 4) % 9 + 9) % 9, ((x - 4) % 8 + 8) % 8, c) = k(y, x, c);
    }
  }
  const Tensor fast = circ_convolve(t, fft2(rolled));
  const Tensor slow = spatial_convolve_oracle(t, k, Boundary::circular);
  CHECK(testing::max_abs_diff(fast, slow) < 1e-12);
}

TEST_CASE("pad/crop geometry and adjointness") {
  CHECK(pad_offset(4, 9) == 2);
  CHECK(pad_offset(5, 9) == 2);
  const Tensor small = random_tensor({3, 4, 2}, 10);
  const Tensor big = pad_center(small, 8, 9);
  CHECK(big.shape() == Shape{8, 9, 2});
  CHECK(big(2, 2, 1) == small(0, 0, 1));
  CHECK(big(0, 0, 0) == 0.0);
  CHECK(crop_center(big, 3, 4) == small);
  const Tensor other = random_tensor({8, 9, 2}, 11);
  CHECK(testing::rel_err(dot(big, other), dot(small, crop_center(other, 3, 4))) < 1e-14);
}

TEST_CASE("shape errors") {
  CHECK_THROWS_AS(Tensor({0, 1, 1}), ShapeMismatch);
  CHECK_THROWS_AS(random_tensor({2, 2, 1}, 0) + random_tensor({2, 3, 1}, 0), ShapeMismatch);
  CHECK_THROWS_AS(pad_center(random_tensor({4, 4, 1}, 0), 3, 5), ShapeMismatch);
}

TEST_CASE("channel concat and slice round trip") {
  const Tensor a = random_tensor({3, 3, 2}, 12), b = random_tensor({3, 3, 1}, 13);
  const Tensor ab = concat_channels(a, b);
  CHECK(ab.channels() == 3);
  CHECK(slice_channels(ab, 0, 2) == a);
  CHECK(slice_channels(ab, 2, 1) == b);
}
