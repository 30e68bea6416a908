#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lensless/errors.hpp"

namespace lensless {

using Complex = std::complex<double>;

struct Shape {
  int height = 1;
  int width = 1;
  int channels = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) *
           static_cast<std::size_t>(channels);
  }
  std::size_t plane() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

// Throws ShapeMismatch naming `where` when the shapes differ.
void require_same_shape(const Shape& a, const Shape& b, const char* where);

// Dense H x W x C array stored row-major, channel-last.
template <typename T>
class Array {
 public:
  using value_type = T;

  Array() = default;
  explicit Array(Shape shape, T fill = T{}) : shape_(shape) {
    if (shape.height < 1 || shape.width < 1 || shape.channels < 1) {
      throw ShapeMismatch("array dimensions must be >= 1, got " + to_string(shape));
    }
    data_.assign(shape.size(), fill);
  }
  Array(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (shape.height < 1 || shape.width < 1 || shape.channels < 1 ||
        data_.size() != shape.size()) {
      throw ShapeMismatch("data length does not match " + to_string(shape));
    }
  }

  const Shape& shape() const { return shape_; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int channels() const { return shape_.channels; }
  std::size_t size() const { return data_.size(); }

  T& operator()(int y, int x, int c) { return data_[index(y, x, c)]; }
  const T& operator()(int y, int x, int c) const { return data_[index(y, x, c)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(shape_.width) +
            static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(shape_.channels) +
           static_cast<std::size_t>(c);
  }

  bool operator==(const Array&) const = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

using Tensor = Array<double>;
using Spectrum = Array<Complex>;

// Elementwise helpers. All binary helpers require equal shapes.
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
Tensor hadamard(const Tensor& a, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& a);
double norm(const Tensor& a);
double max_abs(const Tensor& a);
double norm(const Spectrum& a);
bool all_finite(const Tensor& a);
Tensor real_part(const Spectrum& s);
Spectrum to_complex(const Tensor& t);

// Per-channel stacking/slicing along the channel axis.
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& t, int first, int count);

// 2D DFT per channel. Forward uses exp(-i 2 pi ...) and no scaling; the inverse
// carries the 1/(H W) factor. Frequency (0,0) lives at index (0,0).
Spectrum fft2(const Tensor& t);
Spectrum fft2(const Spectrum& s);
// Unscaled transforms in either direction; building blocks for adjoints.
Spectrum dft2_forward(const Spectrum& s);
Spectrum dft2_backward(const Spectrum& s);
// Inverse DFT keeping the imaginary part.
Spectrum ifft2_complex(const Spectrum& s);
// Inverse DFT of a spectrum that is known to be Hermitian symmetric. Throws
// ImaginaryResidueTooLarge when max|imag| >= 1e-9 max|real|.
Tensor ifft2(const Spectrum& s);

// ifft2(fft2(t) * k_spec), per channel.
Tensor circ_convolve(const Tensor& t, const Spectrum& k_spec);

enum class Boundary { circular, zero };

// Direct summation reference for 2D convolution. The kernel origin is its
// geometric center (index (kh/2, kw/2)), so an odd centered delta is the
// identity. Used as the independent oracle in tests.
Tensor spatial_convolve_oracle(const Tensor& t, const Tensor& kernel, Boundary boundary);

// Zero-pad symmetrically; on odd differences the extra row/column goes to the
// bottom/right. crop_center takes the window that pad_center wrote to.
Tensor pad_center(const Tensor& t, int height, int width);
Tensor crop_center(const Tensor& t, int height, int width);
// Offsets of the original content inside the padded array.
int pad_offset(int small, int large);

}  // namespace lensless
