#include "lensless/optics.hpp"

#include <algorithm>
#include <cmath>

namespace lensless {

namespace {

void check_psf(const Tensor& image) {
  for (double v : image.values()) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw InvalidParams("PSF entries must be finite and nonnegative");
    }
  }
}

std::vector<double> channel_sums(const Tensor& image) {
  std::vector<double> sums(static_cast<std::size_t>(image.channels()), 0.0);
  for (std::size_t i = 0; i < image.size(); ++i) {
    sums[i % sums.size()] += image[i];
  }
  return sums;
}

}  // namespace

PointSpreadFunction::PointSpreadFunction(Tensor image) : image_(std::move(image)) {
  check_psf(image_);
  for (double s : channel_sums(image_)) {
    if (std::abs(s - 1.0) >= 1e-9) {
      throw InvalidParams("PSF channel sum " + std::to_string(s) + " is not 1");
    }
  }
}

PointSpreadFunction PointSpreadFunction::normalized(Tensor image) {
  check_psf(image);
  const auto sums = channel_sums(image);
  for (double s : sums) {
    if (!(s > 0.0)) throw InvalidParams("PSF channel is identically zero");
  }
  for (std::size_t i = 0; i < image.size(); ++i) image[i] /= sums[i % sums.size()];
  return PointSpreadFunction(std::move(image));
}

Shape padded_grid(int sensor_h, int sensor_w, const Shape& psf_shape) {
  auto even_up = [](int n) { return n % 2 == 0 ? n : n + 1; };
  return {even_up(sensor_h + psf_shape.height - 1), even_up(sensor_w + psf_shape.width - 1),
          psf_shape.channels};
}

int psf_origin(int extent) { return extent / 2; }

SystemOperator SystemOperator::build(const Tensor& psf, Shape padded, int sensor_h,
                                     int sensor_w) {
  if (psf.height() > padded.height || psf.width() > padded.width) {
    throw ShapeMismatch("PSF " + to_string(psf.shape()) + " exceeds padded grid " +
                        to_string(padded));
  }
  if (sensor_h < 1 || sensor_w < 1 || sensor_h > padded.height || sensor_w > padded.width) {
    throw ShapeMismatch("sensor " + std::to_string(sensor_h) + "x" + std::to_string(sensor_w) +
                        " does not fit padded grid " + to_string(padded));
  }
  Tensor centered = pad_center(psf, padded.height, padded.width);
  const int shift_y = pad_offset(psf.height(), padded.height) + psf_origin(psf.height());
  const int shift_x = pad_offset(psf.width(), padded.width) + psf_origin(psf.width());
  Tensor rolled(centered.shape());
  for (int y = 0; y < padded.height; ++y) {
    const int ry = (y - shift_y + padded.height) % padded.height;
    for (int x = 0; x < padded.width; ++x) {
      const int rx = (x - shift_x + padded.width) % padded.width;
      for (int c = 0; c < padded.channels; ++c) rolled(ry, rx, c) = centered(y, x, c);
    }
  }
  SystemOperator op;
  op.otf_ = fft2(rolled);
  op.psf_ = psf;
  op.sensor_h_ = sensor_h;
  op.sensor_w_ = sensor_w;
  return op;
}

SystemOperator make_operator(const Tensor& psf, int sensor_h, int sensor_w) {
  return SystemOperator::build(psf, padded_grid(sensor_h, sensor_w, psf.shape()), sensor_h,
                               sensor_w);
}

SystemOperator make_operator(const PointSpreadFunction& psf, int sensor_h, int sensor_w) {
  return make_operator(psf.image(), sensor_h, sensor_w);
}

SystemOperator make_circulant_operator(const Tensor& psf, int grid_h, int grid_w) {
  return SystemOperator::build(psf, {grid_h, grid_w, psf.channels()}, grid_h, grid_w);
}

Tensor forward(const SystemOperator& op, const Tensor& x) {
  require_same_shape(x.shape(), op.scene_shape(), "forward");
  const Shape p = op.padded_shape();
  Tensor full = circ_convolve(pad_center(x, p.height, p.width), op.otf());
  return crop_center(full, op.sensor_shape().height, op.sensor_shape().width);
}

Tensor adjoint(const SystemOperator& op, const Tensor& y) {
  require_same_shape(y.shape(), op.sensor_shape(), "adjoint");
  const Shape p = op.padded_shape();
  Spectrum s = fft2(pad_center(y, p.height, p.width));
  for (std::size_t i = 0; i < s.size(); ++i) s[i] *= std::conj(op.otf()[i]);
  return crop_center(ifft2(s), op.scene_shape().height, op.scene_shape().width);
}

SystemOperator perturb_operator(const SystemOperator& op, const MismatchSpec& m) {
  require_same_shape(m.delta_psf.shape(), op.psf_shape(), "perturb_operator");
  Tensor psf = op.psf() + m.epsilon * m.delta_psf;
  return SystemOperator::build(psf, op.padded_shape(), op.sensor_shape().height,
                               op.sensor_shape().width);
}

double spectral_radius(const SystemOperator& op) {
  double r = 0.0;
  for (const Complex& v : op.otf().values()) r = std::max(r, std::abs(v));
  return r;
}

}  // namespace lensless
