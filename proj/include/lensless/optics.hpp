#pragma once

#include "lensless/numerics.hpp"

namespace lensless {

// Nonnegative PSF whose every channel sums to one.
class PointSpreadFunction {
 public:
  // Validates the invariants; throws InvalidParams on violation.
  explicit PointSpreadFunction(Tensor image);
  // Clamps nothing: rescales each channel so it sums to one. Throws
  // InvalidParams for negative entries or an all-zero channel.
  static PointSpreadFunction normalized(Tensor image);

  const Tensor& image() const { return image_; }
  const Shape& shape() const { return image_.shape(); }

 private:
  Tensor image_;
};

struct MismatchSpec {
  Tensor delta_psf;  // signed, same shape as the operator's PSF
  double epsilon = 0.0;
};

// Shift-invariant camera operator realized as circular convolution on a padded
// grid followed by a centered crop to the sensor.
class SystemOperator {
 public:
  const Spectrum& otf() const { return otf_; }
  // PSF the operator was built from (possibly unnormalized after perturbation).
  const Tensor& psf() const { return psf_; }
  Shape padded_shape() const { return otf_.shape(); }
  Shape sensor_shape() const { return {sensor_h_, sensor_w_, otf_.channels()}; }
  Shape scene_shape() const { return sensor_shape(); }
  Shape psf_shape() const { return psf_.shape(); }
  int channels() const { return otf_.channels(); }
  // True when scene, sensor and padded grid coincide (no crop anywhere).
  bool is_circulant() const { return padded_shape() == sensor_shape(); }

 private:
  friend SystemOperator make_operator(const Tensor&, int, int);
  friend SystemOperator make_circulant_operator(const Tensor&, int, int);
  friend SystemOperator perturb_operator(const SystemOperator&, const MismatchSpec&);
  static SystemOperator build(const Tensor& psf, Shape padded, int sensor_h, int sensor_w);

  Spectrum otf_;
  Tensor psf_;
  int sensor_h_ = 0;
  int sensor_w_ = 0;
};

// Padded grid size for linear convolution of an (h,w) scene with a (ph,pw)
// PSF: h + ph - 1 rounded up to even, likewise for the width.
Shape padded_grid(int sensor_h, int sensor_w, const Shape& psf_shape);

// Index treated as the PSF origin: (h/2, w/2), the geometric center for odd
// sizes and the pixel below/right of center for even sizes.
int psf_origin(int extent);

// The PSF is not renormalized, so scaled or signed kernels are allowed.
SystemOperator make_operator(const Tensor& psf, int sensor_h, int sensor_w);
SystemOperator make_operator(const PointSpreadFunction& psf, int sensor_h, int sensor_w);
// Pure circular operator on a (grid_h, grid_w) grid; scene and sensor are the
// whole grid. Used where exact inversion is needed.
SystemOperator make_circulant_operator(const Tensor& psf, int grid_h, int grid_w);

Tensor forward(const SystemOperator& op, const Tensor& x);
Tensor adjoint(const SystemOperator& op, const Tensor& y);

// Operator built from psf + epsilon * delta_psf with the same geometry.
SystemOperator perturb_operator(const SystemOperator& op, const MismatchSpec& m);

// max |otf| over all frequencies and channels: exact for the circular operator,
// an upper bound for the cropped one.
double spectral_radius(const SystemOperator& op);

}  // namespace lensless
