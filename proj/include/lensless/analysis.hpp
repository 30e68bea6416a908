#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "lensless/config.hpp"
#include "lensless/optics.hpp"
#include "lensless/pipeline.hpp"
#include "lensless/simulate.hpp"

namespace lensless {

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

// 20 log10(peak) - 10 log10(mse); kPsnrIdentical when the images are equal.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// Mean local SSIM over the valid region of an 11x11 Gaussian window
// (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1, averaged over channels.
// Throws TooSmall when either spatial extent is below 11.
double ssim(const Tensor& a, const Tensor& b);

enum class DecompositionMode { raw, direct_sub };

struct MismatchReport {
  DecompositionMode mode = DecompositionMode::raw;
  Tensor x_hat;
  Tensor term_model_mismatch;  // H^-1 D x
  Tensor term_noise_amp;       // (I - H^-1 D) H^-1 n_a
  Tensor term_external;        // (I - H^-1 D) x_b, or (I - H^-1 D) H^-1 n_b
  Tensor residual;             // x_hat - (x - mismatch + noise_amp + external)
  double spectral_radius = 0.0;
  bool spectral_radius_warning = false;  // rho(H) >= 1

  struct Norms {
    double model_mismatch, noise_amp, external, residual;
  };
  Norms norms() const;
};

// First-order error bookkeeping of x_hat = Hhat^-1 y, with Hhat = H + D.
// raw: y = Hx + n_a + Hx_b; direct_sub: y - b_hat = Hx + n_a + n_b. Both
// operators must be circulant (scene = padded grid) with min |otf| above
// min_abs_otf, otherwise NonInvertibleOperator.
MismatchReport mismatch_report(const SystemOperator& op_true, const SystemOperator& op_hat,
                               const Tensor& x, const Tensor& n_a, const Tensor& x_b,
                               DecompositionMode mode, const Tensor& n_b,
                               double min_abs_otf = 1e-6);

// One random instance of the decomposition study: a circulant operator, a
// unit-scaled PSF perturbation (max |fft(delta)| = min |otf|, so epsilon < 1
// keeps Hhat invertible), and a captured record with background estimate.
struct MismatchCase {
  SystemOperator op_true;
  Tensor delta_psf;
  SimRecord record;
};
MismatchCase make_mismatch_case(const config::MismatchConfig& cfg, std::uint64_t seed);

struct SweepPoint {
  double epsilon = 0.0;
  double residual_norm = 0.0;
  double identity_error = 0.0;  // relative violation of the bookkeeping identity
};
std::vector<SweepPoint> mismatch_sweep(const MismatchCase& c, const std::vector<double>& epsilons,
                                       DecompositionMode mode, double min_abs_otf = 1e-6);
// Least-squares slope of log(residual) against log(epsilon).
double order_fit_slope(const std::vector<SweepPoint>& points);

struct NoiseNormComparison {
  double with_estimate = 0.0;     // |n_a + n_b|
  double without_estimate = 0.0;  // |n_a + H x_b|
  bool ordered = false;           // strict with_estimate < without_estimate
};
// H x_b is recovered as n_b + b_hat.
NoiseNormComparison noise_norm_compare(const SimRecord& record);

struct ImageMetrics {
  double psnr = 0.0;
  double ssim = 0.0;  // NaN when the image is smaller than the SSIM window
  double mse = 0.0;
};
ImageMetrics image_metrics(const Tensor& x_hat, const Tensor& x);

enum class EvalInput { measurement, ground_truth };

struct EvalRow {
  std::string name;
  std::size_t n_records = 0;
  double psnr = 0.0;  // means over records
  double ssim = 0.0;
  double mse = 0.0;
};

// Rows in the order of `specs`; records are visited in order, so mse equals
// mean_loss on the same records.
std::vector<EvalRow> evaluate(const std::vector<std::pair<std::string, PipelineSpec>>& specs,
                              const SystemOperator& op, const std::vector<SimRecord>& records,
                              EvalInput input = EvalInput::measurement);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows);
config::Json to_json(const MismatchReport& r);

}  // namespace lensless
