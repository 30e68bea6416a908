#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "lensless/optics.hpp"

namespace lensless {

// Splitmix64-based derivation of independent seeds: derive_seed(master, i) for
// record i, and derive_seed(record_seed, stream) for sub-streams.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

enum class PsfKind { random_spots, gaussian_speckle, multifocal_like };

struct PsfParams {
  int height = 16;
  int width = 16;
  int channels = 3;
  int n_spots = 12;      // random_spots: number of impulses (the first is on-axis)
  double blur = 0.7;     // Gaussian blur sigma in pixels; 0 disables blurring
  int n_foci = 3;        // multifocal_like: number of spot grids
  double speckle_sigma = 1.5;  // gaussian_speckle: correlation length
  // Weight of an on-axis impulse mixed into the normalized pattern. Values
  // above 0.5 keep |otf| >= 2 w - 1 > 0, i.e. an invertible operator.
  double delta_weight = 0.0;
};

PointSpreadFunction synth_psf(PsfKind kind, const PsfParams& params, std::uint64_t seed);

struct NoiseSpec {
  enum class Kind { gaussian, poisson_gaussian };
  Kind kind = Kind::gaussian;
  double sigma = 0.0;  // std of the additive Gaussian part
  double peak = 0.0;   // photons per unit intensity for the Poisson part

  void validate() const;
};

struct Lamp {
  double y = 0.0;
  double x = 0.0;
  double sigma = 1.0;
  double intensity = 0.0;

  bool operator==(const Lamp&) const = default;
};

struct IlluminationSpec {
  enum class Kind { ambient_uniform, lamp_directional, mixture };
  Kind kind = Kind::ambient_uniform;
  double level = 0.0;
  std::vector<Lamp> lamps;
  std::uint64_t seed = 0;  // provenance of randomly drawn levels/positions

  void validate() const;
};

// ambient_uniform: constant `level`; lamp_directional: sum of Gaussians
// intensity * exp(-r^2 / (2 sigma^2)); mixture: both.
Tensor synth_background(const IlluminationSpec& spec, const Shape& scene_shape);

// Sensor noise n_a drawn per spec for a clean measurement.
Tensor draw_sensor_noise(const Tensor& clean, const NoiseSpec& noise, std::mt19937_64& rng);

struct SimRecord {
  Tensor x;      // scene
  Tensor x_b;    // external illumination scene
  Tensor y;      // forward(x) + forward(x_b) + n_a
  Tensor b_hat;  // background estimate
  Tensor n_b;    // forward(x_b) - b_hat
  Tensor n_a;    // sensor noise of the capture
  std::uint64_t seed = 0;
  IlluminationSpec illumination;
  NoiseSpec noise;
  int n_frames = 0;
  int lamp_index = -1;
  std::string split;
};

// Fills x, x_b, y and n_a. Background fields are left empty.
SimRecord capture(const SystemOperator& op, const Tensor& x, const Tensor& x_b,
                  const NoiseSpec& noise, std::uint64_t seed);

struct BackgroundEstimate {
  Tensor b_hat;
  Tensor n_b;
};

// Average of n_frames noisy captures of the background alone.
BackgroundEstimate estimate_background(const SystemOperator& op, const Tensor& x_b,
                                       const NoiseSpec& noise, int n_frames,
                                       std::uint64_t seed);

// Band-limited random texture overlaid with random rectangles and disks, in
// [0, 1].
Tensor procedural_scene(const Shape& shape, std::uint64_t seed);

struct DatasetConfig {
  int n_scenes = 64;
  Shape scene_shape{32, 32, 3};
  PsfKind psf_kind = PsfKind::random_spots;
  PsfParams psf;
  std::string scene_source = "procedural";  // or "directory"
  std::filesystem::path image_dir;
  IlluminationSpec::Kind illumination_kind = IlluminationSpec::Kind::mixture;
  double ambient_min = 0.3;
  double ambient_max = 0.6;
  bool lamp_variation = true;
  std::vector<Lamp> train_lamps;
  std::vector<Lamp> test_lamps;
  NoiseSpec noise{NoiseSpec::Kind::gaussian, 0.01, 0.0};
  int n_frames = 16;
  double split = 0.85;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  DatasetConfig config;
  PointSpreadFunction psf;
  SystemOperator op;
  std::vector<SimRecord> train;
  std::vector<SimRecord> test;
};

// Generates every record in memory. Record i draws from derive_seed(seed, i),
// so the result does not depend on generation order.
Dataset generate_dataset(const DatasetConfig& config);

struct DatasetManifest {
  std::filesystem::path path;  // manifest.json
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

// Writes records (LLIA arrays) plus manifest.json under out_dir.
DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);
DatasetManifest write_dataset(const Dataset& dataset, const std::filesystem::path& out_dir);
Dataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace lensless
