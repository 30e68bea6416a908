#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lensless/autodiff.hpp"
#include "lensless/solvers.hpp"

namespace lensless {

// Small fully convolutional processor: 3x3 zero-padded convolutions with
// leaky-ReLU between layers. When the input has at least as many channels as
// the output, the first out_channels() input channels are added to the output
// (a residual skip; for equal counts this is the plain identity skip).
struct TinyCnn {
  std::vector<int> widths;  // in, hidden..., out
  double slope = 0.1;
  std::vector<Tensor> weights;  // layer l: (widths[l+1], widths[l] * 9, 1)
  std::vector<Tensor> biases;   // layer l: (widths[l+1], 1, 1)

  // He-uniform hidden layers and a zero final layer, so a network with a skip
  // starts as the identity on its skip channels.
  static TinyCnn make(std::vector<int> widths, std::uint64_t seed, double slope = 0.1);

  int in_channels() const { return widths.front(); }
  int out_channels() const { return widths.back(); }
  int layers() const { return static_cast<int>(widths.size()) - 1; }
  bool has_skip() const { return in_channels() >= out_channels(); }
  std::size_t parameter_count() const;
  // Declared architecture agrees with the stored tensors and all are finite.
  void validate() const;
};

ad::Var tiny_cnn_forward(const TinyCnn& net, const ad::Var& input, ad::Binder& binder);

enum class BackgroundKind { none, direct_sub, learned_sub, concatenate };

struct BackgroundMode {
  BackgroundKind kind = BackgroundKind::none;
  std::optional<TinyCnn> net;  // learned_sub only
};

struct WienerInverter {
  double tik_eps = 1e-3;
};
struct AdmmInverter {
  SolverConfig cfg;
};
struct LeAdmmInverter {
  LeAdmmParams params;
};
struct TrainInvInverter {
  TrainInvParams params;
};
// Passes its input through; scene and sensor shapes coincide.
struct IdentityInverter {};

using Inverter =
    std::variant<WienerInverter, AdmmInverter, LeAdmmInverter, TrainInvInverter, IdentityInverter>;

struct PipelineSpec {
  BackgroundMode background;
  std::optional<TinyCnn> pre;
  Inverter inverter = WienerInverter{};
  std::optional<TinyCnn> post;
  bool clamp_output = true;

  // Channel-chain validation against the operator. Throws InvalidParams or
  // ShapeMismatch with a description of the first broken link.
  void validate(const SystemOperator& op) const;
};

struct Measurement {
  Tensor y;
  std::optional<Tensor> b_hat;
};

// none -> y; direct_sub -> y - b_hat (signed); learned_sub -> y - net(b_hat);
// concatenate -> channel stack [y, b_hat].
ad::Var apply_background_mode(const ad::Var& y, const std::optional<ad::Var>& b_hat,
                              const BackgroundMode& mode, ad::Binder& binder);
Tensor apply_background_mode(const Tensor& y, const std::optional<Tensor>& b_hat,
                             const BackgroundMode& mode);

// background -> pre -> inverter -> post -> optional clamp to [0, 1].
ad::Var run_pipeline_graph(const PipelineSpec& spec, const SystemOperator& op,
                           const ad::Var& y, const std::optional<ad::Var>& b_hat,
                           ad::Binder& binder);
Tensor run_pipeline(const PipelineSpec& spec, const SystemOperator& op, const Measurement& m);

// A learnable block of a spec; complex blocks are viewed as interleaved
// (re, im) doubles.
struct ParameterRef {
  std::string name;
  Tensor* real = nullptr;
  Spectrum* complex = nullptr;

  std::span<double> values() const;
  std::vector<double> gradient(const ad::Binder& binder) const;
};

// Learnable blocks in a fixed order: learned_sub net, pre, inverter, post.
std::vector<ParameterRef> parameters(PipelineSpec& spec);
std::size_t parameter_count(const PipelineSpec& spec);

const char* to_string(BackgroundKind kind);
BackgroundKind background_kind_from_string(const std::string& s);
std::string inverter_name(const Inverter& inv);

}  // namespace lensless
