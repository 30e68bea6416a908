#pragma once

#include <vector>

#include "lensless/autodiff.hpp"
#include "lensless/optics.hpp"

namespace lensless {

// Hyperparameters of the ADMM camera inverter. mu1/mu2/mu3 penalize the
// splittings v = Hx, u = grad x, w = x; tau weights the anisotropic TV term.
struct SolverConfig {
  int n_iter = 100;
  double mu1 = 0.03;
  double mu2 = 0.03;
  double mu3 = 0.03;
  double tau = 1e-3;
  double tik_eps = 1e-3;
  bool nonneg = true;

  // Throws InvalidParams unless every scalar is positive and n_iter >= 1.
  void validate() const;
};

struct ResidualHistory {
  // sqrt(|Hx - v|^2 + |grad x - u|^2 + |x - w|^2) after each iteration.
  std::vector<double> primal;
};

struct AdmmResult {
  Tensor image;
  ResidualHistory history;
};

// Per-iteration penalties of unrolled ADMM, stored unconstrained; the value
// used by iteration k is softplus(raw[k]).
struct LeAdmmParams {
  Tensor mu1;
  Tensor mu2;
  Tensor mu3;
  Tensor tau;
  bool nonneg = true;

  // Raw values chosen so softplus(raw) reproduces cfg (to rounding) at every
  // iteration.
  static LeAdmmParams tied(const SolverConfig& cfg, int iterations);

  int iterations() const { return mu1.height(); }
  // Effective (post-softplus) penalties of iteration k as a fixed config.
  SolverConfig effective(int k) const;
};

// Frequency-domain filter of single-step inversion, one complex value per
// padded-grid frequency and channel.
struct TrainInvParams {
  Spectrum filter;

  // conj(otf) / (|otf|^2 + tik_eps), the Tikhonov/Wiener filter.
  static TrainInvParams from_operator(const SystemOperator& op, double tik_eps);
};

Spectrum wiener_filter(const SystemOperator& op, double tik_eps);

// crop(ifft(W * fft(pad(y)))) with W the Wiener filter.
Tensor wiener_inverse(const SystemOperator& op, const Tensor& y, double tik_eps);

// Solves min 1/2 |C H x - y|^2 + tau |grad x|_1 + 1{x >= 0} by ADMM with every
// update diagonal in the Fourier domain. Non-convergence is reported through
// the residual history, never thrown.
AdmmResult admm(const SystemOperator& op, const Tensor& y, const SolverConfig& cfg);

// Differentiable variants. Parameters are bound through `binder`, which
// decides whether they become graph leaves.
ad::Var admm_graph(const SystemOperator& op, const ad::Var& y, const SolverConfig& cfg,
                   ResidualHistory* history = nullptr);
ad::Var unrolled_admm_forward(const SystemOperator& op, const ad::Var& y,
                              const LeAdmmParams& params, ad::Binder& binder,
                              ResidualHistory* history = nullptr);
ad::Var train_inv_forward(const SystemOperator& op, const TrainInvParams& params,
                          const ad::Var& y, ad::Binder& binder);

}  // namespace lensless
