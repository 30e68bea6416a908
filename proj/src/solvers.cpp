#include "lensless/solvers.hpp"

#include <cmath>
#include <numbers>

namespace lensless {

namespace {

struct Penalties {
  ad::Var mu1;
  ad::Var mu2;
  ad::Var mu3;
  ad::Var tau;

  bool recorded() const {
    return mu1.recorded() || mu2.recorded() || mu3.recorded() || tau.recorded();
  }
  bool same_values(const Penalties& o) const {
    return mu1.value()[0] == o.mu1.value()[0] && mu2.value()[0] == o.mu2.value()[0] &&
           mu3.value()[0] == o.mu3.value()[0] && tau.value()[0] == o.tau.value()[0];
  }
};

Penalties constant_penalties(const SolverConfig& cfg) {
  return {ad::scalar(cfg.mu1), ad::scalar(cfg.mu2), ad::scalar(cfg.mu3), ad::scalar(cfg.tau)};
}

// Eigenvalues of D_y^T D_y + D_x^T D_x for circular forward differences.
Tensor gradient_gram_spectrum(const Shape& s) {
  Tensor out(s);
  for (int y = 0; y < s.height; ++y) {
    const double ey = 2.0 - 2.0 * std::cos(2.0 * std::numbers::pi * y / s.height);
    for (int x = 0; x < s.width; ++x) {
      const double ex = 2.0 - 2.0 * std::cos(2.0 * std::numbers::pi * x / s.width);
      for (int c = 0; c < s.channels; ++c) out(y, x, c) = ey + ex;
    }
  }
  return out;
}

double squared_distance(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

ad::Var run_admm(const SystemOperator& op, const ad::Var& y, const std::vector<Penalties>& steps,
                 bool nonneg, ResidualHistory* history) {
  using namespace ad;
  require_same_shape(y.shape(), op.sensor_shape(), "admm measurement");
  const Shape p = op.padded_shape();

  const CVar otf(op.otf());
  Spectrum conj_otf_values(p);
  Tensor abs_h2_values(p);
  for (std::size_t i = 0; i < op.otf().size(); ++i) {
    conj_otf_values[i] = std::conj(op.otf()[i]);
    abs_h2_values[i] = std::norm(op.otf()[i]);
  }
  const CVar conj_otf(std::move(conj_otf_values));
  const Var abs_h2(std::move(abs_h2_values));
  const Var gram(gradient_gram_spectrum(p));
  // C^T C: ones on the sensor window of the padded grid.
  const Var mask(pad_center(Tensor(op.sensor_shape(), 1.0), p.height, p.width));
  const Var y_pad = pad(y, p.height, p.width);

  const Var zeros{Tensor(p)};
  Var x = zeros, hx = zeros, dy = zeros, dx = zeros;
  Var xi = zeros, eta_y = zeros, eta_x = zeros, rho = zeros;
  Var v_div, x_div;
  const Penalties* previous = nullptr;

  for (const Penalties& k : steps) {
    if (previous == nullptr || k.recorded() || previous->recorded() || !k.same_values(*previous)) {
      v_div = reciprocal(add_scalar(mask, k.mu1));
      x_div = reciprocal(add_scalar(add(scale(k.mu1, abs_h2), scale(k.mu2, gram)), k.mu3));
    }
    previous = &k;

    const Var threshold = div_scalar(k.tau, k.mu2);
    const Var uy = soft_threshold(add(dy, div_scalar(eta_y, k.mu2)), threshold);
    const Var ux = soft_threshold(add(dx, div_scalar(eta_x, k.mu2)), threshold);
    const Var v = mul(v_div, add(add(xi, scale(k.mu1, hx)), y_pad));
    const Var w = relu(add(div_scalar(rho, k.mu3), x));

    Var rhs = sub(scale(k.mu3, w), rho);
    rhs = add(rhs, circ_diff_adjoint(sub(scale(k.mu2, uy), eta_y), 0));
    rhs = add(rhs, circ_diff_adjoint(sub(scale(k.mu2, ux), eta_x), 1));
    rhs = add(rhs, real(ifft(cmul(conj_otf, fft(sub(scale(k.mu1, v), xi))))));
    x = real(ifft(cmul_real(fft(rhs), x_div)));

    hx = real(ifft(cmul(otf, fft(x))));
    dy = circ_diff(x, 0);
    dx = circ_diff(x, 1);
    xi = add(xi, scale(k.mu1, sub(hx, v)));
    eta_y = add(eta_y, scale(k.mu2, sub(dy, uy)));
    eta_x = add(eta_x, scale(k.mu2, sub(dx, ux)));
    rho = add(rho, scale(k.mu3, sub(x, w)));

    if (history) {
      history->primal.push_back(std::sqrt(
          squared_distance(hx.value(), v.value()) + squared_distance(dy.value(), uy.value()) +
          squared_distance(dx.value(), ux.value()) + squared_distance(x.value(), w.value())));
    }
  }

  const Var out = crop(x, op.scene_shape().height, op.scene_shape().width);
  return nonneg ? relu(out) : out;
}

}  // namespace

void SolverConfig::validate() const {
  if (n_iter < 1) throw InvalidParams("n_iter must be >= 1");
  for (double v : {mu1, mu2, mu3, tau, tik_eps}) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw InvalidParams("solver penalties, tau and tik_eps must be positive");
    }
  }
}

LeAdmmParams LeAdmmParams::tied(const SolverConfig& cfg, int iterations) {
  cfg.validate();
  if (iterations < 1) throw InvalidParams("unrolled ADMM needs at least one iteration");
  const Shape s{iterations, 1, 1};
  LeAdmmParams p{Tensor(s, ad::softplus_inverse(cfg.mu1)),
                 Tensor(s, ad::softplus_inverse(cfg.mu2)),
                 Tensor(s, ad::softplus_inverse(cfg.mu3)),
                 Tensor(s, ad::softplus_inverse(cfg.tau)), cfg.nonneg};
  return p;
}

SolverConfig LeAdmmParams::effective(int k) const {
  if (k < 0 || k >= iterations()) throw OutOfRange("LeADMM iteration " + std::to_string(k));
  const auto i = static_cast<std::size_t>(k);
  SolverConfig cfg;
  cfg.n_iter = iterations();
  cfg.mu1 = ad::softplus_value(mu1[i]);
  cfg.mu2 = ad::softplus_value(mu2[i]);
  cfg.mu3 = ad::softplus_value(mu3[i]);
  cfg.tau = ad::softplus_value(tau[i]);
  cfg.nonneg = nonneg;
  return cfg;
}

Spectrum wiener_filter(const SystemOperator& op, double tik_eps) {
  if (!(tik_eps > 0.0)) throw InvalidParams("tik_eps must be positive");
  Spectrum w(op.padded_shape());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const Complex h = op.otf()[i];
    w[i] = std::conj(h) / (std::norm(h) + tik_eps);
  }
  return w;
}

TrainInvParams TrainInvParams::from_operator(const SystemOperator& op, double tik_eps) {
  return {wiener_filter(op, tik_eps)};
}

Tensor wiener_inverse(const SystemOperator& op, const Tensor& y, double tik_eps) {
  ad::Binder constants;
  return train_inv_forward(op, TrainInvParams::from_operator(op, tik_eps), ad::Var(y), constants)
      .value();
}

AdmmResult admm(const SystemOperator& op, const Tensor& y, const SolverConfig& cfg) {
  AdmmResult result;
  result.image = admm_graph(op, ad::Var(y), cfg, &result.history).value();
  return result;
}

ad::Var admm_graph(const SystemOperator& op, const ad::Var& y, const SolverConfig& cfg,
                   ResidualHistory* history) {
  cfg.validate();
  std::vector<Penalties> steps(static_cast<std::size_t>(cfg.n_iter), constant_penalties(cfg));
  return run_admm(op, y, steps, cfg.nonneg, history);
}

ad::Var unrolled_admm_forward(const SystemOperator& op, const ad::Var& y,
                              const LeAdmmParams& params, ad::Binder& binder,
                              ResidualHistory* history) {
  const int k_total = params.iterations();
  if (k_total < 1) throw InvalidParams("unrolled ADMM needs at least one iteration");
  for (const Tensor* t : {&params.mu2, &params.mu3, &params.tau}) {
    if (!(t->shape() == params.mu1.shape())) {
      throw ShapeMismatch("LeADMM parameter vectors differ in length");
    }
  }
  const ad::Var mu1 = binder.bind(params.mu1);
  const ad::Var mu2 = binder.bind(params.mu2);
  const ad::Var mu3 = binder.bind(params.mu3);
  const ad::Var tau = binder.bind(params.tau);
  std::vector<Penalties> steps;
  steps.reserve(static_cast<std::size_t>(k_total));
  for (std::size_t k = 0; k < static_cast<std::size_t>(k_total); ++k) {
    steps.push_back({ad::softplus(ad::pick(mu1, k)), ad::softplus(ad::pick(mu2, k)),
                     ad::softplus(ad::pick(mu3, k)), ad::softplus(ad::pick(tau, k))});
  }
  return run_admm(op, y, steps, params.nonneg, history);
}

ad::Var train_inv_forward(const SystemOperator& op, const TrainInvParams& params,
                          const ad::Var& y, ad::Binder& binder) {
  require_same_shape(params.filter.shape(), op.padded_shape(), "TrainInv filter");
  require_same_shape(y.shape(), op.sensor_shape(), "TrainInv measurement");
  const Shape p = op.padded_shape();
  const ad::CVar w = binder.bind(params.filter);
  const ad::Var full = ad::real(ad::ifft(ad::cmul(w, ad::fft(ad::pad(y, p.height, p.width)))));
  return ad::crop(full, op.scene_shape().height, op.scene_shape().width);
}

}  // namespace lensless
