#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "lensless/simulate.hpp"
#include "lensless/solvers.hpp"
#include "support.hpp"

using namespace lensless;
using testing::random_tensor;

namespace {

Tensor delta_psf(int size, int channels) {
  Tensor d({size, size, channels});
  for (int c = 0; c < channels; ++c) d(size / 2, size / 2, c) = 1.0;
  return d;
}

SystemOperator random_operator(int n, int psf, int channels, std::uint64_t seed) {
  const PsfParams p{psf, psf, channels, 4, 0.7, 3, 1.5, 0.0};
  return make_operator(synth_psf(PsfKind::random_spots, p, seed), n, n);
}

double output_energy(const SystemOperator& op, const Tensor& y, const LeAdmmParams& params) {
  ad::Binder constants;
  const Tensor x = unrolled_admm_forward(op, ad::Var(y), params, constants).value();
  return dot(x, x);
}

}  // namespace

TEST_CASE("solver config validation") {
  SolverConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.n_iter = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidParams);
  cfg = {};
  cfg.tau = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidParams);
  cfg = {};
  cfg.mu2 = -1.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidParams);
  cfg = {};
  cfg.tik_eps = std::nan("");
  CHECK_THROWS_AS(cfg.validate(), InvalidParams);
  CHECK_THROWS_AS(LeAdmmParams::tied({}, 0), InvalidParams);
}

TEST_CASE("wiener inverse on the identity system") {
  const SystemOperator op = make_operator(delta_psf(5, 3), 10, 12);
  const Tensor x = random_tensor({10, 12, 3}, 1);
  CHECK(testing::max_abs_diff(wiener_inverse(op, forward(op, x), 1e-12), x) < 1e-8);
  CHECK(max_abs(wiener_inverse(op, Tensor({10, 12, 3}), 1e-3)) == 0.0);
  CHECK_THROWS_AS(wiener_inverse(op, x, 0.0), InvalidParams);
}

TEST_CASE("wiener inverse is exact for an invertible circulant operator") {
  // A dominant on-axis tap keeps every |otf| above 1 - 2 * 0.3 = 0.4.
  Tensor psf({6, 6, 2});
  const Tensor noise = random_tensor({6, 6, 2}, 2, 0.0, 1.0);
  for (int c = 0; c < 2; ++c) {
    double rest = 0.0;
    for (int y = 0; y < 6; ++y) {
      for (int x = 0; x < 6; ++x) rest += noise(y, x, c);
    }
    for (int y = 0; y < 6; ++y) {
      for (int x = 0; x < 6; ++x) psf(y, x, c) = 0.3 * noise(y, x, c) / rest;
    }
    psf(3, 3, c) += 0.7;
  }
  const SystemOperator op = make_circulant_operator(psf, 16, 16);
  double min_abs = 1e9;
  for (const Complex& h : op.otf().values()) min_abs = std::min(min_abs, std::abs(h));
  REQUIRE(min_abs > 0.3);
  const Tensor x = random_tensor({16, 16, 2}, 3);
  CHECK(norm(wiener_inverse(op, forward(op, x), 1e-12) - x) / norm(x) < 1e-6);
}

TEST_CASE("wiener error falls with the noise level") {
  const SystemOperator op = random_operator(24, 7, 1, 4);
  const Tensor x = procedural_scene({24, 24, 1}, 5);
  const Tensor n = random_tensor({24, 24, 1}, 6);
  double previous = 1e300;
  for (double sigma : {0.05, 0.01, 0.001}) {
    const double err = norm(wiener_inverse(op, forward(op, x) + sigma * n, 1e-3) - x);
    CHECK(err < previous);
    previous = err;
  }
}

TEST_CASE("admm recovers the scene through the identity system") {
  const SystemOperator op = make_operator(delta_psf(3, 1), 12, 12);
  const Tensor x = random_tensor({12, 12, 1}, 7, 0.0, 1.0);
  SolverConfig cfg;
  cfg.tau = 1e-8;
  const AdmmResult r = admm(op, forward(op, x), cfg);
  CHECK(testing::max_abs_diff(r.image, x) < 1e-3);
  CHECK(r.history.primal.size() == 100);
}

TEST_CASE("admm residuals trend down and the output is nonnegative") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const SystemOperator op = random_operator(32, 16, 3, 10 + seed);
    const Tensor x = procedural_scene({32, 32, 3}, 20 + seed);
    const Tensor y = forward(op, x) + 0.01 * random_tensor({32, 32, 3}, 30 + seed);
    const AdmmResult r = admm(op, y, SolverConfig{});
    const auto& h = r.history.primal;
    const double first = std::accumulate(h.begin(), h.begin() + 10, 0.0);
    const double last = std::accumulate(h.end() - 10, h.end(), 0.0);
    CHECK(last < first);
    for (double v : r.image.values()) CHECK(v >= -1e-9);
  }
}

TEST_CASE("tied unrolled ADMM equals fixed ADMM bit for bit") {
  const SystemOperator op = random_operator(16, 6, 3, 40);
  const Tensor y = forward(op, procedural_scene({16, 16, 3}, 41)) + 0.01 * random_tensor({16, 16, 3}, 42);
  for (int k : {1, 3, 5}) {
    const SolverConfig cfg{k, 0.02, 0.005, 0.03, 2e-3, 1e-3, true};
    const LeAdmmParams tied = LeAdmmParams::tied(cfg, k);
    const SolverConfig eff = tied.effective(0);
    CHECK(testing::rel_err(eff.mu1, cfg.mu1) < 1e-12);
    CHECK(testing::rel_err(eff.tau, cfg.tau) < 1e-12);
    ad::Binder constants;
    const Tensor unrolled = unrolled_admm_forward(op, ad::Var(y), tied, constants).value();
    CHECK(unrolled == admm(op, y, eff).image);

    // Recording a tape must not change the values either.
    ad::Tape tape;
    ad::Binder leaves(&tape);
    CHECK(unrolled_admm_forward(op, ad::Var(y), tied, leaves).value() == unrolled);
  }
  CHECK_THROWS_AS(LeAdmmParams::tied({}, 3).effective(3), OutOfRange);
}

TEST_CASE("unrolled ADMM gradients match finite differences") {
  const SystemOperator op = random_operator(8, 3, 1, 50);
  const Tensor y = forward(op, random_tensor({8, 8, 1}, 51, 0.0, 1.0));
  LeAdmmParams params = LeAdmmParams::tied(SolverConfig{}, 3);
  // Distinct per-iteration values so each entry has its own path.
  for (std::size_t k = 0; k < 3; ++k) {
    params.mu1[k] += 0.3 * k;
    params.mu2[k] -= 0.2 * k;
    params.mu3[k] += 0.1 * k;
    params.tau[k] += 0.25 * k;
  }

  ad::Tape tape;
  ad::Binder binder(&tape);
  const ad::Var yv = tape.leaf(y);
  const ad::Var out = ad::sum_squares(unrolled_admm_forward(op, yv, params, binder));
  tape.finalize();
  tape.backward(out);

  const auto f = [&] { return output_energy(op, y, params); };
  const std::vector<std::size_t> all{0, 1, 2};
  CHECK(testing::fd_check(params.tau, binder.grad(params.tau), f, {0}) < 1e-4);
  CHECK(testing::fd_check(params.tau, binder.grad(params.tau), f, all) < 1e-4);
  CHECK(testing::fd_check(params.mu1, binder.grad(params.mu1), f, all) < 1e-4);
  CHECK(testing::fd_check(params.mu2, binder.grad(params.mu2), f, all) < 1e-4);
  CHECK(testing::fd_check(params.mu3, binder.grad(params.mu3), f, all) < 1e-4);

  Tensor y_mut = y;
  const auto fy = [&] { return output_energy(op, y_mut, params); };
  CHECK(testing::fd_check(y_mut, tape.grad(yv), fy, testing::sample_coords(64, 16, 52)) < 1e-4);
}

TEST_CASE("unrolled ADMM of a zero measurement") {
  const SystemOperator op = random_operator(8, 3, 1, 60);
  const LeAdmmParams params = LeAdmmParams::tied(SolverConfig{}, 3);
  ad::Tape tape;
  ad::Binder binder(&tape);
  const ad::Var yv = tape.leaf(Tensor({8, 8, 1}));
  const ad::Var out = unrolled_admm_forward(op, yv, params, binder);
  CHECK(max_abs(out.value()) == 0.0);
  const ad::Var e = ad::sum_squares(out);
  tape.finalize();
  tape.backward(e);
  CHECK(max_abs(tape.grad(yv)) == 0.0);
}

TEST_CASE("TrainInv at initialization is the Wiener inverse") {
  const SystemOperator op = random_operator(12, 5, 3, 70);
  const Tensor y = random_tensor({12, 12, 3}, 71);
  const TrainInvParams params = TrainInvParams::from_operator(op, 1e-3);
  ad::Binder constants;
  CHECK(train_inv_forward(op, params, ad::Var(y), constants).value() == wiener_inverse(op, y, 1e-3));

  // Against the filter formula evaluated independently.
  Spectrum expected(op.padded_shape());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const Complex h = op.otf()[i];
    expected[i] = std::conj(h) / (std::abs(h) * std::abs(h) + 1e-3);
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(std::abs(params.filter[i] - expected[i]) < 1e-12);
  }

  const TrainInvParams zero{Spectrum(op.padded_shape())};
  CHECK(max_abs(train_inv_forward(op, zero, ad::Var(y), constants).value()) == 0.0);
  const TrainInvParams wrong{Spectrum({4, 4, 3})};
  CHECK_THROWS_AS(train_inv_forward(op, wrong, ad::Var(y), constants), ShapeMismatch);
}

TEST_CASE("TrainInv gradients match finite differences") {
  const SystemOperator op = random_operator(8, 3, 2, 80);
  const Tensor y = random_tensor({8, 8, 2}, 81);
  const Tensor target = random_tensor({8, 8, 2}, 82);
  TrainInvParams params = TrainInvParams::from_operator(op, 1e-2);

  const auto f = [&](const Tensor& yy) {
    ad::Binder constants;
    return dot(train_inv_forward(op, params, ad::Var(yy), constants).value(), target);
  };
  ad::Tape tape;
  ad::Binder binder(&tape);
  const ad::Var yv = tape.leaf(y);
  const ad::Var x = train_inv_forward(op, params, yv, binder);
  tape.finalize();
  tape.backward(x, target);
  const Spectrum g = binder.grad(params.filter);

  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i : testing::sample_coords(params.filter.size(), 12, 83)) {
    const Complex saved = params.filter[i];
    for (const Complex step : {Complex(h, 0.0), Complex(0.0, h)}) {
      params.filter[i] = saved + step;
      const double up = f(y);
      params.filter[i] = saved - step;
      const double down = f(y);
      params.filter[i] = saved;
      const double analytic = step.real() != 0.0 ? g[i].real() : g[i].imag();
      worst = std::max(worst, testing::rel_err((up - down) / (2 * h), analytic));
    }
  }
  CHECK(worst < 1e-4);

  Tensor y_mut = y;
  const auto fy = [&] { return f(y_mut); };
  CHECK(testing::fd_check(y_mut, tape.grad(yv), fy, testing::sample_coords(128, 16, 84)) < 1e-4);
}
