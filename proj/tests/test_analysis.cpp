#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lensless/analysis.hpp"
#include "lensless/training.hpp"
#include "support.hpp"

using namespace lensless;
using testing::random_tensor;

namespace {

SystemOperator invertible_operator(std::uint64_t seed, int grid = 16) {
  const PsfParams p{6, 6, 3, 5, 0.7, 3, 1.5, 0.6};
  return make_circulant_operator(synth_psf(PsfKind::random_spots, p, seed).image(), grid, grid);
}

double reference_psnr(const Tensor& a, const Tensor& b, double peak) {
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) se += std::pow(a[i] - b[i], 2);
  return 10.0 * std::log10(peak * peak / (se / a.size()));
}

}  // namespace

TEST_CASE("psnr") {
  const Tensor x = random_tensor({8, 8, 3}, 1, 0, 1);
  CHECK(psnr(x, x) == kPsnrIdentical);
  CHECK(std::isinf(psnr(x, x)));
  for (const Shape& s : {Shape{1, 1, 1}, Shape{8, 8, 3}, Shape{32, 32, 3}, Shape{256, 256, 3}}) {
    CHECK(psnr(Tensor(s), Tensor(s, 0.1)) == 20.0);
    CHECK(psnr(Tensor(s, 0.5), Tensor(s, 0.4)) == doctest::Approx(20.0).epsilon(1e-12));
  }
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Tensor a = random_tensor({9, 7, 3}, 10 + s, 0, 1), b = random_tensor({9, 7, 3}, 30 + s, 0, 1);
    CHECK(std::abs(psnr(a, b) - reference_psnr(a, b, 1.0)) < 1e-9);
    CHECK(std::abs(psnr(a, b, 255.0) - reference_psnr(a, b, 255.0)) < 1e-9);
    CHECK(psnr(a, b) == psnr(b, a));
  }
  CHECK_THROWS_AS(psnr(x, Tensor({8, 8, 1})), ShapeMismatch);
}

TEST_CASE("ssim") {
  const Tensor x = random_tensor({16, 14, 3}, 2, 0, 1);
  CHECK(ssim(x, x) == 1.0);

  Tensor bin({16, 16, 1});
  std::mt19937_64 rng(3);
  for (double& v : bin.values()) v = static_cast<double>(rng() & 1);
  Tensor inv({16, 16, 1});
  for (std::size_t i = 0; i < bin.size(); ++i) inv[i] = 1.0 - bin[i];
  CHECK(ssim(bin, inv) < 0.0);

  const double mu1 = 0.2, mu2 = 0.7, c1 = 1e-4;
  const double closed = (2 * mu1 * mu2 + c1) / (mu1 * mu1 + mu2 * mu2 + c1);
  CHECK(std::abs(ssim(Tensor({12, 12, 2}, mu1), Tensor({12, 12, 2}, mu2)) - closed) < 1e-9);

  const Tensor y = random_tensor({16, 14, 3}, 4, 0, 1);
  CHECK(std::abs(ssim(x, y) - ssim(y, x)) < 1e-15);
  CHECK(ssim(x, y) < 1.0);
  CHECK_THROWS_AS(ssim(Tensor({10, 20, 1}), Tensor({10, 20, 1})), TooSmall);
  CHECK_THROWS_AS(ssim(x, Tensor({16, 14, 1})), ShapeMismatch);
}

TEST_CASE("mismatch report without mismatch, noise or background") {
  const SystemOperator op = invertible_operator(5);
  const Tensor x = random_tensor({16, 16, 3}, 6, 0, 1);
  const Tensor zero({16, 16, 3});
  const MismatchReport r = mismatch_report(op, op, x, zero, zero, DecompositionMode::raw, zero);
  CHECK(testing::max_abs_diff(r.x_hat, x) < 1e-10);
  CHECK(max_abs(r.term_model_mismatch) == 0.0);
  CHECK(max_abs(r.term_noise_amp) == 0.0);
  CHECK(max_abs(r.term_external) == 0.0);
  CHECK(norm(r.residual) < 1e-10);
}

TEST_CASE("without mismatch the external term is x_b itself") {
  const SystemOperator op = invertible_operator(7);
  const Tensor x = random_tensor({16, 16, 3}, 8, 0, 1);
  const Tensor n_a = 0.01 * random_tensor({16, 16, 3}, 9);
  const Tensor x_b = random_tensor({16, 16, 3}, 10, 0, 1);
  const MismatchReport r = mismatch_report(op, op, x, n_a, x_b, DecompositionMode::raw, Tensor());
  CHECK(r.term_external == x_b);
  CHECK(norm(r.residual) < 1e-10);
  CHECK(max_abs(r.term_model_mismatch) == 0.0);
}

TEST_CASE("bookkeeping identity and second-order residual") {
  config::MismatchConfig cfg;
  for (std::uint64_t draw = 0; draw < 3; ++draw) {
    const MismatchCase c = make_mismatch_case(cfg, 100 + draw);
    for (DecompositionMode mode : {DecompositionMode::raw, DecompositionMode::direct_sub}) {
      const auto points = mismatch_sweep(c, cfg.epsilon_sweep, mode);
      for (const SweepPoint& p : points) CHECK(p.identity_error < 1e-10);
      const double slope = order_fit_slope(points);
      CHECK(slope >= 1.8);
      CHECK(slope <= 2.2);
    }
  }
}

TEST_CASE("residual matches the closed-form remainder") {
  // With a = d / h per frequency and v = H^-1 y, x_hat = v / (1 + a) while the
  // labeled terms sum to (1 - a) v, so the remainder is a^2 / (1 + a) v.
  config::MismatchConfig cfg;
  const MismatchCase c = make_mismatch_case(cfg, 120);
  const SimRecord& r = c.record;
  for (DecompositionMode mode : {DecompositionMode::raw, DecompositionMode::direct_sub}) {
    for (double eps : {1e-1, 1e-3}) {
      const SystemOperator op_hat = perturb_operator(c.op_true, {c.delta_psf, eps});
      const MismatchReport rep = mismatch_report(c.op_true, op_hat, r.x, r.n_a, r.x_b, mode, r.n_b);
      const Spectrum& h = c.op_true.otf();
      const Spectrum& hh = op_hat.otf();
      const Tensor e = mode == DecompositionMode::raw ? r.x_b : r.n_b;
      Spectrum v = fft2(r.x);
      const Spectrum noise = fft2(r.n_a);
      const Spectrum ext = fft2(e);
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] += noise[i] / h[i];
        v[i] += mode == DecompositionMode::raw ? ext[i] : ext[i] / h[i];
        const Complex a = (hh[i] - h[i]) / h[i];
        v[i] *= a * a / (1.0 + a);
      }
      CHECK(norm(rep.residual - ifft2(v)) < 1e-10 * norm(rep.x_hat));
    }
  }
}

TEST_CASE("perturbation scaling keeps the estimated operator invertible") {
  config::MismatchConfig cfg;
  const MismatchCase c = make_mismatch_case(cfg, 11);
  double min_true = 1e9;
  for (const Complex& v : c.op_true.otf().values()) min_true = std::min(min_true, std::abs(v));
  const SystemOperator probe = make_circulant_operator(c.delta_psf, 32, 32);
  CHECK(std::abs(spectral_radius(probe) - min_true) < 1e-12 * std::max(1.0, min_true));
  cfg.zero_delta = true;
  CHECK(max_abs(make_mismatch_case(cfg, 11).delta_psf) == 0.0);
}

TEST_CASE("subtracting the estimate shrinks the external term") {
  config::MismatchConfig cfg;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const MismatchCase c = make_mismatch_case(cfg, 200 + s);
    const SystemOperator op_hat = perturb_operator(c.op_true, {c.delta_psf, cfg.epsilon});
    const SimRecord& r = c.record;
    const auto raw = mismatch_report(c.op_true, op_hat, r.x, r.n_a, r.x_b, DecompositionMode::raw, r.n_b);
    const auto sub = mismatch_report(c.op_true, op_hat, r.x, r.n_a, r.x_b, DecompositionMode::direct_sub, r.n_b);
    CHECK(sub.norms().external < raw.norms().external);
    CHECK(norm(sub.x_hat - r.x) < norm(raw.x_hat - r.x));
  }
}

TEST_CASE("decomposition preconditions and warnings") {
  const Tensor zero({16, 16, 3});
  const PsfParams p{6, 6, 3, 5, 0.7, 3, 1.5, 0.6};
  const Tensor psf = synth_psf(PsfKind::random_spots, p, 12).image();
  const SystemOperator cropped = make_operator(psf, 16, 16);
  CHECK_THROWS_AS(mismatch_report(cropped, cropped, zero, zero, zero, DecompositionMode::raw, zero),
                  NonInvertibleOperator);
  // A 2x2 box has an exact zero at the Nyquist frequency of an even grid.
  const SystemOperator box = make_circulant_operator(Tensor({2, 2, 3}, 0.25), 16, 16);
  CHECK_THROWS_AS(mismatch_report(box, box, zero, zero, zero, DecompositionMode::raw, zero),
                  NonInvertibleOperator);

  const SystemOperator op = make_circulant_operator(psf, 16, 16);
  CHECK(mismatch_report(op, op, zero, zero, zero, DecompositionMode::raw, zero).spectral_radius_warning);
  const SystemOperator half = make_circulant_operator(0.5 * psf, 16, 16);
  const MismatchReport r = mismatch_report(half, half, zero, zero, zero, DecompositionMode::raw, zero);
  CHECK(std::abs(r.spectral_radius - 0.5) < 1e-12);
  CHECK_FALSE(r.spectral_radius_warning);
  const config::Json j = to_json(r);
  CHECK(j.at("norms").at("external").get<double>() == 0.0);
  CHECK(j.at("spectral_radius_warning").get<bool>() == false);
}

TEST_CASE("noise norm comparison") {
  const SystemOperator op = invertible_operator(13);
  const Tensor x = random_tensor({16, 16, 3}, 14, 0, 1);
  const Tensor zero({16, 16, 3});
  const NoiseSpec noise{NoiseSpec::Kind::gaussian, 0.01, 0.0};

  // No external light and an exact estimate: both sides equal |n_a|, a tie.
  SimRecord tie = capture(op, x, zero, noise, 15);
  const BackgroundEstimate none = estimate_background(op, zero, {}, 1, 16);
  tie.b_hat = none.b_hat;
  tie.n_b = none.n_b;
  const NoiseNormComparison t = noise_norm_compare(tie);
  CHECK(t.with_estimate == t.without_estimate);
  CHECK(t.with_estimate > 0.0);
  CHECK_FALSE(t.ordered);

  // Degenerate zero-noise tie.
  SimRecord zero_rec = capture(op, x, zero, {}, 17);
  zero_rec.b_hat = zero;
  zero_rec.n_b = zero;
  const NoiseNormComparison z = noise_norm_compare(zero_rec);
  CHECK(z.with_estimate == 0.0);
  CHECK(z.without_estimate == 0.0);
  CHECK_FALSE(z.ordered);

  const Tensor xb = random_tensor({16, 16, 3}, 18, 0, 1);
  SimRecord exact = capture(op, x, xb, {}, 19);
  const BackgroundEstimate est = estimate_background(op, xb, {}, 4, 20);
  exact.b_hat = est.b_hat;
  exact.n_b = est.n_b;
  const NoiseNormComparison e = noise_norm_compare(exact);
  CHECK(e.with_estimate == 0.0);
  CHECK(e.without_estimate > 0.0);
  CHECK(e.ordered);

  config::MismatchConfig cfg;
  int dominated = 0, ordered = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const MismatchCase c = make_mismatch_case(cfg, 300 + s);
    dominated += norm(forward(c.op_true, c.record.x_b)) >= 10.0 * norm(c.record.n_a);
    ordered += noise_norm_compare(c.record).ordered;
  }
  CHECK(dominated == 50);
  CHECK(ordered == 50);
}

TEST_CASE("evaluation tables") {
  DatasetConfig dc;
  dc.n_scenes = 6;
  dc.scene_shape = {12, 12, 3};
  dc.psf = {4, 4, 3, 3, 0.7, 3, 1.5, 0.0};
  dc.train_lamps = {{2, 2, 2, 0.5}};
  dc.test_lamps = {{9, 9, 2, 0.5}};
  dc.seed = 21;
  const Dataset ds = generate_dataset(dc);

  PipelineSpec identity;
  identity.inverter = IdentityInverter{};
  PipelineSpec direct;
  direct.background.kind = BackgroundKind::direct_sub;
  direct.inverter = AdmmInverter{SolverConfig{10}};
  const std::vector<std::pair<std::string, PipelineSpec>> specs{{"identity", identity}, {"direct", direct}};

  const auto gt = evaluate({specs[0]}, ds.op, {ds.test[0]}, EvalInput::ground_truth);
  REQUIRE(gt.size() == 1);
  CHECK(gt[0].psnr == kPsnrIdentical);
  CHECK(gt[0].ssim == 1.0);
  CHECK(gt[0].mse == 0.0);

  const auto a = evaluate(specs, ds.op, ds.train);
  const auto b = evaluate(specs, ds.op, ds.train);
  REQUIRE(a.size() == 2);
  CHECK(a[0].name == "identity");
  CHECK(a[1].name == "direct");
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(a[i].psnr == b[i].psnr);
    CHECK(a[i].ssim == b[i].ssim);
    CHECK(a[i].mse == b[i].mse);
    CHECK(a[i].n_records == ds.train.size());
  }
  CHECK(a[1].mse == mean_loss(direct, ds.op, ds.train));
  CHECK_THROWS_AS(evaluate(specs, ds.op, {}), EmptyDataset);

  const auto dir = std::filesystem::temp_directory_path() / "lensless_test_analysis";
  write_metrics_csv(dir / "m1.csv", a);
  write_metrics_csv(dir / "m2.csv", b);
  std::ifstream f1(dir / "m1.csv"), f2(dir / "m2.csv");
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  CHECK(s1.str() == s2.str());
  CHECK(s1.str().rfind("pipeline,n_records,psnr,ssim,mse\nidentity,", 0) == 0);
}

TEST_CASE("image metrics on small images skip ssim") {
  const Tensor a = random_tensor({8, 8, 3}, 22, 0, 1), b = random_tensor({8, 8, 3}, 23, 0, 1);
  const ImageMetrics m = image_metrics(a, b);
  CHECK(std::isnan(m.ssim));
  CHECK(m.mse == loss_value(a, b));
  CHECK(m.psnr == psnr(a, b));
}
