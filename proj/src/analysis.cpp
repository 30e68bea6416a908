#include "lensless/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace lensless {

namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;

std::vector<double> gaussian_window() {
  std::vector<double> w(kWindow * kWindow);
  double total = 0.0;
  const int r = kWindow / 2;
  for (int y = 0; y < kWindow; ++y) {
    for (int x = 0; x < kWindow; ++x) {
      const double d2 = (y - r) * (y - r) + (x - r) * (x - r);
      w[static_cast<std::size_t>(y * kWindow + x)] = std::exp(-d2 / (2 * kWindowSigma * kWindowSigma));
      total += w[static_cast<std::size_t>(y * kWindow + x)];
    }
  }
  for (double& v : w) v /= total;
  return w;
}

void require_invertible(const SystemOperator& op, double min_abs_otf, const char* which) {
  if (!op.is_circulant()) {
    throw NonInvertibleOperator(std::string(which) + " is cropped; decomposition needs a circulant operator");
  }
  for (const Complex& v : op.otf().values()) {
    if (!(std::abs(v) > min_abs_otf)) {
      throw NonInvertibleOperator(std::string(which) + " has |otf| = " + std::to_string(std::abs(v)) +
                                  " <= " + std::to_string(min_abs_otf));
    }
  }
}

// Spectral division; the imaginary rounding residue is dropped.
Tensor apply_inverse(const Spectrum& otf, const Tensor& v) {
  Spectrum s = fft2(v);
  auto sv = s.values();
  auto ov = otf.values();
  for (std::size_t i = 0; i < sv.size(); ++i) sv[i] /= ov[i];
  return real_part(ifft2_complex(s));
}

Tensor apply_spectrum(const Spectrum& k, const Tensor& v) {
  Spectrum s = fft2(v);
  auto sv = s.values();
  auto kv = k.values();
  for (std::size_t i = 0; i < sv.size(); ++i) sv[i] *= kv[i];
  return real_part(ifft2_complex(s));
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, double peak) {
  require_same_shape(a.shape(), b.shape(), "psnr");
  // Neumaier summation; a plain running sum drifts by several ulps on large
  // uniform-error images.
  double acc = 0.0, comp = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = (a[i] - b[i]) * (a[i] - b[i]);
    const double s = acc + t;
    comp += std::abs(acc) >= std::abs(t) ? (acc - s) + t : (t - s) + acc;
    acc = s;
  }
  const double mse = (acc + comp) / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 20.0 * std::log10(peak) - 10.0 * std::log10(mse);
}

double ssim(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  if (a.height() < kWindow || a.width() < kWindow) {
    throw TooSmall("ssim needs at least " + std::to_string(kWindow) + "x" +
                   std::to_string(kWindow) + ", got " + to_string(a.shape()));
  }
  static const std::vector<double> w = gaussian_window();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int oh = a.height() - kWindow + 1, ow = a.width() - kWindow + 1;
  double channel_total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    double map_total = 0.0;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = 0; dy < kWindow; ++dy) {
          for (int dx = 0; dx < kWindow; ++dx) {
            const double wv = w[static_cast<std::size_t>(dy * kWindow + dx)];
            const double va = a(y + dy, x + dx, c), vb = b(y + dy, x + dx, c);
            ma += wv * va;
            mb += wv * vb;
            saa += wv * va * va;
            sbb += wv * vb * vb;
            sab += wv * va * vb;
          }
        }
        const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
        map_total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                     ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
      }
    }
    channel_total += map_total / (static_cast<double>(oh) * ow);
  }
  return channel_total / a.channels();
}

MismatchReport::Norms MismatchReport::norms() const {
  return {norm(term_model_mismatch), norm(term_noise_amp), norm(term_external), norm(residual)};
}

MismatchReport mismatch_report(const SystemOperator& op_true, const SystemOperator& op_hat,
                               const Tensor& x, const Tensor& n_a, const Tensor& x_b,
                               DecompositionMode mode, const Tensor& n_b, double min_abs_otf) {
  require_same_shape(op_true.padded_shape(), op_hat.padded_shape(), "mismatch operators");
  require_invertible(op_true, min_abs_otf, "true operator");
  require_invertible(op_hat, min_abs_otf, "estimated operator");
  const Shape s = op_true.scene_shape();
  require_same_shape(x.shape(), s, "mismatch scene");
  require_same_shape(n_a.shape(), s, "mismatch n_a");
  require_same_shape(x_b.shape(), s, "mismatch x_b");
  if (mode == DecompositionMode::direct_sub) require_same_shape(n_b.shape(), s, "mismatch n_b");

  const Spectrum& h = op_true.otf();
  Spectrum d = op_hat.otf();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] -= h[i];
  // (I - H^-1 D) v
  auto first_order = [&](const Tensor& v) { return v - apply_inverse(h, apply_spectrum(d, v)); };

  MismatchReport r;
  r.mode = mode;
  Tensor y = forward(op_true, x) + n_a;
  y = y + (mode == DecompositionMode::raw ? forward(op_true, x_b) : n_b);
  r.x_hat = apply_inverse(op_hat.otf(), y);
  r.term_model_mismatch = apply_inverse(h, apply_spectrum(d, x));
  r.term_noise_amp = first_order(apply_inverse(h, n_a));
  r.term_external =
      mode == DecompositionMode::raw ? first_order(x_b) : first_order(apply_inverse(h, n_b));
  r.residual = r.x_hat - (x - r.term_model_mismatch + r.term_noise_amp + r.term_external);
  r.spectral_radius = spectral_radius(op_true);
  r.spectral_radius_warning = !(r.spectral_radius < 1.0);
  return r;
}

MismatchCase make_mismatch_case(const config::MismatchConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const PointSpreadFunction psf = synth_psf(cfg.psf_kind, cfg.psf, derive_seed(seed, 1));
  SystemOperator op = make_circulant_operator(psf.image(), cfg.grid.height, cfg.grid.width);

  Tensor delta(psf.shape());
  if (!cfg.zero_delta) {
    std::mt19937_64 rng(derive_seed(seed, 2));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (double& v : delta.values()) v = gauss(rng);
    const SystemOperator probe = make_circulant_operator(delta, cfg.grid.height, cfg.grid.width);
    double min_otf = std::numeric_limits<double>::infinity();
    for (const Complex& v : op.otf().values()) min_otf = std::min(min_otf, std::abs(v));
    delta = (min_otf / spectral_radius(probe)) * delta;
  }

  const Tensor x = procedural_scene(cfg.grid, derive_seed(seed, 3));
  IlluminationSpec ill = cfg.illumination;
  ill.seed = seed;
  const Tensor x_b = synth_background(ill, cfg.grid);
  SimRecord rec = capture(op, x, x_b, cfg.noise, derive_seed(seed, 4));
  BackgroundEstimate est = estimate_background(op, x_b, cfg.noise, cfg.n_frames, derive_seed(seed, 5));
  rec.b_hat = std::move(est.b_hat);
  rec.n_b = std::move(est.n_b);
  rec.seed = seed;
  rec.illumination = ill;
  rec.noise = cfg.noise;
  rec.n_frames = cfg.n_frames;
  return {std::move(op), std::move(delta), std::move(rec)};
}

std::vector<SweepPoint> mismatch_sweep(const MismatchCase& c, const std::vector<double>& epsilons,
                                       DecompositionMode mode, double min_abs_otf) {
  std::vector<SweepPoint> out;
  for (double eps : epsilons) {
    const SystemOperator op_hat = perturb_operator(c.op_true, {c.delta_psf, eps});
    const MismatchReport r = mismatch_report(c.op_true, op_hat, c.record.x, c.record.n_a,
                                             c.record.x_b, mode, c.record.n_b, min_abs_otf);
    const Tensor rebuilt =
        c.record.x - r.term_model_mismatch + r.term_noise_amp + r.term_external + r.residual;
    out.push_back({eps, norm(r.residual), norm(rebuilt - r.x_hat) / norm(r.x_hat)});
  }
  return out;
}

double order_fit_slope(const std::vector<SweepPoint>& points) {
  if (points.size() < 2) throw InvalidParams("slope fit needs at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const SweepPoint& p : points) {
    const double lx = std::log(p.epsilon), ly = std::log(p.residual_norm);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double n = static_cast<double>(points.size());
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

NoiseNormComparison noise_norm_compare(const SimRecord& record) {
  const Tensor hx_b = record.n_b + record.b_hat;
  NoiseNormComparison c;
  c.with_estimate = norm(record.n_a + record.n_b);
  c.without_estimate = norm(record.n_a + hx_b);
  c.ordered = c.with_estimate < c.without_estimate;
  return c;
}

ImageMetrics image_metrics(const Tensor& x_hat, const Tensor& x) {
  ImageMetrics m;
  m.psnr = psnr(x_hat, x);
  m.mse = loss_value(x_hat, x);
  m.ssim = x.height() >= kWindow && x.width() >= kWindow ? ssim(x_hat, x)
                                                          : std::numeric_limits<double>::quiet_NaN();
  return m;
}

std::vector<EvalRow> evaluate(const std::vector<std::pair<std::string, PipelineSpec>>& specs,
                              const SystemOperator& op, const std::vector<SimRecord>& records,
                              EvalInput input) {
  if (records.empty()) throw EmptyDataset("no records to evaluate");
  std::vector<EvalRow> rows;
  for (const auto& [name, spec] : specs) {
    spec.validate(op);
    EvalRow row{name, records.size(), 0.0, 0.0, 0.0};
    for (const SimRecord& r : records) {
      std::optional<Tensor> b;
      if (r.b_hat.size() > 0) b = r.b_hat;
      const Tensor& in = input == EvalInput::ground_truth ? r.x : r.y;
      const ImageMetrics m = image_metrics(run_pipeline(spec, op, {in, b}), r.x);
      row.psnr += m.psnr;
      row.ssim += m.ssim;
      row.mse += m.mse;
    }
    const double n = static_cast<double>(records.size());
    row.psnr /= n;
    row.ssim /= n;
    row.mse /= n;
    rows.push_back(row);
  }
  return rows;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out << "pipeline,n_records,psnr,ssim,mse\n";
  char buf[160];
  for (const EvalRow& r : rows) {
    std::snprintf(buf, sizeof buf, ",%zu,%.17g,%.17g,%.17g\n", r.n_records, r.psnr, r.ssim, r.mse);
    out << r.name << buf;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

config::Json to_json(const MismatchReport& r) {
  const auto n = r.norms();
  return {{"mode", r.mode == DecompositionMode::raw ? "raw" : "direct_sub"},
          {"operator", "circulant, uncropped"},
          {"spectral_radius", r.spectral_radius},
          {"spectral_radius_warning", r.spectral_radius_warning},
          {"norms",
           {{"model_mismatch", n.model_mismatch},
            {"noise_amp", n.noise_amp},
            {"external", n.external},
            {"residual", n.residual},
            {"x_hat", norm(r.x_hat)}}}};
}

}  // namespace lensless
