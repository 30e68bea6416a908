#include "lensless/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "lensless/config.hpp"
#include "lensless/io.hpp"

namespace lensless {

namespace {

using json = config::Json;

enum Stream : std::uint64_t { kScene = 1, kIllumination = 2, kCapture = 3, kBackground = 4 };

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Separable Gaussian blur with circular boundary; sigma <= 0 is a no-op.
Tensor gaussian_blur(const Tensor& t, double sigma) {
  if (sigma <= 0.0) return t;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : k) v /= total;
  auto pass = [&](const Tensor& in, bool vertical) {
    Tensor out(in.shape());
    const int h = in.height(), w = in.width();
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < in.channels(); ++c) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i) {
            const int sy = vertical ? ((y + i) % h + h) % h : y;
            const int sx = vertical ? x : ((x + i) % w + w) % w;
            acc += k[static_cast<std::size_t>(i + radius)] * in(sy, sx, c);
          }
          out(y, x, c) = acc;
        }
      }
    }
    return out;
  };
  return pass(pass(t, true), false);
}

Tensor spot_pattern(const PsfParams& p, int n_spots, double blur, std::mt19937_64& rng,
                    bool first_on_axis) {
  Tensor img({p.height, p.width, p.channels});
  std::uniform_int_distribution<int> ry(0, p.height - 1), rx(0, p.width - 1);
  for (int s = 0; s < n_spots; ++s) {
    int y = ry(rng), x = rx(rng);
    if (s == 0 && first_on_axis) {
      y = psf_origin(p.height);
      x = psf_origin(p.width);
    }
    const double amp = uniform(rng, 0.5, 1.0);
    for (int c = 0; c < p.channels; ++c) img(y, x, c) += amp;
  }
  return gaussian_blur(img, blur);
}

Tensor resize_bilinear(const Tensor& in, const Shape& target) {
  Tensor out(target);
  const double sy = static_cast<double>(in.height()) / target.height;
  const double sx = static_cast<double>(in.width()) / target.width;
  for (int y = 0; y < target.height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, in.height() - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, in.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < target.width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, in.width() - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, in.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < target.channels; ++c) {
        const int ic = in.channels() == 1 ? 0 : std::min(c, in.channels() - 1);
        out(y, x, c) = (1 - wy) * ((1 - wx) * in(y0, x0, ic) + wx * in(y0, x1, ic)) +
                       wy * ((1 - wx) * in(y1, x0, ic) + wx * in(y1, x1, ic));
      }
    }
  }
  return out;
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (entry.is_regular_file() && ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no PNG images in " + dir.string());
  return files;
}

struct RecordFiles {
  std::string x, x_b, y, b_hat, n_b, n_a;
};

RecordFiles record_files(std::size_t index) {
  const std::string stem = "records/" + std::to_string(index) + "_";
  return {stem + "x.llia",     stem + "xb.llia", stem + "y.llia",
          stem + "bhat.llia", stem + "nb.llia", stem + "na.llia"};
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(master ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

PointSpreadFunction synth_psf(PsfKind kind, const PsfParams& p, std::uint64_t seed) {
  if (p.height < 1 || p.width < 1 || p.channels < 1) throw InvalidParams("PSF shape");
  if (p.blur < 0.0 || p.delta_weight < 0.0 || p.delta_weight > 1.0) {
    throw InvalidParams("PSF blur must be >= 0 and delta_weight in [0, 1]");
  }
  std::mt19937_64 rng(seed);
  Tensor img;
  switch (kind) {
    case PsfKind::random_spots:
      if (p.n_spots < 1) throw InvalidParams("random_spots needs n_spots >= 1");
      img = spot_pattern(p, p.n_spots, p.blur, rng, true);
      break;
    case PsfKind::gaussian_speckle: {
      if (p.speckle_sigma <= 0.0) throw InvalidParams("speckle_sigma must be positive");
      Tensor field({p.height, p.width, p.channels});
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (int y = 0; y < p.height; ++y) {
        for (int x = 0; x < p.width; ++x) {
          const double v = gauss(rng);
          for (int c = 0; c < p.channels; ++c) field(y, x, c) = v;
        }
      }
      img = gaussian_blur(field, p.speckle_sigma);
      for (double& v : img.values()) v = v * v;
      break;
    }
    case PsfKind::multifocal_like: {
      if (p.n_foci < 1 || p.n_spots < 1) throw InvalidParams("multifocal_like needs n_foci, n_spots >= 1");
      img = Tensor({p.height, p.width, p.channels});
      for (int f = 0; f < p.n_foci; ++f) {
        // Each focus is a coarse grid of spots with its own defocus blur.
        const double defocus = p.blur + 0.5 * f;
        const int step = std::max(2, std::min(p.height, p.width) / (2 + f));
        const int oy = std::uniform_int_distribution<int>(0, step - 1)(rng);
        const int ox = std::uniform_int_distribution<int>(0, step - 1)(rng);
        Tensor grid({p.height, p.width, p.channels});
        for (int y = oy; y < p.height; y += step) {
          for (int x = ox; x < p.width; x += step) {
            const double amp = uniform(rng, 0.3, 1.0);
            for (int c = 0; c < p.channels; ++c) grid(y, x, c) = amp;
          }
        }
        img = img + gaussian_blur(grid, defocus);
      }
      break;
    }
  }
  PointSpreadFunction normalized = PointSpreadFunction::normalized(std::move(img));
  if (p.delta_weight == 0.0) return normalized;
  Tensor mixed = (1.0 - p.delta_weight) * normalized.image();
  for (int c = 0; c < p.channels; ++c) {
    mixed(psf_origin(p.height), psf_origin(p.width), c) += p.delta_weight;
  }
  return PointSpreadFunction::normalized(std::move(mixed));
}

void NoiseSpec::validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InvalidParams("noise sigma must be >= 0");
  if (kind == Kind::poisson_gaussian && !(peak > 0.0)) {
    throw InvalidParams("poisson_gaussian noise needs peak > 0");
  }
}

void IlluminationSpec::validate() const {
  if (!(level >= 0.0)) throw InvalidParams("illumination level must be >= 0");
  for (const Lamp& l : lamps) {
    if (!(l.intensity >= 0.0) || !(l.sigma > 0.0)) {
      throw InvalidParams("lamp intensity must be >= 0 and sigma > 0");
    }
  }
}

Tensor synth_background(const IlluminationSpec& spec, const Shape& shape) {
  spec.validate();
  const bool ambient = spec.kind != IlluminationSpec::Kind::lamp_directional;
  const bool lamps = spec.kind != IlluminationSpec::Kind::ambient_uniform;
  Tensor out(shape, ambient ? spec.level : 0.0);
  if (!lamps) return out;
  for (const Lamp& l : spec.lamps) {
    for (int y = 0; y < shape.height; ++y) {
      for (int x = 0; x < shape.width; ++x) {
        const double r2 = (y - l.y) * (y - l.y) + (x - l.x) * (x - l.x);
        const double v = l.intensity * std::exp(-0.5 * r2 / (l.sigma * l.sigma));
        for (int c = 0; c < shape.channels; ++c) out(y, x, c) += v;
      }
    }
  }
  return out;
}

Tensor draw_sensor_noise(const Tensor& clean, const NoiseSpec& noise, std::mt19937_64& rng) {
  noise.validate();
  Tensor n(clean.shape());
  if (noise.kind == NoiseSpec::Kind::poisson_gaussian) {
    for (std::size_t i = 0; i < clean.size(); ++i) {
      const double mean = std::max(clean[i], 0.0) * noise.peak;
      const auto counts = std::poisson_distribution<long long>(mean)(rng);
      n[i] = static_cast<double>(counts) / noise.peak - clean[i];
    }
  }
  if (noise.sigma > 0.0) {
    std::normal_distribution<double> gauss(0.0, noise.sigma);
    for (double& v : n.values()) v += gauss(rng);
  }
  return n;
}

SimRecord capture(const SystemOperator& op, const Tensor& x, const Tensor& x_b,
                  const NoiseSpec& noise, std::uint64_t seed) {
  require_same_shape(x.shape(), op.scene_shape(), "capture scene");
  require_same_shape(x_b.shape(), op.scene_shape(), "capture background");
  std::mt19937_64 rng(seed);
  const Tensor clean = forward(op, x) + forward(op, x_b);
  SimRecord r;
  r.x = x;
  r.x_b = x_b;
  r.n_a = draw_sensor_noise(clean, noise, rng);
  r.y = clean + r.n_a;
  r.seed = seed;
  r.noise = noise;
  return r;
}

BackgroundEstimate estimate_background(const SystemOperator& op, const Tensor& x_b,
                                       const NoiseSpec& noise, int n_frames,
                                       std::uint64_t seed) {
  if (n_frames < 1) throw InvalidParams("n_frames must be >= 1");
  std::mt19937_64 rng(seed);
  const Tensor background = forward(op, x_b);
  Tensor mean_noise(background.shape());
  for (int f = 0; f < n_frames; ++f) {
    mean_noise = mean_noise + draw_sensor_noise(background, noise, rng);
  }
  mean_noise = (1.0 / n_frames) * mean_noise;
  BackgroundEstimate est;
  est.b_hat = background + mean_noise;
  est.n_b = background - est.b_hat;
  return est;
}

Tensor procedural_scene(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor tex(shape);
  for (double& v : tex.values()) v = gauss(rng);
  tex = gaussian_blur(tex, uniform(rng, 1.0, 3.0));
  // Rescale each channel of the texture into [0.1, 0.7].
  for (int c = 0; c < shape.channels; ++c) {
    double lo = 1e300, hi = -1e300;
    for (int y = 0; y < shape.height; ++y) {
      for (int x = 0; x < shape.width; ++x) {
        lo = std::min(lo, tex(y, x, c));
        hi = std::max(hi, tex(y, x, c));
      }
    }
    const double span = hi > lo ? hi - lo : 1.0;
    for (int y = 0; y < shape.height; ++y) {
      for (int x = 0; x < shape.width; ++x) tex(y, x, c) = 0.1 + 0.6 * (tex(y, x, c) - lo) / span;
    }
  }
  const int n_shapes = std::uniform_int_distribution<int>(2, 4)(rng);
  for (int s = 0; s < n_shapes; ++s) {
    const bool disk = uniform(rng, 0.0, 1.0) < 0.5;
    const double cy = uniform(rng, 0.0, shape.height), cx = uniform(rng, 0.0, shape.width);
    const double ry = uniform(rng, 0.1, 0.3) * shape.height;
    const double rx = uniform(rng, 0.1, 0.3) * shape.width;
    std::vector<double> color(static_cast<std::size_t>(shape.channels));
    for (double& c : color) c = uniform(rng, 0.0, 1.0);
    for (int y = 0; y < shape.height; ++y) {
      for (int x = 0; x < shape.width; ++x) {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        const bool inside = disk ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1 && std::abs(dx) <= 1;
        if (!inside) continue;
        for (int c = 0; c < shape.channels; ++c) tex(y, x, c) = color[static_cast<std::size_t>(c)];
      }
    }
  }
  return tex;
}

void DatasetConfig::validate() const {
  if (n_scenes < 1) throw InvalidParams("n_scenes must be >= 1");
  if (scene_shape.height < 1 || scene_shape.width < 1 || scene_shape.channels < 1) {
    throw InvalidParams("scene_shape must be positive");
  }
  if (psf.channels != scene_shape.channels) {
    throw InvalidParams("psf channels must match scene channels");
  }
  if (scene_source != "procedural" && scene_source != "directory") {
    throw InvalidParams("scene_source must be 'procedural' or 'directory'");
  }
  if (!(ambient_min >= 0.0) || !(ambient_max >= ambient_min)) {
    throw InvalidParams("ambient range must satisfy 0 <= min <= max");
  }
  if (!(split > 0.0 && split < 1.0)) throw InvalidParams("split must be in (0, 1)");
  if (n_frames < 1) throw InvalidParams("n_frames must be >= 1");
  noise.validate();
  const bool lamps = illumination_kind != IlluminationSpec::Kind::ambient_uniform;
  if (lamps && train_lamps.empty()) throw InvalidParams("lamp illumination needs train_lamps");
  if (lamps && lamp_variation && test_lamps.empty()) {
    throw InvalidParams("lamp_variation needs test_lamps");
  }
}

Dataset generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  PointSpreadFunction psf = synth_psf(cfg.psf_kind, cfg.psf, derive_seed(cfg.seed, ~0ULL));
  SystemOperator op = make_operator(psf, cfg.scene_shape.height, cfg.scene_shape.width);

  std::vector<std::filesystem::path> images;
  if (cfg.scene_source == "directory") images = list_images(cfg.image_dir);

  const auto n = static_cast<std::size_t>(cfg.n_scenes);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, ~1ULL));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  const auto n_train = static_cast<std::size_t>(std::llround(cfg.split * static_cast<double>(n)));
  std::vector<bool> is_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) is_train[order[i]] = true;

  Dataset ds{cfg, psf, op, {}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t rs = derive_seed(cfg.seed, i);
    Tensor x = images.empty() ? procedural_scene(cfg.scene_shape, derive_seed(rs, kScene))
                              : resize_bilinear(io::read_png(images[i % images.size()]),
                                                cfg.scene_shape);
    std::mt19937_64 irng(derive_seed(rs, kIllumination));
    IlluminationSpec ill;
    ill.kind = cfg.illumination_kind;
    ill.level = uniform(irng, cfg.ambient_min, cfg.ambient_max);
    ill.seed = derive_seed(rs, kIllumination);
    int lamp_index = -1;
    if (ill.kind != IlluminationSpec::Kind::ambient_uniform) {
      const auto& pool = (!is_train[i] && cfg.lamp_variation) ? cfg.test_lamps : cfg.train_lamps;
      lamp_index = std::uniform_int_distribution<int>(0, static_cast<int>(pool.size()) - 1)(irng);
      ill.lamps = {pool[static_cast<std::size_t>(lamp_index)]};
    }
    Tensor x_b = synth_background(ill, cfg.scene_shape);
    SimRecord r = capture(op, x, x_b, cfg.noise, derive_seed(rs, kCapture));
    BackgroundEstimate est =
        estimate_background(op, x_b, cfg.noise, cfg.n_frames, derive_seed(rs, kBackground));
    r.b_hat = std::move(est.b_hat);
    r.n_b = std::move(est.n_b);
    r.seed = rs;
    r.illumination = ill;
    r.n_frames = cfg.n_frames;
    r.lamp_index = lamp_index;
    r.split = is_train[i] ? "train" : "test";
    (is_train[i] ? ds.train : ds.test).push_back(std::move(r));
  }
  return ds;
}

DatasetManifest write_dataset(const Dataset& ds, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "records");
  io::write_array(out_dir / "psf.llia", ds.psf.image());
  json records = json::array();
  std::size_t index = 0;
  for (const auto* split : {&ds.train, &ds.test}) {
    for (const SimRecord& r : *split) {
      const RecordFiles f = record_files(index);
      io::write_array(out_dir / f.x, r.x);
      io::write_array(out_dir / f.x_b, r.x_b);
      io::write_array(out_dir / f.y, r.y);
      io::write_array(out_dir / f.b_hat, r.b_hat);
      io::write_array(out_dir / f.n_b, r.n_b);
      io::write_array(out_dir / f.n_a, r.n_a);
      records.push_back({{"id", index},
                         {"split", r.split},
                         {"seed", r.seed},
                         {"lamp_index", r.lamp_index},
                         {"n_frames", r.n_frames},
                         {"illumination", config::to_json(r.illumination)},
                         {"noise", config::to_json(r.noise)},
                         {"files",
                          {{"x", f.x},
                           {"x_b", f.x_b},
                           {"y", f.y},
                           {"b_hat", f.b_hat},
                           {"n_b", f.n_b},
                           {"n_a", f.n_a}}}});
      ++index;
    }
  }
  json manifest = {{"format", "lensless-dataset"},
                   {"version", 1},
                   {"config", config::to_json(ds.config)},
                   {"psf", "psf.llia"},
                   {"n_train", ds.train.size()},
                   {"n_test", ds.test.size()},
                   {"records", records}};
  const auto path = out_dir / "manifest.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
  return {path, ds.train.size(), ds.test.size()};
}

DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir) {
  return write_dataset(generate_dataset(config), out_dir);
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  const auto dir = manifest_path.parent_path();
  try {
    DatasetConfig cfg = config::dataset_config_from_json(m.at("config"));
    // float32 storage perturbs the per-channel sums, so renormalize.
    PointSpreadFunction psf =
        PointSpreadFunction::normalized(io::read_array(dir / m.at("psf").get<std::string>()));
    SystemOperator op = make_operator(psf, cfg.scene_shape.height, cfg.scene_shape.width);
    Dataset ds{cfg, psf, op, {}, {}};
    for (const json& e : m.at("records")) {
      const json& f = e.at("files");
      SimRecord r;
      r.x = io::read_array(dir / f.at("x").get<std::string>());
      r.x_b = io::read_array(dir / f.at("x_b").get<std::string>());
      r.y = io::read_array(dir / f.at("y").get<std::string>());
      r.b_hat = io::read_array(dir / f.at("b_hat").get<std::string>());
      r.n_b = io::read_array(dir / f.at("n_b").get<std::string>());
      r.n_a = io::read_array(dir / f.at("n_a").get<std::string>());
      r.seed = e.at("seed").get<std::uint64_t>();
      r.lamp_index = e.at("lamp_index").get<int>();
      r.n_frames = e.at("n_frames").get<int>();
      r.illumination = config::illumination_from_json(e.at("illumination"));
      r.noise = config::noise_from_json(e.at("noise"));
      r.split = e.at("split").get<std::string>();
      (r.split == "train" ? ds.train : ds.test).push_back(std::move(r));
    }
    if (ds.train.size() + ds.test.size() == 0) throw EmptyDataset(manifest_path.string());
    return ds;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  } catch (const InvalidParams& e) {
    throw IoError("invalid PSF in " + manifest_path.string() + ": " + e.what());
  }
}

}  // namespace lensless
