#include "lensless/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <set>

#include "lensless/io.hpp"

namespace lensless::config {

namespace {

// Strict view of one JSON object. Every key read is marked; finish() rejects
// whatever is left.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  void mark(const std::string& key) { seen_.insert(key); }
  std::string at(const std::string& key) const { return path_ + "." + key; }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(at(key) + ": required key missing");
    return j_.at(key);
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) {
      seen_.insert(key);
      return fallback;
    }
    return convert<T>(raw(key), at(key));
  }

  template <class T>
  T require(const std::string& key) {
    return convert<T>(raw(key), at(key));
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(at(item.key()) + ": unknown key");
    }
  }

  template <class T>
  static T convert(const Json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      const bool ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
      if (!ok) throw ConfigError(where + ": expected a non-negative integer");
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
      const auto value = v.get<std::int64_t>();
      if (value < std::numeric_limits<T>::min() || value > std::numeric_limits<T>::max()) {
        throw ConfigError(where + ": integer out of range");
      }
      return static_cast<T>(value);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
      return v.get<std::string>();
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Re-raises library validation failures as ConfigError at `path`.
template <class F>
void checked(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

template <class T>
std::vector<T> array_of(const Json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array");
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(Reader::convert<T>(v[i], where + "[" + std::to_string(i) + "]"));
  }
  return out;
}

Shape shape_from(const Json& v, const std::string& where) {
  const auto dims = array_of<int>(v, where);
  if (dims.size() != 3) throw ConfigError(where + ": expected [height, width, channels]");
  for (int d : dims) {
    if (d < 1) throw ConfigError(where + ": dimensions must be >= 1");
  }
  return {dims[0], dims[1], dims[2]};
}

Json shape_json(const Shape& s) { return Json::array({s.height, s.width, s.channels}); }

PsfKind psf_kind_from(const std::string& s, const std::string& where) {
  if (s == "random_spots") return PsfKind::random_spots;
  if (s == "gaussian_speckle") return PsfKind::gaussian_speckle;
  if (s == "multifocal_like") return PsfKind::multifocal_like;
  throw ConfigError(where + ": unknown PSF kind '" + s + "'");
}

IlluminationSpec::Kind illumination_kind_from(const std::string& s, const std::string& where) {
  if (s == "ambient_uniform") return IlluminationSpec::Kind::ambient_uniform;
  if (s == "lamp_directional") return IlluminationSpec::Kind::lamp_directional;
  if (s == "mixture") return IlluminationSpec::Kind::mixture;
  throw ConfigError(where + ": unknown illumination kind '" + s + "'");
}

std::pair<PsfKind, PsfParams> psf_from_json(const Json& j, const std::string& path) {
  Reader r(j, path);
  const PsfKind kind = psf_kind_from(r.get<std::string>("kind", "random_spots"), r.at("kind"));
  PsfParams p;
  p.height = r.get("height", p.height);
  p.width = r.get("width", p.width);
  p.channels = r.get("channels", p.channels);
  p.n_spots = r.get("n_spots", p.n_spots);
  p.blur = r.get("blur", p.blur);
  p.n_foci = r.get("n_foci", p.n_foci);
  p.speckle_sigma = r.get("speckle_sigma", p.speckle_sigma);
  p.delta_weight = r.get("delta_weight", p.delta_weight);
  r.finish();
  if (p.height < 1 || p.width < 1 || p.channels < 1) {
    throw ConfigError(path + ": PSF dimensions must be >= 1");
  }
  if (p.n_spots < 1 || p.n_foci < 1) throw ConfigError(path + ": n_spots and n_foci must be >= 1");
  if (!(p.blur >= 0.0) || !(p.speckle_sigma > 0.0)) {
    throw ConfigError(path + ": blur must be >= 0 and speckle_sigma > 0");
  }
  if (!(p.delta_weight >= 0.0 && p.delta_weight <= 1.0)) {
    throw ConfigError(path + ".delta_weight: must be in [0, 1]");
  }
  return {kind, p};
}

std::vector<Lamp> lamps_from(const Json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array");
  std::vector<Lamp> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(lamp_from_json(v[i], where + "[" + std::to_string(i) + "]"));
  }
  return out;
}

Json lamps_json(const std::vector<Lamp>& lamps) {
  Json out = Json::array();
  for (const Lamp& l : lamps) out.push_back(to_json(l));
  return out;
}

std::optional<NetArch> net_from(Reader& r, const std::string& key) {
  if (!r.has(key)) {
    r.mark(key);
    return std::nullopt;
  }
  const Json& v = r.raw(key);
  if (v.is_null()) return std::nullopt;
  Reader n(v, r.at(key));
  NetArch net;
  net.widths = array_of<int>(n.raw("widths"), n.at("widths"));
  net.slope = n.get("slope", net.slope);
  n.finish();
  if (net.widths.size() < 2) throw ConfigError(n.at("widths") + ": need at least [in, out]");
  for (int w : net.widths) {
    if (w < 1) throw ConfigError(n.at("widths") + ": widths must be >= 1");
  }
  if (!std::isfinite(net.slope)) throw ConfigError(n.at("slope") + ": must be finite");
  return net;
}

Json net_json(const std::optional<NetArch>& net) {
  if (!net) return nullptr;
  return {{"widths", net->widths}, {"slope", net->slope}};
}

NetArch net_arch_of(const TinyCnn& net) { return {net.widths, net.slope}; }

TinyCnn make_net(const NetArch& a, std::uint64_t seed) {
  return TinyCnn::make(a.widths, seed, a.slope);
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace

const char* to_string(PsfKind kind) {
  switch (kind) {
    case PsfKind::random_spots:
      return "random_spots";
    case PsfKind::gaussian_speckle:
      return "gaussian_speckle";
    case PsfKind::multifocal_like:
      return "multifocal_like";
  }
  return "random_spots";
}

const char* to_string(IlluminationSpec::Kind kind) {
  switch (kind) {
    case IlluminationSpec::Kind::ambient_uniform:
      return "ambient_uniform";
    case IlluminationSpec::Kind::lamp_directional:
      return "lamp_directional";
    case IlluminationSpec::Kind::mixture:
      return "mixture";
  }
  return "ambient_uniform";
}

const char* to_string(NoiseSpec::Kind kind) {
  return kind == NoiseSpec::Kind::gaussian ? "gaussian" : "poisson_gaussian";
}

Json to_json(const NoiseSpec& n) {
  return {{"kind", to_string(n.kind)}, {"sigma", n.sigma}, {"peak", n.peak}};
}

Json to_json(const Lamp& l) {
  return {{"y", l.y}, {"x", l.x}, {"sigma", l.sigma}, {"intensity", l.intensity}};
}

Json to_json(const IlluminationSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"level", s.level},
          {"lamps", lamps_json(s.lamps)},
          {"seed", s.seed}};
}

Json to_json(PsfKind kind, const PsfParams& p) {
  return {{"kind", to_string(kind)},   {"height", p.height},
          {"width", p.width},          {"channels", p.channels},
          {"n_spots", p.n_spots},      {"blur", p.blur},
          {"n_foci", p.n_foci},        {"speckle_sigma", p.speckle_sigma},
          {"delta_weight", p.delta_weight}};
}

Json to_json(const DatasetConfig& c) {
  return {{"n_scenes", c.n_scenes},
          {"scene_shape", shape_json(c.scene_shape)},
          {"psf", to_json(c.psf_kind, c.psf)},
          {"scene_source", c.scene_source},
          {"image_dir", c.image_dir.string()},
          {"illumination", to_string(c.illumination_kind)},
          {"ambient_min", c.ambient_min},
          {"ambient_max", c.ambient_max},
          {"lamp_variation", c.lamp_variation},
          {"train_lamps", lamps_json(c.train_lamps)},
          {"test_lamps", lamps_json(c.test_lamps)},
          {"noise", to_json(c.noise)},
          {"n_frames", c.n_frames},
          {"split", c.split},
          {"seed", c.seed}};
}

Json to_json(const SolverConfig& c) {
  return {{"n_iter", c.n_iter}, {"mu1", c.mu1}, {"mu2", c.mu2},         {"mu3", c.mu3},
          {"tau", c.tau},       {"tik_eps", c.tik_eps}, {"nonneg", c.nonneg}};
}

Json to_json(const TrainConfig& c) {
  return {{"lr0", c.lr0},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"weight_decay", c.weight_decay},
          {"warmup_frac", c.warmup_frac},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"steps", c.steps},
          {"seed", c.seed},
          {"threads", c.threads}};
}

NoiseSpec noise_from_json(const Json& j, const std::string& path) {
  Reader r(j, path);
  NoiseSpec n;
  const auto kind = r.get<std::string>("kind", "gaussian");
  if (kind == "gaussian") {
    n.kind = NoiseSpec::Kind::gaussian;
  } else if (kind == "poisson_gaussian") {
    n.kind = NoiseSpec::Kind::poisson_gaussian;
  } else {
    throw ConfigError(r.at("kind") + ": unknown noise kind '" + kind + "'");
  }
  n.sigma = r.get("sigma", n.sigma);
  n.peak = r.get("peak", n.peak);
  r.finish();
  checked(path, [&] { n.validate(); });
  return n;
}

Lamp lamp_from_json(const Json& j, const std::string& path) {
  Reader r(j, path);
  Lamp l;
  l.y = r.require<double>("y");
  l.x = r.require<double>("x");
  l.sigma = r.get("sigma", l.sigma);
  l.intensity = r.require<double>("intensity");
  r.finish();
  if (!(l.sigma > 0.0) || !(l.intensity >= 0.0)) {
    throw ConfigError(path + ": lamp needs sigma > 0 and intensity >= 0");
  }
  return l;
}

IlluminationSpec illumination_from_json(const Json& j, const std::string& path) {
  Reader r(j, path);
  IlluminationSpec s;
  s.kind = illumination_kind_from(r.get<std::string>("kind", "ambient_uniform"), r.at("kind"));
  s.level = r.get("level", s.level);
  if (r.has("lamps")) s.lamps = lamps_from(r.raw("lamps"), r.at("lamps"));
  r.mark("lamps");
  s.seed = r.get<std::uint64_t>("seed", 0);
  r.finish();
  checked(path, [&] { s.validate(); });
  return s;
}

DatasetConfig dataset_config_from_json(const Json& j, const std::string& path) {
  Reader r(j, path);
  DatasetConfig c;
  c.n_scenes = r.get("n_scenes", c.n_scenes);
  if (r.has("scene_shape")) c.scene_shape = shape_from(r.raw("scene_shape"), r.at("scene_shape"));
  r.mark("scene_shape");
  if (r.has("psf")) {
    std::tie(c.psf_kind, c.psf) = psf_from_json(r.raw("psf"), r.at("psf"));
  } else {
    r.mark("psf");
    c.psf.channels = c.scene_shape.channels;
  }
  c.scene_source = r.get<std::string>("scene_source", c.scene_source);
  c.image_dir = r.get<std::string>("image_dir", "");
  c.illumination_kind =
      illumination_kind_from(r.get<std::string>("illumination", to_string(c.illumination_kind)),
                             r.at("illumination"));
  c.ambient_min = r.get("ambient_min", c.ambient_min);
  c.ambient_max = r.get("ambient_max", c.ambient_max);
  c.lamp_variation = r.get("lamp_variation", c.lamp_variation);
  if (r.has("train_lamps")) c.train_lamps = lamps_from(r.raw("train_lamps"), r.at("train_lamps"));
  if (r.has("test_lamps")) c.test_lamps = lamps_from(r.raw("test_lamps"), r.at("test_lamps"));
  r.mark("train_lamps");
  r.mark("test_lamps");
  if (r.has("noise")) c.noise = noise_from_json(r.raw("noise"), r.at("noise"));
  r.mark("noise");
  c.n_frames = r.get("n_frames", c.n_frames);
  c.split = r.get("split", c.split);
  c.seed = r.get<std::uint64_t>("seed", c.seed);
  r.finish();
  checked(path, [&] { c.validate(); });
  return c;
}

SolverConfig solver_config_from_json(const Json& j, const std::string& path) {
  Reader r(j, path);
  SolverConfig c;
  c.n_iter = r.get("n_iter", c.n_iter);
  c.mu1 = r.get("mu1", c.mu1);
  c.mu2 = r.get("mu2", c.mu2);
  c.mu3 = r.get("mu3", c.mu3);
  c.tau = r.get("tau", c.tau);
  c.tik_eps = r.get("tik_eps", c.tik_eps);
  c.nonneg = r.get("nonneg", c.nonneg);
  r.finish();
  checked(path, [&] { c.validate(); });
  return c;
}

TrainConfig train_config_from_json(const Json& j, const std::string& path) {
  Reader r(j, path);
  TrainConfig c;
  c.lr0 = r.get("lr0", c.lr0);
  c.beta1 = r.get("beta1", c.beta1);
  c.beta2 = r.get("beta2", c.beta2);
  c.eps = r.get("eps", c.eps);
  c.weight_decay = r.get("weight_decay", c.weight_decay);
  c.warmup_frac = r.get("warmup_frac", c.warmup_frac);
  c.epochs = r.get("epochs", c.epochs);
  c.batch_size = r.get("batch_size", c.batch_size);
  c.steps = r.get("steps", c.steps);
  c.seed = r.get<std::uint64_t>("seed", c.seed);
  c.threads = r.get("threads", c.threads);
  r.finish();
  checked(path, [&] { c.validate(); });
  return c;
}

void PipelineArch::validate(int channels, const std::string& path) const {
  auto net_ok = [&](const std::optional<NetArch>& net, int in, int out, const char* key) {
    if (!net) return;
    if (net->widths.front() != in || net->widths.back() != out) {
      throw ConfigError(path + "." + key + ".widths: expected " + std::to_string(in) + " -> " +
                        std::to_string(out) + " channels");
    }
  };
  int stage = channels;
  if (background == BackgroundKind::learned_sub) {
    if (!background_net) throw ConfigError(path + ".background_net: required for learned_sub");
    net_ok(background_net, channels, channels, "background_net");
  } else if (background_net) {
    throw ConfigError(path + ".background_net: only valid for learned_sub");
  }
  if (background == BackgroundKind::concatenate) stage = 2 * channels;
  if (pre) {
    net_ok(pre, stage, channels, "pre");
  } else if (stage != channels) {
    throw ConfigError(path + ".pre: concatenate needs a pre-processor");
  }
  net_ok(post, channels, channels, "post");
  if (inverter == "le_admm" && iterations < 1) {
    throw ConfigError(path + ".inverter.iterations: must be >= 1");
  }
  if ((inverter == "wiener" || inverter == "train_inv") && !(tik_eps > 0.0)) {
    throw ConfigError(path + ".inverter.tik_eps: must be > 0");
  }
}

PipelineArch pipeline_arch_from_json(const Json& j, const std::string& path,
                                     const std::filesystem::path& base_dir) {
  Reader r(j, path);
  PipelineArch a;
  a.name = r.get<std::string>("name", a.name);
  checked(r.at("background"), [&] {
    a.background = background_kind_from_string(r.get<std::string>("background", "none"));
  });
  if (r.has("concat_order")) {
    const auto order = array_of<std::string>(r.raw("concat_order"), r.at("concat_order"));
    if (order != std::vector<std::string>{"y", "b_hat"}) {
      throw ConfigError(r.at("concat_order") + ": only [\"y\", \"b_hat\"] is supported");
    }
  }
  r.mark("concat_order");
  a.background_net = net_from(r, "background_net");
  a.pre = net_from(r, "pre");
  a.post = net_from(r, "post");
  if (r.has("inverter")) {
    Reader inv(r.raw("inverter"), r.at("inverter"));
    a.inverter = inv.require<std::string>("kind");
    if (a.inverter == "wiener" || a.inverter == "train_inv") {
      a.tik_eps = inv.get("tik_eps", a.tik_eps);
    } else if (a.inverter == "admm") {
      if (inv.has("solver")) a.solver = solver_config_from_json(inv.raw("solver"), inv.at("solver"));
      inv.mark("solver");
    } else if (a.inverter == "le_admm") {
      a.iterations = inv.get("iterations", a.iterations);
      if (inv.has("init")) a.solver = solver_config_from_json(inv.raw("init"), inv.at("init"));
      inv.mark("init");
    } else if (a.inverter != "identity") {
      throw ConfigError(inv.at("kind") + ": unknown inverter '" + a.inverter + "'");
    }
    inv.finish();
  } else {
    r.mark("inverter");
  }
  a.clamp_output = r.get("clamp_output", a.clamp_output);
  if (r.has("parameters") && !r.raw("parameters").is_null()) {
    a.parameters = resolve(base_dir, r.require<std::string>("parameters"));
  }
  r.mark("parameters");
  a.init_seed = r.get<std::uint64_t>("init_seed", a.init_seed);
  if (r.has("checkpoint")) {
    a.checkpoint = r.raw("checkpoint");
    if (!a.checkpoint.is_object()) throw ConfigError(r.at("checkpoint") + ": expected an object");
  }
  r.mark("checkpoint");
  r.finish();
  return a;
}

Json to_json(const PipelineArch& a) {
  Json inv = {{"kind", a.inverter}};
  if (a.inverter == "wiener" || a.inverter == "train_inv") inv["tik_eps"] = a.tik_eps;
  if (a.inverter == "admm") inv["solver"] = to_json(a.solver);
  if (a.inverter == "le_admm") {
    inv["iterations"] = a.iterations;
    inv["init"] = to_json(a.solver);
  }
  Json j = {{"name", a.name}, {"background", to_string(a.background)}};
  if (a.background == BackgroundKind::concatenate) j["concat_order"] = {"y", "b_hat"};
  j["background_net"] = net_json(a.background_net);
  j["pre"] = net_json(a.pre);
  j["inverter"] = inv;
  j["post"] = net_json(a.post);
  j["clamp_output"] = a.clamp_output;
  j["parameters"] = a.parameters ? Json(a.parameters->string()) : Json(nullptr);
  j["init_seed"] = a.init_seed;
  if (!a.checkpoint.empty()) j["checkpoint"] = a.checkpoint;
  return j;
}

PipelineArch arch_of(const PipelineSpec& spec, const std::string& name) {
  PipelineArch a;
  a.name = name;
  a.background = spec.background.kind;
  if (spec.background.net) a.background_net = net_arch_of(*spec.background.net);
  if (spec.pre) a.pre = net_arch_of(*spec.pre);
  if (spec.post) a.post = net_arch_of(*spec.post);
  a.inverter = inverter_name(spec.inverter);
  if (const auto* w = std::get_if<WienerInverter>(&spec.inverter)) a.tik_eps = w->tik_eps;
  if (const auto* m = std::get_if<AdmmInverter>(&spec.inverter)) a.solver = m->cfg;
  if (const auto* l = std::get_if<LeAdmmInverter>(&spec.inverter)) {
    a.iterations = l->params.iterations();
    a.solver = l->params.effective(0);
  }
  a.clamp_output = spec.clamp_output;
  return a;
}

PipelineSpec build_pipeline(const PipelineArch& arch, const SystemOperator& op) {
  arch.validate(op.channels(), arch.name);
  PipelineSpec spec;
  spec.background.kind = arch.background;
  if (arch.background_net) {
    spec.background.net = make_net(*arch.background_net, derive_seed(arch.init_seed, 1));
  }
  if (arch.pre) spec.pre = make_net(*arch.pre, derive_seed(arch.init_seed, 2));
  if (arch.post) spec.post = make_net(*arch.post, derive_seed(arch.init_seed, 3));
  if (arch.inverter == "wiener") {
    spec.inverter = WienerInverter{arch.tik_eps};
  } else if (arch.inverter == "admm") {
    spec.inverter = AdmmInverter{arch.solver};
  } else if (arch.inverter == "le_admm") {
    spec.inverter = LeAdmmInverter{LeAdmmParams::tied(arch.solver, arch.iterations)};
  } else if (arch.inverter == "train_inv") {
    spec.inverter = TrainInvInverter{TrainInvParams::from_operator(op, arch.tik_eps)};
  } else {
    spec.inverter = IdentityInverter{};
  }
  spec.clamp_output = arch.clamp_output;
  if (arch.parameters) {
    const Tensor blob = io::read_array(*arch.parameters);
    checked(arch.name + ".parameters", [&] { load_parameter_blob(spec, blob); });
  }
  checked(arch.name, [&] { spec.validate(op); });
  return spec;
}

Tensor parameter_blob(PipelineSpec& spec) {
  std::vector<double> all;
  for (const ParameterRef& p : parameters(spec)) {
    const auto v = p.values();
    all.insert(all.end(), v.begin(), v.end());
  }
  if (all.empty()) return Tensor({1, 1, 1});
  const int n = static_cast<int>(all.size());
  return Tensor({n, 1, 1}, std::move(all));
}

void load_parameter_blob(PipelineSpec& spec, const Tensor& blob) {
  const auto refs = parameters(spec);
  std::size_t total = 0;
  for (const ParameterRef& p : refs) total += p.values().size();
  const std::size_t stored = total == 0 ? 1 : total;
  if (blob.size() != stored || blob.width() != 1 || blob.channels() != 1) {
    throw ShapeMismatch("parameter blob holds " + std::to_string(blob.size()) +
                        " values, architecture needs " + std::to_string(total));
  }
  std::size_t at = 0;
  for (const ParameterRef& p : refs) {
    for (double& v : p.values()) v = blob[at++];
  }
}

void save_pipeline(const std::filesystem::path& json_path, PipelineSpec& spec,
                   const std::string& name, const Json& checkpoint) {
  std::filesystem::path blob_path = json_path;
  blob_path.replace_extension(".llia");
  io::write_array(blob_path, parameter_blob(spec));
  PipelineArch a = arch_of(spec, name);
  a.parameters = blob_path.filename();
  a.checkpoint = checkpoint;
  write_json(json_path, to_json(a));
}

PipelineSpec load_pipeline(const std::filesystem::path& json_path, const SystemOperator& op) {
  const PipelineArch a =
      pipeline_arch_from_json(read_json(json_path), json_path.filename().string(),
                              json_path.parent_path());
  return build_pipeline(a, op);
}

void MismatchConfig::validate() const {
  if (grid.channels != psf.channels) throw InvalidParams("grid channels must match psf channels");
  if (grid.height < psf.height || grid.width < psf.width) {
    throw InvalidParams("grid must be at least as large as the PSF");
  }
  if (!(epsilon >= 0.0)) throw InvalidParams("epsilon must be >= 0");
  for (double e : epsilon_sweep) {
    if (!(e > 0.0)) throw InvalidParams("epsilon_sweep values must be > 0");
  }
  if (mode != "raw" && mode != "direct_sub") throw InvalidParams("mode must be raw or direct_sub");
  if (n_frames < 1) throw InvalidParams("n_frames must be >= 1");
  if (!(min_abs_otf > 0.0)) throw InvalidParams("min_abs_otf must be > 0");
  noise.validate();
  illumination.validate();
}

MismatchConfig mismatch_config_from_json(const Json& j, const std::string& path) {
  Reader r(j, path);
  MismatchConfig c;
  if (r.has("psf")) std::tie(c.psf_kind, c.psf) = psf_from_json(r.raw("psf"), r.at("psf"));
  r.mark("psf");
  if (r.has("grid")) c.grid = shape_from(r.raw("grid"), r.at("grid"));
  r.mark("grid");
  const auto delta = r.get<std::string>("delta", "random");
  if (delta != "random" && delta != "zero") {
    throw ConfigError(r.at("delta") + ": must be 'random' or 'zero'");
  }
  c.zero_delta = delta == "zero";
  c.epsilon = r.get("epsilon", c.epsilon);
  if (r.has("epsilon_sweep")) {
    c.epsilon_sweep = array_of<double>(r.raw("epsilon_sweep"), r.at("epsilon_sweep"));
  }
  r.mark("epsilon_sweep");
  c.mode = r.get<std::string>("mode", c.mode);
  if (r.has("noise")) c.noise = noise_from_json(r.raw("noise"), r.at("noise"));
  r.mark("noise");
  if (r.has("illumination")) {
    c.illumination = illumination_from_json(r.raw("illumination"), r.at("illumination"));
  }
  r.mark("illumination");
  c.n_frames = r.get("n_frames", c.n_frames);
  c.min_abs_otf = r.get("min_abs_otf", c.min_abs_otf);
  r.finish();
  checked(path, [&] { c.validate(); });
  return c;
}

Json to_json(const MismatchConfig& c) {
  return {{"psf", to_json(c.psf_kind, c.psf)},
          {"grid", shape_json(c.grid)},
          {"delta", c.zero_delta ? "zero" : "random"},
          {"epsilon", c.epsilon},
          {"epsilon_sweep", c.epsilon_sweep},
          {"mode", c.mode},
          {"noise", to_json(c.noise)},
          {"illumination", to_json(c.illumination)},
          {"n_frames", c.n_frames},
          {"min_abs_otf", c.min_abs_otf}};
}

RunConfig run_config_from_json(const Json& j, const std::filesystem::path& base_dir) {
  Reader r(j, "config");
  RunConfig c;
  c.raw = j;
  c.base_dir = base_dir;
  c.seed = r.get<std::uint64_t>("seed", 0);
  if (r.has("dataset")) {
    Json d = r.raw("dataset");
    if (d.is_object() && !d.contains("seed")) d["seed"] = c.seed;
    c.dataset = dataset_config_from_json(d, r.at("dataset"));
  }
  r.mark("dataset");
  if (r.has("dataset_manifest")) {
    c.dataset_manifest = resolve(base_dir, r.require<std::string>("dataset_manifest"));
  }
  r.mark("dataset_manifest");

  auto add_pipeline = [&](const Json& v, const std::string& where) {
    Json arch;
    std::filesystem::path dir = base_dir;
    if (v.is_string()) {
      const auto file = resolve(base_dir, v.get<std::string>());
      try {
        arch = read_json(file);
      } catch (const Error& e) {
        throw ConfigError(where + ": " + e.what());
      }
      dir = file.parent_path();
    } else {
      arch = v;
    }
    if (arch.is_object() && !arch.contains("init_seed")) arch["init_seed"] = c.seed;
    c.pipelines.push_back(pipeline_arch_from_json(arch, where, dir));
  };
  if (r.has("pipeline")) add_pipeline(r.raw("pipeline"), r.at("pipeline"));
  r.mark("pipeline");
  if (r.has("pipelines")) {
    const Json& list = r.raw("pipelines");
    if (!list.is_array()) throw ConfigError(r.at("pipelines") + ": expected an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      add_pipeline(list[i], r.at("pipelines") + "[" + std::to_string(i) + "]");
    }
  }
  r.mark("pipelines");
  if (r.has("train")) {
    Json t = r.raw("train");
    if (t.is_object() && !t.contains("seed")) t["seed"] = c.seed;
    c.train = train_config_from_json(t, r.at("train"));
  }
  r.mark("train");
  if (r.has("mismatch")) c.mismatch = mismatch_config_from_json(r.raw("mismatch"), r.at("mismatch"));
  r.mark("mismatch");
  c.eval_input = r.get<std::string>("eval_input", c.eval_input);
  if (c.eval_input != "measurement" && c.eval_input != "ground_truth") {
    throw ConfigError(r.at("eval_input") + ": must be 'measurement' or 'ground_truth'");
  }
  if (r.has("out")) c.out = resolve(base_dir, r.require<std::string>("out"));
  r.mark("out");
  r.finish();

  std::set<std::string> names;
  for (const PipelineArch& a : c.pipelines) {
    if (!names.insert(a.name).second) {
      throw ConfigError("config.pipelines: duplicate pipeline name '" + a.name + "'");
    }
  }
  if (c.dataset) {
    for (const PipelineArch& a : c.pipelines) a.validate(c.dataset->scene_shape.channels, a.name);
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  Json j;
  try {
    j = read_json(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

}  // namespace lensless::config
