#include "lensless/pipeline.hpp"

#include <cmath>
#include <random>

namespace lensless {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_net(const TinyCnn& net, int in, int out, const char* stage) {
  net.validate();
  if (net.in_channels() != in || net.out_channels() != out) {
    throw ShapeMismatch(std::string(stage) + " expects " + std::to_string(in) + " -> " +
                        std::to_string(out) + " channels, network is " +
                        std::to_string(net.in_channels()) + " -> " +
                        std::to_string(net.out_channels()));
  }
}

void add_net_params(TinyCnn& net, const std::string& prefix, std::vector<ParameterRef>& out) {
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    out.push_back({prefix + ".w" + std::to_string(l), &net.weights[l], nullptr});
    out.push_back({prefix + ".b" + std::to_string(l), &net.biases[l], nullptr});
  }
}

}  // namespace

TinyCnn TinyCnn::make(std::vector<int> widths, std::uint64_t seed, double slope) {
  if (widths.size() < 2) throw InvalidParams("TinyCnn needs at least one layer");
  for (int w : widths) {
    if (w < 1) throw InvalidParams("TinyCnn channel widths must be >= 1");
  }
  TinyCnn net;
  net.widths = std::move(widths);
  net.slope = slope;
  std::mt19937_64 rng(seed);
  for (int l = 0; l < net.layers(); ++l) {
    const int cin = net.widths[static_cast<std::size_t>(l)];
    const int cout = net.widths[static_cast<std::size_t>(l) + 1];
    Tensor w({cout, cin * 9, 1});
    if (l + 1 < net.layers()) {
      const double bound = std::sqrt(6.0 / (9.0 * cin));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (double& v : w.values()) v = dist(rng);
    }
    net.weights.push_back(std::move(w));
    net.biases.emplace_back(Shape{cout, 1, 1});
  }
  return net;
}

std::size_t TinyCnn::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& w : weights) n += w.size();
  for (const Tensor& b : biases) n += b.size();
  return n;
}

void TinyCnn::validate() const {
  if (widths.size() < 2) throw InvalidParams("TinyCnn needs at least one layer");
  const auto layer_count = static_cast<std::size_t>(layers());
  if (weights.size() != layer_count || biases.size() != layer_count) {
    throw InvalidParams("TinyCnn declares " + std::to_string(layer_count) + " layers but stores " +
                        std::to_string(weights.size()));
  }
  for (std::size_t l = 0; l < layer_count; ++l) {
    const Shape ws{widths[l + 1], widths[l] * 9, 1};
    const Shape bs{widths[l + 1], 1, 1};
    if (!(weights[l].shape() == ws) || !(biases[l].shape() == bs)) {
      throw InvalidParams("TinyCnn layer " + std::to_string(l) + " has shape " +
                          lensless::to_string(weights[l].shape()) + ", expected " +
                          lensless::to_string(ws));
    }
    if (!all_finite(weights[l]) || !all_finite(biases[l])) {
      throw InvalidParams("TinyCnn layer " + std::to_string(l) + " has non-finite weights");
    }
  }
}

ad::Var tiny_cnn_forward(const TinyCnn& net, const ad::Var& input, ad::Binder& binder) {
  if (input.shape().channels != net.in_channels()) {
    throw ShapeMismatch("TinyCnn expects " + std::to_string(net.in_channels()) +
                        " input channels, got " + to_string(input.shape()));
  }
  ad::Var h = input;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    h = ad::conv3x3(h, binder.bind(net.weights[l]), binder.bind(net.biases[l]));
    if (l + 1 < net.weights.size()) h = ad::leaky_relu(h, net.slope);
  }
  if (!net.has_skip()) return h;
  const ad::Var skip = net.in_channels() == net.out_channels()
                           ? input
                           : ad::slice(input, 0, net.out_channels());
  return ad::add(skip, h);
}

void PipelineSpec::validate(const SystemOperator& op) const {
  const int c = op.channels();
  int stage = c;
  switch (background.kind) {
    case BackgroundKind::learned_sub:
      if (!background.net) throw InvalidParams("learned_sub requires a background network");
      check_net(*background.net, c, c, "learned_sub network");
      break;
    case BackgroundKind::concatenate:
      stage = 2 * c;
      break;
    default:
      if (background.net) throw InvalidParams("background network only valid for learned_sub");
  }
  if (pre) {
    check_net(*pre, stage, c, "pre-processor");
  } else if (stage != c) {
    throw InvalidParams("concatenate needs a pre-processor mapping " + std::to_string(stage) +
                        " -> " + std::to_string(c) + " channels");
  }
  std::visit(Overloaded{
                 [](const WienerInverter& w) {
                   if (!(w.tik_eps > 0.0)) throw InvalidParams("wiener tik_eps must be > 0");
                 },
                 [](const AdmmInverter& a) { a.cfg.validate(); },
                 [](const LeAdmmInverter& l) {
                   const auto& p = l.params;
                   if (p.iterations() < 1 || p.mu1.width() != 1 || p.mu1.channels() != 1) {
                     throw InvalidParams("LeADMM parameters must be (K,1,1) with K >= 1");
                   }
                   for (const Tensor* t : {&p.mu2, &p.mu3, &p.tau}) {
                     if (!(t->shape() == p.mu1.shape())) {
                       throw ShapeMismatch("LeADMM parameter vectors differ in length");
                     }
                   }
                 },
                 [&op](const TrainInvInverter& t) {
                   require_same_shape(t.params.filter.shape(), op.padded_shape(),
                                      "TrainInv filter");
                 },
                 [](const IdentityInverter&) {},
             },
             inverter);
  if (post) check_net(*post, c, c, "post-processor");
}

ad::Var apply_background_mode(const ad::Var& y, const std::optional<ad::Var>& b_hat,
                              const BackgroundMode& mode, ad::Binder& binder) {
  if (mode.kind == BackgroundKind::none) return y;
  if (!b_hat) throw MissingBackground(std::string("mode ") + to_string(mode.kind));
  require_same_shape(y.shape(), b_hat->shape(), "background estimate");
  switch (mode.kind) {
    case BackgroundKind::direct_sub:
      return ad::sub(y, *b_hat);
    case BackgroundKind::learned_sub:
      if (!mode.net) throw InvalidParams("learned_sub requires a background network");
      return ad::sub(y, tiny_cnn_forward(*mode.net, *b_hat, binder));
    case BackgroundKind::concatenate:
      return ad::concat(y, *b_hat);
    default:
      return y;
  }
}

Tensor apply_background_mode(const Tensor& y, const std::optional<Tensor>& b_hat,
                             const BackgroundMode& mode) {
  ad::Binder constants;
  std::optional<ad::Var> b;
  if (b_hat) b = ad::Var(*b_hat);
  return apply_background_mode(ad::Var(y), b, mode, constants).value();
}

ad::Var run_pipeline_graph(const PipelineSpec& spec, const SystemOperator& op,
                           const ad::Var& y, const std::optional<ad::Var>& b_hat,
                           ad::Binder& binder) {
  require_same_shape(y.shape(), op.sensor_shape(), "pipeline measurement");
  ad::Var h = apply_background_mode(y, b_hat, spec.background, binder);
  if (spec.pre) h = tiny_cnn_forward(*spec.pre, h, binder);
  h = std::visit(
      Overloaded{
          [&](const WienerInverter& w) {
            // Wiener is TrainInv with its filter frozen at initialization.
            const TrainInvParams frozen = TrainInvParams::from_operator(op, w.tik_eps);
            ad::Binder constants;
            return train_inv_forward(op, frozen, h, constants);
          },
          [&](const AdmmInverter& a) { return admm_graph(op, h, a.cfg); },
          [&](const LeAdmmInverter& l) { return unrolled_admm_forward(op, h, l.params, binder); },
          [&](const TrainInvInverter& t) { return train_inv_forward(op, t.params, h, binder); },
          [&](const IdentityInverter&) { return h; },
      },
      spec.inverter);
  if (spec.post) h = tiny_cnn_forward(*spec.post, h, binder);
  if (spec.clamp_output) h = ad::clamp(h, 0.0, 1.0);
  return h;
}

Tensor run_pipeline(const PipelineSpec& spec, const SystemOperator& op, const Measurement& m) {
  ad::Binder constants;
  std::optional<ad::Var> b;
  if (m.b_hat) b = ad::Var(*m.b_hat);
  return run_pipeline_graph(spec, op, ad::Var(m.y), b, constants).value();
}

std::span<double> ParameterRef::values() const {
  if (real) return real->values();
  auto c = complex->values();
  return {reinterpret_cast<double*>(c.data()), 2 * c.size()};
}

std::vector<double> ParameterRef::gradient(const ad::Binder& binder) const {
  if (real) {
    const Tensor g = binder.grad(*real);
    return {g.values().begin(), g.values().end()};
  }
  const Spectrum g = binder.grad(*complex);
  std::vector<double> out;
  out.reserve(2 * g.size());
  for (const Complex& v : g.values()) {
    out.push_back(v.real());
    out.push_back(v.imag());
  }
  return out;
}

std::vector<ParameterRef> parameters(PipelineSpec& spec) {
  std::vector<ParameterRef> out;
  if (spec.background.kind == BackgroundKind::learned_sub && spec.background.net) {
    add_net_params(*spec.background.net, "background", out);
  }
  if (spec.pre) add_net_params(*spec.pre, "pre", out);
  if (auto* l = std::get_if<LeAdmmInverter>(&spec.inverter)) {
    out.push_back({"le_admm.mu1", &l->params.mu1, nullptr});
    out.push_back({"le_admm.mu2", &l->params.mu2, nullptr});
    out.push_back({"le_admm.mu3", &l->params.mu3, nullptr});
    out.push_back({"le_admm.tau", &l->params.tau, nullptr});
  } else if (auto* t = std::get_if<TrainInvInverter>(&spec.inverter)) {
    out.push_back({"train_inv.filter", nullptr, &t->params.filter});
  }
  if (spec.post) add_net_params(*spec.post, "post", out);
  return out;
}

std::size_t parameter_count(const PipelineSpec& spec) {
  PipelineSpec copy = spec;
  std::size_t n = 0;
  for (const ParameterRef& p : parameters(copy)) n += p.values().size();
  return n;
}

const char* to_string(BackgroundKind kind) {
  switch (kind) {
    case BackgroundKind::none:
      return "none";
    case BackgroundKind::direct_sub:
      return "direct_sub";
    case BackgroundKind::learned_sub:
      return "learned_sub";
    case BackgroundKind::concatenate:
      return "concatenate";
  }
  return "none";
}

BackgroundKind background_kind_from_string(const std::string& s) {
  if (s == "none") return BackgroundKind::none;
  if (s == "direct_sub") return BackgroundKind::direct_sub;
  if (s == "learned_sub") return BackgroundKind::learned_sub;
  if (s == "concatenate") return BackgroundKind::concatenate;
  throw InvalidParams("unknown background mode '" + s + "'");
}

std::string inverter_name(const Inverter& inv) {
  return std::visit(Overloaded{
                        [](const WienerInverter&) { return std::string("wiener"); },
                        [](const AdmmInverter&) { return std::string("admm"); },
                        [](const LeAdmmInverter&) { return std::string("le_admm"); },
                        [](const TrainInvInverter&) { return std::string("train_inv"); },
                        [](const IdentityInverter&) { return std::string("identity"); },
                    },
                    inv);
}

}  // namespace lensless
