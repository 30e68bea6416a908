// Command-line front end: simulate-dataset, reconstruct, train, evaluate,
// analyze-mismatch. Exit codes: 0 ok, 2 configuration error, 3 runtime error.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lensless/analysis.hpp"
#include "lensless/config.hpp"
#include "lensless/io.hpp"
#include "lensless/training.hpp"

#ifndef LENSLESS_VERSION
#define LENSLESS_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace lensless;
using config::Json;
using config::PipelineArch;
using config::RunConfig;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::string split = "test";
  std::vector<std::string> pipelines;
};

struct Context {
  std::string command;
  RunConfig cfg;
  fs::path out;
  Options opt;
  Json outputs = Json::array();
};

Context prepare(const std::string& command, const Options& opt) {
  Context ctx{command, config::load_run_config(opt.config), {}, opt};
  RunConfig& c = ctx.cfg;
  // --seed replaces the master seed and every component seed derived from it.
  if (opt.seed) {
    c.seed = *opt.seed;
    if (c.dataset) c.dataset->seed = c.seed;
    if (c.train) c.train->seed = c.seed;
    for (PipelineArch& a : c.pipelines) a.init_seed = c.seed;
  }
  if (opt.out) {
    ctx.out = *opt.out;
  } else if (c.out) {
    ctx.out = *c.out;
  } else {
    throw ConfigError("config.out: required unless --out is given");
  }
  if (opt.split != "train" && opt.split != "test" && opt.split != "all") {
    throw ConfigError("--split: must be train, test or all");
  }
  return ctx;
}

// Configured pipelines by name, or saved pipeline files by path.
std::vector<PipelineArch> selected_pipelines(const Context& ctx) {
  if (ctx.opt.pipelines.empty()) {
    if (ctx.cfg.pipelines.empty()) throw ConfigError("config.pipelines: no pipeline configured");
    return ctx.cfg.pipelines;
  }
  std::vector<PipelineArch> out;
  for (const std::string& p : ctx.opt.pipelines) {
    bool found = false;
    for (const PipelineArch& a : ctx.cfg.pipelines) {
      if (a.name == p) {
        out.push_back(a);
        found = true;
      }
    }
    if (found) continue;
    if (!fs::is_regular_file(p)) {
      throw ConfigError("--pipeline: '" + p + "' is neither a configured name nor a file");
    }
    Json j;
    try {
      j = config::read_json(p);
    } catch (const IoError& e) {
      throw ConfigError(std::string("--pipeline: ") + e.what());
    }
    out.push_back(config::pipeline_arch_from_json(j, p, fs::path(p).parent_path()));
  }
  return out;
}

int scene_channels(const RunConfig& c) {
  if (c.dataset_manifest) {
    const Json m = config::read_json(*c.dataset_manifest);
    return m.at("config").at("scene_shape").at(2).get<int>();
  }
  if (c.dataset) return c.dataset->scene_shape.channels;
  throw ConfigError("config.dataset: required (or config.dataset_manifest)");
}

Dataset load_data(const RunConfig& c) {
  if (c.dataset_manifest) return load_dataset(*c.dataset_manifest);
  return generate_dataset(*c.dataset);
}

std::vector<SimRecord> split_records(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "test") return ds.test;
  std::vector<SimRecord> all = ds.train;
  all.insert(all.end(), ds.test.begin(), ds.test.end());
  return all;
}

EvalInput eval_input(const RunConfig& c) {
  return c.eval_input == "ground_truth" ? EvalInput::ground_truth : EvalInput::measurement;
}

// Provenance: same config, overrides and version give the same file.
void write_run_record(const Context& ctx) {
  Json overrides = Json::object();
  if (ctx.opt.seed) overrides["seed"] = *ctx.opt.seed;
  if (ctx.opt.out) overrides["out"] = *ctx.opt.out;
  overrides["split"] = ctx.opt.split;
  overrides["pipeline"] = ctx.opt.pipelines;

  Json seeds = {{"master", ctx.cfg.seed}};
  if (ctx.cfg.dataset) seeds["dataset"] = ctx.cfg.dataset->seed;
  if (ctx.cfg.train) seeds["train"] = ctx.cfg.train->seed;
  Json init = Json::object();
  for (const PipelineArch& a : ctx.cfg.pipelines) init[a.name] = a.init_seed;
  seeds["pipeline_init"] = init;
  if (ctx.cfg.mismatch) seeds["mismatch"] = ctx.cfg.seed;

  const std::string config_text = ctx.cfg.raw.dump();
  const Json record = {{"command", ctx.command},
                       {"version", LENSLESS_VERSION},
                       {"config_hash", config::fnv1a_hex(config_text + overrides.dump())},
                       {"config", ctx.cfg.raw},
                       {"overrides", overrides},
                       {"seeds", seeds},
                       {"outputs", ctx.outputs}};
  config::write_json(ctx.out / "run.json", record);
}

void simulate_dataset(Context& ctx) {
  if (!ctx.cfg.dataset) throw ConfigError("config.dataset: required by simulate-dataset");
  const DatasetManifest m = build_dataset(*ctx.cfg.dataset, ctx.out);
  ctx.outputs.push_back(fs::relative(m.path, ctx.out).string());
  std::printf("wrote %zu train + %zu test records to %s\n", m.n_train, m.n_test, m.path.c_str());
}

void reconstruct(Context& ctx) {
  const auto archs = selected_pipelines(ctx);
  const int channels = scene_channels(ctx.cfg);
  for (const PipelineArch& a : archs) a.validate(channels, a.name);
  const Dataset ds = load_data(ctx.cfg);
  const auto records = split_records(ds, ctx.opt.split);
  const EvalInput input = eval_input(ctx.cfg);
  for (const PipelineArch& a : archs) {
    const PipelineSpec spec = config::build_pipeline(a, ds.op);
    const fs::path dir = ctx.out / a.name;
    fs::create_directories(dir);
    std::ofstream csv(dir / "metrics.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot create " + (dir / "metrics.csv").string());
    csv << "record,psnr,ssim,mse\n";
    for (std::size_t i = 0; i < records.size(); ++i) {
      const SimRecord& r = records[i];
      std::optional<Tensor> b;
      if (r.b_hat.size() > 0) b = r.b_hat;
      const Tensor x_hat =
          run_pipeline(spec, ds.op, {input == EvalInput::ground_truth ? r.x : r.y, b});
      char stem[64];
      std::snprintf(stem, sizeof stem, "%s_%04zu", ctx.opt.split.c_str(), i);
      io::write_array(dir / (std::string(stem) + ".llia"), x_hat);
      io::write_png(dir / (std::string(stem) + ".png"), x_hat);
      const ImageMetrics m = image_metrics(x_hat, r.x);
      char line[160];
      std::snprintf(line, sizeof line, "%s,%.17g,%.17g,%.17g\n", stem, m.psnr, m.ssim, m.mse);
      csv << line;
    }
    if (!csv) throw IoError("write failed: " + (dir / "metrics.csv").string());
    ctx.outputs.push_back((fs::path(a.name) / "metrics.csv").string());
    std::printf("%s: %zu reconstructions in %s\n", a.name.c_str(), records.size(), dir.c_str());
  }
}

void train_command(Context& ctx) {
  if (!ctx.cfg.train) throw ConfigError("config.train: required by train");
  const auto archs = selected_pipelines(ctx);
  const int channels = scene_channels(ctx.cfg);
  for (const PipelineArch& a : archs) a.validate(channels, a.name);
  const Dataset ds = load_data(ctx.cfg);
  for (const PipelineArch& a : archs) {
    const PipelineSpec init = config::build_pipeline(a, ds.op);
    TrainResult r = train(init, ds, *ctx.cfg.train);
    const fs::path dir = ctx.out / a.name;
    write_history_csv(dir / "history.csv", r.history);
    // The blob is float32; record the validation loss of what is stored.
    config::save_pipeline(dir / "checkpoint.json", r.spec, a.name);
    const PipelineSpec stored = config::load_pipeline(dir / "checkpoint.json", ds.op);
    const double val = mean_loss(stored, ds.op, ds.test);
    const Json ckpt = {{"best_step", r.best_step},
                       {"best_val_loss_float64", r.best_val_loss},
                       {"val_loss", val},
                       {"total_steps", r.history.size()},
                       {"train", config::to_json(*ctx.cfg.train)}};
    config::save_pipeline(dir / "checkpoint.json", r.spec, a.name, ckpt);
    for (const char* f : {"history.csv", "checkpoint.json", "checkpoint.llia"}) {
      ctx.outputs.push_back((fs::path(a.name) / f).string());
    }
    std::printf("%s: best step %ld, val_loss %.9g\n", a.name.c_str(), r.best_step, val);
  }
}

void evaluate_command(Context& ctx) {
  const auto archs = selected_pipelines(ctx);
  const int channels = scene_channels(ctx.cfg);
  for (const PipelineArch& a : archs) a.validate(channels, a.name);
  const Dataset ds = load_data(ctx.cfg);
  std::vector<std::pair<std::string, PipelineSpec>> specs;
  for (const PipelineArch& a : archs) specs.emplace_back(a.name, config::build_pipeline(a, ds.op));
  const auto rows = evaluate(specs, ds.op, split_records(ds, ctx.opt.split), eval_input(ctx.cfg));
  write_metrics_csv(ctx.out / "metrics.csv", rows);
  ctx.outputs.push_back("metrics.csv");
  std::printf("%-24s %8s %10s %10s %12s\n", "pipeline", "records", "psnr", "ssim", "mse");
  for (const EvalRow& r : rows) {
    std::printf("%-24s %8zu %10.4f %10.4f %12.6g\n", r.name.c_str(), r.n_records, r.psnr, r.ssim,
                r.mse);
  }
}

void analyze_mismatch(Context& ctx) {
  if (!ctx.cfg.mismatch) throw ConfigError("config.mismatch: required by analyze-mismatch");
  const config::MismatchConfig& m = *ctx.cfg.mismatch;
  const DecompositionMode mode =
      m.mode == "raw" ? DecompositionMode::raw : DecompositionMode::direct_sub;
  const MismatchCase c = make_mismatch_case(m, ctx.cfg.seed);
  const SystemOperator op_hat = perturb_operator(c.op_true, {c.delta_psf, m.epsilon});
  const MismatchReport r = mismatch_report(c.op_true, op_hat, c.record.x, c.record.n_a,
                                           c.record.x_b, mode, c.record.n_b, m.min_abs_otf);
  Json report = to_json(r);
  report["epsilon"] = m.epsilon;
  report["delta"] = m.zero_delta ? "zero" : "random";
  const NoiseNormComparison nn = noise_norm_compare(c.record);
  report["noise_norms"] = {{"with_estimate", nn.with_estimate},
                           {"without_estimate", nn.without_estimate},
                           {"ordered", nn.ordered}};

  std::vector<SweepPoint> sweep;
  if (!m.zero_delta) sweep = mismatch_sweep(c, m.epsilon_sweep, mode, m.min_abs_otf);
  if (sweep.size() >= 2) report["order_slope"] = order_fit_slope(sweep);
  config::write_json(ctx.out / "report.json", report);

  std::ofstream csv(ctx.out / "sweep.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot create " + (ctx.out / "sweep.csv").string());
  csv << "epsilon,residual_norm,identity_error\n";
  for (const SweepPoint& p : sweep) {
    char line[128];
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g\n", p.epsilon, p.residual_norm,
                  p.identity_error);
    csv << line;
  }
  if (!csv) throw IoError("write failed: " + (ctx.out / "sweep.csv").string());
  ctx.outputs.push_back("report.json");
  ctx.outputs.push_back("sweep.csv");
  const auto n = r.norms();
  std::printf("mismatch %.6g  noise_amp %.6g  external %.6g  residual %.6g\n", n.model_mismatch,
              n.noise_amp, n.external, n.residual);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lensless imaging under external illumination"};
  app.set_version_flag("--version", LENSLESS_VERSION);
  app.require_subcommand(1);

  Options opt;
  std::uint64_t seed = 0;
  std::string out;
  using Command = void (*)(Context&);
  const std::map<std::string, std::pair<Command, std::string>> commands = {
      {"simulate-dataset", {simulate_dataset, "Generate a dataset and its manifest"}},
      {"reconstruct", {reconstruct, "Write reconstructions and per-image metrics"}},
      {"train", {train_command, "Train pipelines; write checkpoints and history"}},
      {"evaluate", {evaluate_command, "Write the metrics table"}},
      {"analyze-mismatch", {analyze_mismatch, "Mismatch decomposition report and sweep"}},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, entry] : commands) {
    CLI::App* sub = app.add_subcommand(name, entry.second);
    sub->add_option("--config", opt.config, "JSON run configuration")->required();
    sub->add_option("--seed", seed, "master seed; overrides every component seed");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--split", opt.split, "train, test or all")->capture_default_str();
    sub->add_option("--pipeline", opt.pipelines, "configured pipeline name or saved pipeline file");
    subs[name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  for (const auto& [name, sub] : subs) {
    if (!sub->parsed()) continue;
    if (sub->count("--seed")) opt.seed = seed;
    if (sub->count("--out")) opt.out = out;
    try {
      Context ctx = prepare(name, opt);
      commands.at(name).first(ctx);
      write_run_record(ctx);
      return 0;
    } catch (const ConfigError& e) {
      std::fprintf(stderr, "config error: %s\n", e.what());
      return 2;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return 3;
    }
  }
  return 2;
}
