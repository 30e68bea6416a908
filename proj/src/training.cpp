#include "lensless/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <numbers>
#include <numeric>
#include <random>
#include <thread>

namespace lensless {

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw InvalidParams("lr0 must be > 0");
  if (!(warmup_frac > 0.0 && warmup_frac < 1.0)) {
    throw InvalidParams("warmup_frac must be in (0, 1)");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidParams("beta1 and beta2 must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw InvalidParams("eps must be > 0");
  if (!(weight_decay >= 0.0)) throw InvalidParams("weight_decay must be >= 0");
  if (epochs < 1 && steps < 1) throw InvalidParams("epochs or steps must be >= 1");
  if (batch_size < 1) throw InvalidParams("batch_size must be >= 1");
  if (steps < 0) throw InvalidParams("steps must be >= 0");
  if (threads < 0) throw InvalidParams("threads must be >= 0");
}

long TrainConfig::total_steps(std::size_t n_train) const {
  if (steps > 0) return steps;
  const auto b = static_cast<std::size_t>(batch_size);
  return static_cast<long>(epochs) * static_cast<long>((n_train + b - 1) / b);
}

ad::Var loss(const ad::Var& x_hat, const ad::Var& x) { return ad::mse(x_hat, x); }

double loss_value(const Tensor& x_hat, const Tensor& x) {
  return loss(ad::Var(x_hat), ad::Var(x)).value()[0];
}

double lr_schedule(long step, long total_steps, const TrainConfig& cfg) {
  if (total_steps < 1 || step < 0 || step >= total_steps) {
    throw OutOfRange("step " + std::to_string(step) + " outside [0, " +
                     std::to_string(total_steps) + ")");
  }
  const long warm = std::max(1L, static_cast<long>(std::ceil(cfg.warmup_frac * total_steps)));
  if (step < warm) return cfg.lr0 * static_cast<double>(step) / static_cast<double>(warm);
  const long decay = total_steps - 1 - warm;
  if (decay <= 0) return cfg.lr0;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(decay);
  return cfg.lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(std::span<const std::span<double>> params,
                std::span<const std::vector<double>> grads, AdamWState& state, double lr,
                const TrainConfig& cfg) {
  if (params.size() != grads.size()) {
    throw ShapeMismatch(std::to_string(params.size()) + " parameter blocks but " +
                        std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size()) {
      throw ShapeMismatch("block " + std::to_string(i) + " has " +
                          std::to_string(params[i].size()) + " values but " +
                          std::to_string(grads[i].size()) + " gradients");
    }
  }
  if (state.t == 0 && state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeMismatch("optimizer state has other blocks");
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != params[i].size()) throw ShapeMismatch("optimizer state has other blocks");
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      double& p = params[i][j];
      const double g = grads[i][j];
      p -= lr * cfg.weight_decay * p;
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      p -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.eps);
    }
  }
}

RecordGradient record_gradient(PipelineSpec& spec, const SystemOperator& op,
                               const SimRecord& record) {
  ad::Tape tape;
  ad::Binder binder(&tape);
  std::optional<ad::Var> b_hat;
  if (record.b_hat.size() > 0) b_hat = ad::Var(record.b_hat);
  const ad::Var out = run_pipeline_graph(spec, op, ad::Var(record.y), b_hat, binder);
  const ad::Var l = loss(out, ad::Var(record.x));
  tape.finalize();
  RecordGradient rg;
  rg.loss = l.value()[0];
  if (l.recorded()) tape.backward(l);
  for (const ParameterRef& p : parameters(spec)) rg.grads.push_back(p.gradient(binder));
  return rg;
}

double mean_loss(const PipelineSpec& spec, const SystemOperator& op,
                 const std::vector<SimRecord>& records) {
  if (records.empty()) throw EmptyDataset("no records to evaluate");
  double total = 0.0;
  for (const SimRecord& r : records) {
    std::optional<Tensor> b;
    if (r.b_hat.size() > 0) b = r.b_hat;
    total += loss_value(run_pipeline(spec, op, {r.y, b}), r.x);
  }
  return total / static_cast<double>(records.size());
}

namespace {

std::vector<RecordGradient> batch_gradients(PipelineSpec& spec, const SystemOperator& op,
                                            const std::vector<const SimRecord*>& batch,
                                            int threads) {
  std::vector<RecordGradient> out(batch.size());
  if (threads <= 1 || batch.size() <= 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) out[i] = record_gradient(spec, op, *batch[i]);
    return out;
  }
  // Workers only read spec; each writes its own output slots.
  std::vector<std::future<void>> jobs;
  const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(threads), batch.size());
  for (std::size_t w = 0; w < n_workers; ++w) {
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < batch.size(); i += n_workers) {
        out[i] = record_gradient(spec, op, *batch[i]);
      }
    }));
  }
  for (auto& j : jobs) j.get();
  return out;
}

}  // namespace

TrainResult train(const PipelineSpec& initial, const Dataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.train.empty()) throw EmptyDataset("training split is empty");
  PipelineSpec spec = initial;
  spec.validate(dataset.op);
  if (parameters(spec).empty()) throw EmptyParameterSet("pipeline has no learnable parameters");
  const auto& val_set = dataset.test.empty() ? dataset.train : dataset.test;
  const int threads = cfg.threads > 0
                          ? cfg.threads
                          : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  const std::size_t n = dataset.train.size();
  const long total = cfg.total_steps(n);
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);

  TrainResult result{spec, {}, mean_loss(spec, dataset.op, val_set), 0};
  AdamWState state;
  std::vector<std::size_t> order(n);
  std::size_t cursor = n;  // forces a shuffle before the first batch
  long epoch = -1;
  for (long step = 0; step < total; ++step) {
    if (cursor >= n) {
      ++epoch;
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    std::vector<const SimRecord*> batch;
    while (batch.size() < batch_size && cursor < n) batch.push_back(&dataset.train[order[cursor++]]);

    const std::vector<RecordGradient> per_record = batch_gradients(spec, dataset.op, batch, threads);
    const auto refs = parameters(spec);
    std::vector<std::vector<double>> grads(refs.size());
    double batch_loss = 0.0;
    for (std::size_t i = 0; i < refs.size(); ++i) grads[i].assign(refs[i].values().size(), 0.0);
    for (const RecordGradient& rg : per_record) {
      batch_loss += rg.loss;
      for (std::size_t i = 0; i < refs.size(); ++i) {
        for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += rg.grads[i][j];
      }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& g : grads) {
      for (double& v : g) v *= inv;
    }
    std::vector<std::span<double>> blocks;
    for (const ParameterRef& r : refs) blocks.push_back(r.values());

    HistoryRow row{step, lr_schedule(step, total, cfg), batch_loss * inv, std::nullopt};
    adamw_step(blocks, grads, state, row.lr, cfg);

    if (cursor >= n || step + 1 == total) {
      row.val_loss = mean_loss(spec, dataset.op, val_set);
      if (*row.val_loss < result.best_val_loss) {
        result.best_val_loss = *row.val_loss;
        result.best_step = step + 1;
        result.spec = spec;
      }
    }
    result.history.push_back(row);
  }
  return result;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out << "step,lr,train_loss,val_loss\n";
  char buf[128];
  for (const HistoryRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,", r.step, r.lr, r.train_loss);
    out << buf;
    if (r.val_loss) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.val_loss);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace lensless
