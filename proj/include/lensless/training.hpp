#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "lensless/autodiff.hpp"
#include "lensless/pipeline.hpp"
#include "lensless/simulate.hpp"

namespace lensless {

struct TrainConfig {
  double lr0 = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double warmup_frac = 0.05;
  int epochs = 25;
  int batch_size = 4;
  // When positive, overrides epochs: training stops after exactly this many
  // optimizer steps, cycling through reshuffled epochs as needed.
  long steps = 0;
  std::uint64_t seed = 0;
  // Worker threads for per-record forward/backward; 0 picks the hardware count.
  int threads = 0;

  void validate() const;
  long total_steps(std::size_t n_train) const;
};

// Mean squared error, the differentiable training loss.
ad::Var loss(const ad::Var& x_hat, const ad::Var& x);
double loss_value(const Tensor& x_hat, const Tensor& x);

// Linear warm-up over ceil(warmup_frac * total) steps, then half-cosine decay
// reaching zero at the last step. Throws OutOfRange outside [0, total).
double lr_schedule(long step, long total_steps, const TrainConfig& cfg);

struct AdamWState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long t = 0;
};

// One decoupled-weight-decay Adam step over parameter blocks.
void adamw_step(std::span<const std::span<double>> params,
                std::span<const std::vector<double>> grads, AdamWState& state, double lr,
                const TrainConfig& cfg);

// Loss and gradients (one vector per parameters(spec) entry) for one record.
struct RecordGradient {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;
};
RecordGradient record_gradient(PipelineSpec& spec, const SystemOperator& op,
                               const SimRecord& record);

double mean_loss(const PipelineSpec& spec, const SystemOperator& op,
                 const std::vector<SimRecord>& records);

struct HistoryRow {
  long step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct TrainResult {
  PipelineSpec spec;  // best by validation loss
  std::vector<HistoryRow> history;
  double best_val_loss = 0.0;
  long best_step = 0;
};

// Trains every learnable parameter of `spec` on dataset.train, validating on
// dataset.test after each epoch and at the end. Throws EmptyDataset or
// EmptyParameterSet.
TrainResult train(const PipelineSpec& spec, const Dataset& dataset, const TrainConfig& cfg);

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& rows);

}  // namespace lensless
