#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lensless/training.hpp"
#include "support.hpp"

using namespace lensless;
using testing::random_tensor;

namespace {

Dataset tiny_dataset(std::uint64_t seed) {
  DatasetConfig cfg;
  cfg.n_scenes = 12;
  cfg.scene_shape = {8, 8, 3};
  cfg.psf = {3, 3, 3, 3, 0.7, 3, 1.5, 0.0};
  cfg.train_lamps = {{1, 1, 2, 0.5}, {1, 6, 2, 0.5}};
  cfg.test_lamps = {{6, 1, 2, 0.5}};
  cfg.n_frames = 4;
  cfg.seed = seed;
  return generate_dataset(cfg);
}

PipelineSpec le_admm_spec(int k) {
  PipelineSpec spec;
  spec.background.kind = BackgroundKind::direct_sub;
  spec.inverter = LeAdmmInverter{LeAdmmParams::tied({}, k)};
  return spec;
}

TrainConfig short_run() {
  TrainConfig cfg;
  cfg.lr0 = 5e-2;
  cfg.steps = 20;
  cfg.batch_size = 3;
  cfg.seed = 4;
  cfg.threads = 1;
  return cfg;
}

}  // namespace

TEST_CASE("mse loss values") {
  const Tensor x = random_tensor({4, 5, 3}, 1);
  CHECK(loss_value(x, x) == 0.0);
  const Tensor shifted = x + Tensor(x.shape(), 0.25);
  CHECK(std::abs(loss_value(shifted, x) - 0.0625) < 1e-15);
  CHECK_THROWS_AS(loss_value(x, Tensor({4, 4, 3})), ShapeMismatch);
}

TEST_CASE("mse loss gradient is 2 (x_hat - x) / N") {
  const Tensor xh = random_tensor({3, 4, 2}, 2), x = random_tensor({3, 4, 2}, 3);
  ad::Tape tape;
  const ad::Var v = tape.leaf(xh);
  const ad::Var l = loss(v, ad::Var(x));
  tape.finalize();
  tape.backward(l);
  const Tensor expected = (2.0 / static_cast<double>(x.size())) * (xh - x);
  CHECK(testing::max_abs_diff(tape.grad(v), expected) < 1e-15);
  Tensor xm = xh;
  CHECK(testing::fd_check(xm, tape.grad(v), [&] { return loss_value(xm, x); },
                          testing::sample_coords(xm.size(), 24, 4)) < 1e-6);
}

TEST_CASE("learning-rate schedule") {
  TrainConfig cfg;
  cfg.lr0 = 1e-3;
  const long total = 1002;
  const long warm = 51;
  CHECK(lr_schedule(0, total, cfg) == 0.0);
  CHECK(lr_schedule(warm, total, cfg) == cfg.lr0);
  CHECK(std::abs(lr_schedule(warm - 1, total, cfg) - cfg.lr0 * 50.0 / 51.0) < 1e-18);
  CHECK(lr_schedule(total - 1, total, cfg) < cfg.lr0 * 1e-3);
  // Decay spans steps warm .. total-1; its midpoint is half way.
  const long mid = warm + (total - 1 - warm) / 2;
  REQUIRE((total - 1 - warm) % 2 == 0);
  CHECK(std::abs(lr_schedule(mid, total, cfg) - cfg.lr0 / 2) < 1e-9 * cfg.lr0);
  // Continuity at the boundary: the ramp approaches lr0 and decay starts at it.
  CHECK(std::abs(lr_schedule(warm - 1, total, cfg) - lr_schedule(warm, total, cfg)) <= cfg.lr0 / warm * (1 + 1e-12));
  CHECK(std::abs(lr_schedule(warm + 1, total, cfg) - cfg.lr0) < 1e-5 * cfg.lr0);
  for (long s = warm; s + 1 < total; ++s) CHECK(lr_schedule(s + 1, total, cfg) <= lr_schedule(s, total, cfg));

  CHECK_THROWS_AS(lr_schedule(-1, total, cfg), OutOfRange);
  CHECK_THROWS_AS(lr_schedule(total, total, cfg), OutOfRange);
  CHECK(lr_schedule(1, 2, cfg) == cfg.lr0);
}

TEST_CASE("AdamW step contracts") {
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  std::vector<double> p{0.5, -1.0, 2.0};
  const std::vector<double> p0 = p;
  std::vector<std::span<double>> blocks{p};
  AdamWState state;
  adamw_step(blocks, std::vector<std::vector<double>>{{0.0, 0.0, 0.0}}, state, 1e-2, cfg);
  CHECK(p == p0);

  // First step from zero state moves each entry by lr against its gradient.
  AdamWState s2;
  const std::vector<double> g{3.0, -0.5, 1e-3};
  adamw_step(blocks, std::vector<std::vector<double>>{g}, s2, 1e-2, cfg);
  for (std::size_t i = 0; i < 3; ++i) {
    const double step = p[i] - p0[i];
    CHECK((step < 0) == (g[i] > 0));
    CHECK(std::abs(step + 1e-2 * g[i] / (std::abs(g[i]) + cfg.eps)) < 1e-12);
  }

  // Decoupled decay on zero gradients shrinks by exactly (1 - lr * wd).
  TrainConfig wd;
  wd.weight_decay = 0.1;
  std::vector<double> q{1.0, -4.0};
  std::vector<std::span<double>> qb{q};
  AdamWState s3;
  adamw_step(qb, std::vector<std::vector<double>>{{0.0, 0.0}}, s3, 0.5, wd);
  CHECK(q[0] == 1.0 * (1.0 - 0.5 * 0.1));
  CHECK(q[1] == -4.0 * (1.0 - 0.5 * 0.1));

  CHECK_THROWS_AS(adamw_step(qb, std::vector<std::vector<double>>{{0.0}}, s3, 0.5, wd), ShapeMismatch);
  CHECK_THROWS_AS(adamw_step(qb, std::vector<std::vector<double>>{}, s3, 0.5, wd), ShapeMismatch);
}

TEST_CASE("AdamW minimizes a quadratic bowl") {
  TrainConfig cfg;
  // Adam moves each entry by about lr per step, so start at unit scale.
  const Tensor init = random_tensor({8, 1, 1}, 5);
  std::vector<double> p(init.values().begin(), init.values().end());
  const double start = norm(init);
  std::vector<std::span<double>> blocks{p};
  AdamWState state;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> g(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) g[j] = 2.0 * p[j];
    adamw_step(blocks, std::vector<std::vector<double>>{g}, state, 1e-2, cfg);
  }
  double end = 0.0;
  for (double v : p) end += v * v;
  CHECK(std::sqrt(end) * 100.0 <= start);
}

TEST_CASE("train config validation and step counts") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.lr0 == 1e-4);
  CHECK(cfg.weight_decay == 0.01);
  CHECK(cfg.total_steps(85) == 25 * 22);
  cfg.steps = 7;
  CHECK(cfg.total_steps(85) == 7);
  cfg = {};
  cfg.warmup_frac = 1.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidParams);
  cfg = {};
  cfg.lr0 = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidParams);
  cfg = {};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidParams);
}

TEST_CASE("training preconditions") {
  const Dataset ds = tiny_dataset(1);
  PipelineSpec fixed;
  fixed.inverter = WienerInverter{};
  CHECK_THROWS_AS(train(fixed, ds, short_run()), EmptyParameterSet);
  Dataset empty = ds;
  empty.train.clear();
  CHECK_THROWS_AS(train(le_admm_spec(2), empty, short_run()), EmptyDataset);
}

TEST_CASE("record gradients agree with finite differences of the mean loss") {
  const Dataset ds = tiny_dataset(2);
  PipelineSpec spec = le_admm_spec(2);
  const RecordGradient rg = record_gradient(spec, ds.op, ds.train[0]);
  CHECK(rg.loss == mean_loss(spec, ds.op, {ds.train[0]}));
  auto refs = parameters(spec);
  REQUIRE(rg.grads.size() == refs.size());
  const double h = 1e-5;
  for (std::size_t b = 0; b < refs.size(); ++b) {
    auto v = refs[b].values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + h;
      const double up = mean_loss(spec, ds.op, {ds.train[0]});
      v[i] = saved - h;
      const double down = mean_loss(spec, ds.op, {ds.train[0]});
      v[i] = saved;
      CHECK(testing::rel_err((up - down) / (2 * h), rg.grads[b][i]) < 1e-4);
    }
  }
}

TEST_CASE("training lowers the loss and keeps the best checkpoint") {
  const Dataset ds = tiny_dataset(3);
  const PipelineSpec spec = le_admm_spec(3);
  const double before = mean_loss(spec, ds.op, ds.train);
  const TrainResult r = train(spec, ds, short_run());
  REQUIRE(r.history.size() == 20);
  CHECK(mean_loss(r.spec, ds.op, ds.train) < before);
  CHECK(r.best_val_loss == mean_loss(r.spec, ds.op, ds.test));
  CHECK(r.best_val_loss <= mean_loss(spec, ds.op, ds.test));
  double min_val = mean_loss(spec, ds.op, ds.test);
  for (const HistoryRow& row : r.history) {
    if (row.val_loss) min_val = std::min(min_val, *row.val_loss);
  }
  CHECK(r.best_val_loss == min_val);
  CHECK(r.history.back().val_loss.has_value());
  CHECK(r.history[0].lr == 0.0);
}

TEST_CASE("training is deterministic across runs and thread counts") {
  const Dataset ds = tiny_dataset(5);
  const PipelineSpec spec = le_admm_spec(2);
  TrainConfig cfg = short_run();
  const TrainResult a = train(spec, ds, cfg);
  const TrainResult b = train(spec, ds, cfg);
  cfg.threads = 3;
  const TrainResult c = train(spec, ds, cfg);
  REQUIRE(a.history.size() == b.history.size());
  REQUIRE(a.history.size() == c.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].train_loss == c.history[i].train_loss);
    CHECK(a.history[i].val_loss == c.history[i].val_loss);
  }
  CHECK(a.best_val_loss == c.best_val_loss);

  cfg.seed = 99;
  const TrainResult d = train(spec, ds, cfg);
  bool differs = false;
  for (std::size_t i = 0; i < a.history.size(); ++i) differs |= a.history[i].train_loss != d.history[i].train_loss;
  CHECK(differs);
}

TEST_CASE("history CSV layout") {
  const auto path = std::filesystem::temp_directory_path() / "lensless_test_training" / "history.csv";
  write_history_csv(path, {{0, 0.0, 0.5, std::nullopt}, {1, 1e-3, 0.25, 0.125}});
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == "step,lr,train_loss,val_loss\n0,0,0.5,\n1,0.001,0.25,0.125\n");
}
