#include <set>

#include "doctest.h"
#include "psconv/error.hpp"
#include "psconv/train.hpp"
#include "test_util.hpp"

using namespace psconv;

namespace {

ArchSpec small(int kss, int classes = 2, int size = 8) {
  ArchSpec s;
  s.family = Family::small_cnn;
  s.kss = kss;
  s.num_classes = classes;
  s.input_size = size;
  s.base_seed = 9;
  return s;
}

TrainConfig quick(int batch = 32) {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = batch;
  c.lr0 = 0.05;
  c.seed = 4;
  c.check_finite = true;
  return c;
}

struct Single {
  Parameter<float> p{Shape{1}};
  std::vector<ParamRef<float>> refs() { return {{"w", &p, nullptr}}; }
};

}  // namespace

TEST_CASE("default hyperparameters") {
  const TrainConfig c;
  CHECK(c.epochs == 60);
  CHECK(c.lr0 == 0.1);
  CHECK(c.decay_factor == 0.2);
  CHECK(c.milestones == std::vector<int>{40, 55});
  CHECK(c.momentum == 0.9);
  CHECK(c.weight_decay == 0.0005);
  CHECK(default_batch_size(32) == 128);
  CHECK(default_batch_size(64) == 100);
}

TEST_CASE("config validation and json") {
  TrainConfig c;
  c.milestones = {10, 5};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = quick();
  c.mask_grads = true;
  const auto back = train_config_from_json(to_json(c));
  CHECK(back.epochs == c.epochs);
  CHECK(back.lr0 == c.lr0);
  CHECK(back.batch_size == c.batch_size);
  CHECK(back.seed == c.seed);
  CHECK(back.mask_grads);
}

TEST_CASE("step learning-rate schedule") {
  const TrainConfig c;
  CHECK(lr_at(c, 0) == doctest::Approx(0.1));
  CHECK(lr_at(c, 39) == doctest::Approx(0.1));
  CHECK(lr_at(c, 40) == doctest::Approx(0.02));
  CHECK(lr_at(c, 54) == doctest::Approx(0.02));
  CHECK(lr_at(c, 55) == doctest::Approx(0.004));
  std::set<double> distinct;
  for (int e = 0; e < 60; ++e) {
    distinct.insert(lr_at(c, e));
    if (e > 0) CHECK(lr_at(c, e) <= lr_at(c, e - 1));
  }
  CHECK(distinct.size() == 3);
}

TEST_CASE("sgd fixed point and vanilla step") {
  TrainConfig c;
  c.weight_decay = 0.0;
  Single s;
  s.p.value[0] = 1.0f;
  auto refs = s.refs();
  auto state = OptimizerState::for_params(refs);
  sgd_step(refs, state, 0.1, c);
  CHECK(s.p.value[0] == 1.0f);

  c.momentum = 0.0;
  s.p.grad[0] = 1.0f;
  sgd_step(refs, state, 0.1, c);
  CHECK(s.p.value[0] == doctest::Approx(0.9));
}

TEST_CASE("sgd momentum and weight decay trace") {
  TrainConfig c;  // momentum 0.9, wd 5e-4
  Single s;
  s.p.value[0] = 2.0f;
  auto refs = s.refs();
  auto state = OptimizerState::for_params(refs);
  double w = 2.0, v = 0.0;
  for (int t = 0; t < 4; ++t) {
    s.p.grad[0] = 0.25f * float(t + 1);
    const double g = 0.25 * (t + 1) + 5e-4 * w;
    v = 0.9 * v + g;
    w -= 0.1 * v;
    sgd_step(refs, state, 0.1, c);
    CHECK(s.p.value[0] == doctest::Approx(w).epsilon(1e-6));
    CHECK(state.momentum[0][0] == doctest::Approx(v).epsilon(1e-6));
  }
  CHECK(state.step == 4);
}

TEST_CASE("masked positions stay zero while momentum keeps the gradient") {
  std::vector<std::uint8_t> bits(9, 0);
  bits[4] = 1;
  const KernelSupportMask mask(1, 1, 3, 1, 0, bits);
  Parameter<float> p(Shape{1, 1, 3, 3});
  p.value[4] = 1.0f;
  std::vector<ParamRef<float>> refs{{"w", &p, &mask}};
  auto state = OptimizerState::for_params(refs);
  const TrainConfig c;
  p.grad.fill(1.0f);
  for (int step = 0; step < 2; ++step) {
    sgd_step(refs, state, 0.1, c);
    for (std::size_t i = 0; i < 9; ++i)
      if (i != 4) CHECK(p.value[i] == 0.0f);
    CHECK(p.value[4] != 1.0f);
    CHECK(state.momentum[0][0] != 0.0f);
  }

  TrainConfig ablation;
  ablation.mask_grads = true;
  auto fresh = OptimizerState::for_params(refs);
  sgd_step(refs, fresh, 0.1, ablation);
  CHECK(fresh.momentum[0][0] == 0.0f);
  CHECK(fresh.momentum[0][4] != 0.0f);
}

TEST_CASE("non-finite gradients are rejected when checking") {
  Single s;
  auto refs = s.refs();
  auto state = OptimizerState::for_params(refs);
  s.p.grad[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig c;
  c.check_finite = true;
  CHECK_THROWS_AS(sgd_step(refs, state, 0.1, c), DataError);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  Model<float> m(small(4));
  const auto data = synth_dataset(32, 2, 8, 1);
  auto config = quick(32);
  config.lr0 = 0.0;
  auto state = OptimizerState::for_params(m.params());
  std::vector<Tensor> before;
  for (const auto& p : m.params()) before.push_back(p.param->value);
  train_epoch(m, data, config, state, 0);
  const auto after = m.params();
  for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i].param->value == before[i]);
}

TEST_CASE("sparsity holds after every epoch") {
  Model<float> m(small(4));
  const auto data = synth_dataset(100, 2, 8, 2);
  const auto config = quick(16);
  auto state = OptimizerState::for_params(m.params());
  for (int e = 0; e < config.epochs; ++e) {
    train_epoch(m, data, config, state, e);
    for (const auto& p : m.params()) {
      if (!p.mask) continue;
      for (std::size_t i = 0; i < p.mask->size(); ++i)
        if (!p.mask->bits()[i]) REQUIRE(p.param->value[i] == 0.0f);
    }
  }
}

TEST_CASE("training is reproducible and learns separable data") {
  const auto data = synth_dataset(200, 2, 8, 3);
  const auto config = quick(20);
  auto run = [&] {
    Model<float> m(small(4));
    auto state = OptimizerState::for_params(m.params());
    std::vector<EpochStats> stats;
    for (int e = 0; e < config.epochs; ++e) stats.push_back(train_epoch(m, data, config, state, e));
    return std::pair{stats, evaluate(m, data)};
  };
  const auto [a, acc_a] = run();
  const auto [b, acc_b] = run();
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].loss == b[i].loss);
    CHECK(a[i].accuracy == b[i].accuracy);
  }
  CHECK(acc_a == acc_b);
  CHECK(a.back().loss < a.front().loss);
  CHECK(acc_a > 0.9);
}

TEST_CASE("evaluate") {
  Model<float> m(small(4));
  // Bias the classifier so class 0 always wins.
  for (auto& p : m.params()) {
    if (p.name == "fc.bias") {
      p.param->value[0] = 1e6f;
    }
  }
  Dataset zeros = synth_dataset(10, 2, 8, 5);
  for (auto& l : zeros.labels) l = 0;
  CHECK(evaluate(m, zeros) == 1.0);
  CHECK_THROWS_AS(evaluate(m, Dataset{}), DataError);
}

TEST_CASE("metrics rows") {
  const MetricsRow r{3, 0.02, 0.5, 0.75, 0.7, 1.25};
  CHECK(to_csv(r) == "3,0.02,0.500000,0.750000,0.700000,1.250");
  CHECK(std::string(kMetricsHeader) == "epoch,lr,train_loss,train_acc,val_acc,seconds");
}
