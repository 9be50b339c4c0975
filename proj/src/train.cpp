#include "psconv/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "psconv/rng.hpp"

namespace psconv {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(lr0 > 0.0) || !(decay_factor > 0.0)) throw std::invalid_argument("learning rate and decay must be > 0");
  if (momentum < 0.0 || weight_decay < 0.0) throw std::invalid_argument("momentum and weight decay must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] < 0 || (i > 0 && milestones[i] <= milestones[i - 1])) {
      throw std::invalid_argument("milestones must be strictly increasing");
    }
  }
}

int default_batch_size(int input_size) { return input_size >= 64 ? 100 : 128; }

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},         {"lr0", c.lr0},
          {"decay_factor", c.decay_factor}, {"milestones", c.milestones},
          {"momentum", c.momentum},     {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size}, {"seed", c.seed},
          {"deterministic", c.deterministic}, {"mask_grads", c.mask_grads}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.lr0 = j.value("lr0", c.lr0);
  c.decay_factor = j.value("decay_factor", c.decay_factor);
  c.milestones = j.value("milestones", c.milestones);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.deterministic = j.value("deterministic", c.deterministic);
  c.mask_grads = j.value("mask_grads", c.mask_grads);
  return c;
}

double lr_at(const TrainConfig& config, int epoch) {
  const auto passed = std::count_if(config.milestones.begin(), config.milestones.end(),
                                    [epoch](int m) { return m <= epoch; });
  return config.lr0 * std::pow(config.decay_factor, static_cast<double>(passed));
}

OptimizerState OptimizerState::for_params(const std::vector<ParamRef<float>>& params) {
  OptimizerState s;
  for (const auto& p : params) s.momentum.emplace_back(p.param->value.shape());
  return s;
}

void sgd_step(const std::vector<ParamRef<float>>& params, OptimizerState& state, double lr, const TrainConfig& config) {
  if (state.momentum.size() != params.size()) throw ShapeError("optimizer state does not match parameter list");
  const float rate = static_cast<float>(lr);
  const float mu = static_cast<float>(config.momentum);
  const float wd = static_cast<float>(config.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<float>& p = *params[i].param;
    Tensor& v = state.momentum[i];
    if (v.shape() != p.value.shape() || p.grad.shape() != p.value.shape()) {
      throw ShapeError(params[i].name + ": optimizer buffer shape mismatch");
    }
    if (config.check_finite && !all_finite(p.grad)) throw DataError(params[i].name + ": non-finite gradient");
    const KernelSupportMask* mask = config.disable_masking ? nullptr : params[i].mask;
    const std::uint8_t* support = mask ? mask->bits().data() : nullptr;
    float* w = p.value.data();
    const float* g = p.grad.data();
    float* buf = v.data();
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      float grad = g[j];
      if (config.mask_grads && support && !support[j]) grad = 0.0f;
      grad += wd * w[j];
      buf[j] = mu * buf[j] + grad;
      w[j] -= rate * buf[j];
    }
    if (mask) apply_mask_inplace(p.value, *mask);
  }
  ++state.step;
}

EpochStats train_epoch(Model<float>& model, const Dataset& data, const TrainConfig& config, OptimizerState& state,
                       int epoch) {
  if (data.size() == 0) throw DataError("training split is empty");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch) + 1));
  rng.shuffle(std::span(order));

  const auto params = model.params();
  const double lr = lr_at(config, epoch);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<int> labels;
  for (std::size_t start = 0; start < order.size(); start += batch) {
    const std::size_t count = std::min(batch, order.size() - start);
    const Tensor x = data.gather(std::span(order).subspan(start, count), labels);
    const Tensor logits = model.forward(x, Mode::train);
    const auto loss = softmax_cross_entropy(logits, labels);
    if (config.check_finite && !std::isfinite(loss.loss)) throw DataError("non-finite training loss");
    model.backward(loss.grad_logits);
    sgd_step(params, state, lr, config);
    loss_sum += static_cast<double>(loss.loss) * static_cast<double>(count);
    const auto pred = argmax_rows(logits);
    for (std::size_t i = 0; i < count; ++i) correct += pred[i] == static_cast<std::size_t>(labels[i]);
  }
  return {loss_sum / static_cast<double>(data.size()),
          static_cast<double>(correct) / static_cast<double>(data.size())};
}

double evaluate(Model<float>& model, const Dataset& data, int batch_size) {
  if (data.size() == 0) throw DataError("evaluation split is empty");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::size_t correct = 0;
  std::vector<int> labels;
  const auto batch = static_cast<std::size_t>(std::max(batch_size, 1));
  for (std::size_t start = 0; start < idx.size(); start += batch) {
    const std::size_t count = std::min(batch, idx.size() - start);
    const Tensor x = data.gather(std::span(idx).subspan(start, count), labels);
    const auto pred = argmax_rows(model.forward(x, Mode::eval));
    for (std::size_t i = 0; i < count; ++i) correct += pred[i] == static_cast<std::size_t>(labels[i]);
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::string to_csv(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.6g,%.6f,%.6f,%.6f,%.3f", r.epoch, r.lr, r.train_loss, r.train_acc, r.val_acc,
                r.seconds);
  return buf;
}

}  // namespace psconv
