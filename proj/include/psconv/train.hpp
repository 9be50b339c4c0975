#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "psconv/data.hpp"
#include "psconv/model.hpp"

namespace psconv {

struct TrainConfig {
  int epochs = 60;
  double lr0 = 0.1;
  double decay_factor = 0.2;
  std::vector<int> milestones{40, 55};
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int batch_size = 128;
  std::uint64_t seed = 0;
  bool deterministic = false;
  // Also zero gradient entries outside the kernel support before the
  // momentum update (ablation; off reproduces weight-only masking).
  bool mask_grads = false;
  // Reject NaN/Inf gradients. On by default in debug builds.
#ifdef NDEBUG
  bool check_finite = false;
#else
  bool check_finite = true;
#endif
  // Skip re-zeroing after the update; used to compare against the dense path.
  bool disable_masking = false;

  void validate() const;
};

// 128 for 32x32 inputs, 100 for 64x64.
int default_batch_size(int input_size);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// lr0 * decay^(#milestones <= epoch), epochs 0-indexed.
double lr_at(const TrainConfig& config, int epoch);

struct OptimizerState {
  std::vector<Tensor> momentum;  // one buffer per collected parameter
  std::int64_t step = 0;

  static OptimizerState for_params(const std::vector<ParamRef<float>>& params);
};

// g = grad + wd*w; v = momentum*v + g; w -= lr*v; then masked weights are
// reset to zero. Momentum buffers are left unmasked.
void sgd_step(const std::vector<ParamRef<float>>& params, OptimizerState& state, double lr, const TrainConfig& config);

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Shuffles with a seed derived from (config.seed, epoch); the final partial
// batch is trained on.
EpochStats train_epoch(Model<float>& model, const Dataset& data, const TrainConfig& config, OptimizerState& state,
                       int epoch);

// Top-1 accuracy in eval mode.
double evaluate(Model<float>& model, const Dataset& data, int batch_size = 256);

struct MetricsRow {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double seconds = 0.0;
};

inline constexpr const char* kMetricsHeader = "epoch,lr,train_loss,train_acc,val_acc,seconds";
std::string to_csv(const MetricsRow& row);

}  // namespace psconv
