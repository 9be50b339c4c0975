#pragma once

#include <string>
#include <variant>
#include <vector>

#include "psconv/arch.hpp"
#include "psconv/layers.hpp"

namespace psconv {

template <typename T>
struct ParamRef {
  std::string name;
  Parameter<T>* param;
  const KernelSupportMask* mask;  // null for unmasked tensors
};

template <typename T>
struct BufferRef {
  std::string name;
  BasicTensor<T>* tensor;
};

template <typename T>
struct ConvRef {
  std::string name;
  Conv2d<T>* layer;
};

// Instantiated layer graph for an ArchSpec. Weights are He-normal
// initialized from ArchSpec::base_seed, then masked; masks are generated
// per conv node from that node's derived seed.
template <typename T>
class Model {
 public:
  explicit Model(const ArchSpec& spec);

  const ArchSpec& spec() const { return plan_.spec; }
  const ArchPlan& plan() const { return plan_; }

  // batch: [N, input_channels, input_size, input_size] -> logits [N, classes].
  // Train mode keeps the caches needed by backward().
  BasicTensor<T> forward(const BasicTensor<T>& batch, Mode mode);
  // Writes every parameter's grad. Requires a preceding train-mode forward.
  void backward(const BasicTensor<T>& grad_logits);

  // Stable order: graph order, then weight/bias or gamma/beta within a node.
  std::vector<ParamRef<T>> params();
  std::vector<BufferRef<T>> buffers();
  std::vector<ConvRef<T>> convs();

  // Zero every weight outside its kernel support.
  void apply_masks();
  void zero_grad();
  void set_support_aware(bool enabled);
  // Dense element count over all parameters.
  std::size_t parameter_count();

  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  using Layer = std::variant<std::monostate, Conv2d<T>, BatchNorm2d<T>, Linear<T>>;
  using Cache = std::variant<std::monostate, ConvCache<T>, BnCache<T>, LinearCache<T>, ReluCache<T>, MaxPoolCache,
                             AvgPoolCache, Shape>;

  ArchPlan plan_;
  std::vector<Layer> layers_;
  std::vector<Cache> caches_;
  std::vector<std::size_t> last_use_;
  bool has_cache_ = false;
  std::vector<std::string> warnings_;
};

// Convenience: collect_params(model) == model.params().
template <typename T>
std::vector<ParamRef<T>> collect_params(Model<T>& model) {
  return model.params();
}

}  // namespace psconv
