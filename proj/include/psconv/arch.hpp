#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace psconv {

// resnet18 and vgg16 are the reference architectures. small_cnn (four
// masked 3x3 convs) and mini_resnet (stem + two basic blocks) are compact
// variants for tests and quick experiments.
enum class Family { resnet18, vgg16, small_cnn, mini_resnet };

std::string to_string(Family f);
Family parse_family(const std::string& name);

struct ArchSpec {
  Family family = Family::resnet18;
  double width_mult = 1.0;
  int kss = 9;
  int num_classes = 10;
  int input_size = 32;
  int input_channels = 3;
  std::uint64_t base_seed = 0;
  // false builds the plain dense network with no masks attached at all.
  bool masked = true;

  void validate() const;
  // "<basename>[_HC]_pSC<kss>", e.g. ResNet18_HC_pSC4.
  std::string display_name() const;
};

nlohmann::json to_json(const ArchSpec& spec);
ArchSpec arch_from_json(const nlohmann::json& j);

enum class OpKind { conv, batch_norm, relu, max_pool, avg_pool, flatten, linear, add };

std::string to_string(OpKind k);

// Activation shape without the batch dimension. Flattened tensors have h=w=1.
struct FeatureShape {
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t numel() const { return channels * height * width; }
  friend bool operator==(const FeatureShape&, const FeatureShape&) = default;
};

// One node of the layer graph. Value 0 is the network input; node i
// produces value i + 1.
struct NodeDesc {
  OpKind kind;
  std::string name;
  std::vector<std::size_t> inputs;
  FeatureShape in_shape, out_shape;
  // conv / pool / linear parameters
  std::size_t in_ch = 0, out_ch = 0, kernel = 0, stride = 1, padding = 0;
  bool masked = false;
  std::uint64_t mask_seed = 0;
};

struct ArchPlan {
  ArchSpec spec;
  std::vector<NodeDesc> nodes;

  std::size_t output_value() const { return nodes.size(); }
};

// Shape-checked graph for a spec; shared by the model builder and the cost
// analyzer.
ArchPlan plan_architecture(const ArchSpec& spec);

// round-half-to-even(width_mult * channels); throws if the result is zero.
std::size_t scaled_width(double width_mult, std::size_t channels);

}  // namespace psconv
