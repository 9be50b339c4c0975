#include "psconv/arch.hpp"

#include <cfenv>
#include <cmath>
#include <sstream>

#include "psconv/error.hpp"
#include "psconv/rng.hpp"

namespace psconv {

std::string to_string(Family f) {
  switch (f) {
    case Family::resnet18: return "resnet18";
    case Family::vgg16: return "vgg16";
    case Family::small_cnn: return "small_cnn";
    case Family::mini_resnet: return "mini_resnet";
  }
  return "?";
}

Family parse_family(const std::string& name) {
  if (name == "resnet18") return Family::resnet18;
  if (name == "vgg16") return Family::vgg16;
  if (name == "small_cnn") return Family::small_cnn;
  if (name == "mini_resnet") return Family::mini_resnet;
  throw std::invalid_argument("unknown architecture family '" + name + "'");
}

std::string to_string(OpKind k) {
  switch (k) {
    case OpKind::conv: return "conv";
    case OpKind::batch_norm: return "batch_norm";
    case OpKind::relu: return "relu";
    case OpKind::max_pool: return "max_pool";
    case OpKind::avg_pool: return "avg_pool";
    case OpKind::flatten: return "flatten";
    case OpKind::linear: return "linear";
    case OpKind::add: return "add";
  }
  return "?";
}

std::size_t scaled_width(double width_mult, std::size_t channels) {
  // nearbyint honours the current rounding mode, which defaults to
  // round-half-to-even.
  const double w = std::nearbyint(width_mult * static_cast<double>(channels));
  if (w < 1.0) {
    throw std::invalid_argument("width multiplier " + std::to_string(width_mult) + " leaves zero channels");
  }
  return static_cast<std::size_t>(w);
}

void ArchSpec::validate() const {
  if (!(width_mult > 0.0) || !std::isfinite(width_mult)) throw std::invalid_argument("width_mult must be > 0");
  if (kss < 1 || kss > 9) throw std::invalid_argument("kss must be in [1, 9] for 3x3 kernels");
  if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  if (input_channels < 1) throw std::invalid_argument("input_channels must be >= 1");
  if (input_size < 1) throw std::invalid_argument("input_size must be >= 1");
  int divisor = 1;
  switch (family) {
    case Family::resnet18:
    case Family::vgg16: divisor = 32; break;
    case Family::small_cnn: divisor = 4; break;
    case Family::mini_resnet: divisor = 2; break;
  }
  if (input_size % divisor != 0) {
    throw std::invalid_argument(to_string(family) + " needs input_size divisible by " + std::to_string(divisor));
  }
}

std::string ArchSpec::display_name() const {
  std::string base;
  switch (family) {
    case Family::resnet18: base = "ResNet18"; break;
    case Family::vgg16: base = "VGG16"; break;
    case Family::small_cnn: base = "SmallCNN"; break;
    case Family::mini_resnet: base = "MiniResNet"; break;
  }
  if (width_mult == 0.5) {
    base += "_HC";
  } else if (width_mult != 1.0) {
    std::ostringstream os;
    os << "_W" << width_mult;
    base += os.str();
  }
  return base + "_pSC" + std::to_string(kss);
}

nlohmann::json to_json(const ArchSpec& s) {
  return nlohmann::json{{"family", to_string(s.family)}, {"width_mult", s.width_mult},
                        {"kss", s.kss},                  {"num_classes", s.num_classes},
                        {"input_size", s.input_size},    {"input_channels", s.input_channels},
                        {"base_seed", s.base_seed},      {"masked", s.masked}};
}

ArchSpec arch_from_json(const nlohmann::json& j) {
  ArchSpec s;
  s.family = parse_family(j.at("family").get<std::string>());
  s.width_mult = j.value("width_mult", 1.0);
  s.kss = j.value("kss", 9);
  s.num_classes = j.value("num_classes", 10);
  s.input_size = j.value("input_size", 32);
  s.input_channels = j.value("input_channels", 3);
  s.base_seed = j.value("base_seed", std::uint64_t{0});
  s.masked = j.value("masked", true);
  s.validate();
  return s;
}

namespace {

class PlanBuilder {
 public:
  explicit PlanBuilder(const ArchSpec& spec) {
    plan_.spec = spec;
    values_.push_back({static_cast<std::size_t>(spec.input_channels), static_cast<std::size_t>(spec.input_size),
                       static_cast<std::size_t>(spec.input_size)});
  }

  std::size_t input() const { return 0; }

  std::size_t conv(const std::string& name, std::size_t in, std::size_t out_ch, std::size_t k,
                   std::size_t stride, std::size_t pad, bool sparse) {
    const FeatureShape s = values_.at(in);
    NodeDesc d = node(OpKind::conv, name, in);
    d.in_ch = s.channels;
    d.out_ch = out_ch;
    d.kernel = k;
    d.stride = stride;
    d.padding = pad;
    d.masked = sparse && plan_.spec.masked;
    d.mask_seed = derive_seed(plan_.spec.base_seed, plan_.nodes.size());
    if (s.height + 2 * pad < k || s.width + 2 * pad < k) throw ShapeError(name + ": kernel exceeds input");
    d.out_shape = {out_ch, (s.height + 2 * pad - k) / stride + 1, (s.width + 2 * pad - k) / stride + 1};
    return emit(std::move(d));
  }

  std::size_t bn(const std::string& name, std::size_t in) {
    NodeDesc d = node(OpKind::batch_norm, name, in);
    d.in_ch = d.out_ch = d.in_shape.channels;
    d.out_shape = d.in_shape;
    return emit(std::move(d));
  }

  std::size_t relu(const std::string& name, std::size_t in) {
    NodeDesc d = node(OpKind::relu, name, in);
    d.out_shape = d.in_shape;
    return emit(std::move(d));
  }

  std::size_t max_pool(const std::string& name, std::size_t in) {
    NodeDesc d = node(OpKind::max_pool, name, in);
    if (d.in_shape.height % 2 || d.in_shape.width % 2) throw ShapeError(name + ": odd input to 2x2 max pool");
    d.kernel = d.stride = 2;
    d.out_shape = {d.in_shape.channels, d.in_shape.height / 2, d.in_shape.width / 2};
    return emit(std::move(d));
  }

  std::size_t avg_pool(const std::string& name, std::size_t in, std::size_t k) {
    NodeDesc d = node(OpKind::avg_pool, name, in);
    if (d.in_shape.height < k || d.in_shape.width < k) throw ShapeError(name + ": pool window exceeds input");
    d.kernel = d.stride = k;
    d.out_shape = {d.in_shape.channels, (d.in_shape.height - k) / k + 1, (d.in_shape.width - k) / k + 1};
    return emit(std::move(d));
  }

  std::size_t flatten(const std::string& name, std::size_t in) {
    NodeDesc d = node(OpKind::flatten, name, in);
    d.out_shape = {d.in_shape.numel(), 1, 1};
    return emit(std::move(d));
  }

  std::size_t linear(const std::string& name, std::size_t in, std::size_t out) {
    NodeDesc d = node(OpKind::linear, name, in);
    if (d.in_shape.height != 1 || d.in_shape.width != 1) throw ShapeError(name + ": linear needs flat input");
    d.in_ch = d.in_shape.channels;
    d.out_ch = out;
    d.out_shape = {out, 1, 1};
    return emit(std::move(d));
  }

  std::size_t add(const std::string& name, std::size_t a, std::size_t b) {
    NodeDesc d = node(OpKind::add, name, a);
    d.inputs.push_back(b);
    if (values_.at(a) != values_.at(b)) throw ShapeError(name + ": residual add joins unequal shapes");
    d.out_shape = d.in_shape;
    return emit(std::move(d));
  }

  FeatureShape shape(std::size_t value) const { return values_.at(value); }

  ArchPlan finish() && { return std::move(plan_); }

 private:
  NodeDesc node(OpKind kind, const std::string& name, std::size_t in) {
    NodeDesc d{};
    d.kind = kind;
    d.name = name;
    d.inputs = {in};
    d.in_shape = values_.at(in);
    return d;
  }

  std::size_t emit(NodeDesc d) {
    values_.push_back(d.out_shape);
    plan_.nodes.push_back(std::move(d));
    return plan_.nodes.size();
  }

  ArchPlan plan_;
  std::vector<FeatureShape> values_;
};

// conv3x3-bn-relu-conv3x3-bn (+ skip) -> relu
std::size_t basic_block(PlanBuilder& b, const std::string& name, std::size_t in, std::size_t out_ch,
                        std::size_t stride) {
  const std::size_t in_ch = b.shape(in).channels;
  std::size_t v = b.conv(name + ".conv1", in, out_ch, 3, stride, 1, true);
  v = b.bn(name + ".bn1", v);
  v = b.relu(name + ".relu1", v);
  v = b.conv(name + ".conv2", v, out_ch, 3, 1, 1, true);
  v = b.bn(name + ".bn2", v);
  std::size_t skip = in;
  if (stride != 1 || in_ch != out_ch) {
    skip = b.conv(name + ".downsample.conv", in, out_ch, 1, stride, 0, false);
    skip = b.bn(name + ".downsample.bn", skip);
  }
  v = b.add(name + ".add", v, skip);
  return b.relu(name + ".relu2", v);
}

std::size_t head(PlanBuilder& b, std::size_t v, std::size_t pool, std::size_t classes) {
  v = b.avg_pool("avgpool", v, pool);
  v = b.flatten("flatten", v);
  return b.linear("fc", v, classes);
}

ArchPlan plan_resnet18(const ArchSpec& spec) {
  PlanBuilder b(spec);
  const auto w = [&](std::size_t c) { return scaled_width(spec.width_mult, c); };
  std::size_t v = b.conv("conv1", b.input(), w(64), 3, 1, 1, true);
  v = b.bn("bn1", v);
  v = b.relu("relu1", v);
  const std::size_t stage_ch[] = {64, 128, 256, 512};
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t blk = 0; blk < 2; ++blk) {
      const std::size_t stride = (s > 0 && blk == 0) ? 2 : 1;
      v = basic_block(b, "layer" + std::to_string(s + 1) + "." + std::to_string(blk), v, w(stage_ch[s]), stride);
    }
  }
  // Fixed 4x4 window: 32x32 inputs pool to 1x1, 64x64 inputs to 2x2.
  v = head(b, v, 4, static_cast<std::size_t>(spec.num_classes));
  return std::move(b).finish();
}

ArchPlan plan_vgg16(const ArchSpec& spec) {
  PlanBuilder b(spec);
  const auto w = [&](std::size_t c) { return scaled_width(spec.width_mult, c); };
  const std::size_t plan[] = {64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512};
  std::size_t v = b.input();
  for (std::size_t i = 0; i < 13; ++i) {
    const std::string name = "features." + std::to_string(i + 1);
    v = b.conv(name + ".conv", v, w(plan[i]), 3, 1, 1, true);
    v = b.bn(name + ".bn", v);
    v = b.relu(name + ".relu", v);
    const std::size_t n = i + 1;
    if (n == 2 || n == 4 || n == 7 || n == 10 || n == 13) v = b.max_pool(name + ".pool", v);
  }
  v = b.avg_pool("avgpool", v, 1);
  v = b.flatten("flatten", v);
  v = b.linear("classifier.fc1", v, 4096);
  v = b.relu("classifier.relu1", v);
  v = b.linear("classifier.fc2", v, 4096);
  v = b.relu("classifier.relu2", v);
  b.linear("classifier.fc3", v, static_cast<std::size_t>(spec.num_classes));
  return std::move(b).finish();
}

ArchPlan plan_small_cnn(const ArchSpec& spec) {
  PlanBuilder b(spec);
  const auto w = [&](std::size_t c) { return scaled_width(spec.width_mult, c); };
  const std::size_t channels[] = {w(16), w(16), w(32), w(32)};
  std::size_t v = b.input();
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string name = "conv" + std::to_string(i + 1);
    v = b.conv(name, v, channels[i], 3, 1, 1, true);
    v = b.bn("bn" + std::to_string(i + 1), v);
    v = b.relu("relu" + std::to_string(i + 1), v);
    if (i == 1 || i == 3) v = b.max_pool("pool" + std::to_string(i / 2 + 1), v);
  }
  v = head(b, v, static_cast<std::size_t>(spec.input_size) / 4, static_cast<std::size_t>(spec.num_classes));
  return std::move(b).finish();
}

ArchPlan plan_mini_resnet(const ArchSpec& spec) {
  PlanBuilder b(spec);
  const auto w = [&](std::size_t c) { return scaled_width(spec.width_mult, c); };
  std::size_t v = b.conv("conv1", b.input(), w(4), 3, 1, 1, true);
  v = b.bn("bn1", v);
  v = b.relu("relu1", v);
  v = basic_block(b, "layer1.0", v, w(4), 1);
  v = basic_block(b, "layer2.0", v, w(8), 2);
  v = head(b, v, static_cast<std::size_t>(spec.input_size) / 2, static_cast<std::size_t>(spec.num_classes));
  return std::move(b).finish();
}

}  // namespace

ArchPlan plan_architecture(const ArchSpec& spec) {
  spec.validate();
  switch (spec.family) {
    case Family::resnet18: return plan_resnet18(spec);
    case Family::vgg16: return plan_vgg16(spec);
    case Family::small_cnn: return plan_small_cnn(spec);
    case Family::mini_resnet: return plan_mini_resnet(spec);
  }
  throw std::invalid_argument("unknown architecture family");
}

}  // namespace psconv
