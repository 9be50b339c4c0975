#include "psconv/model.hpp"

#include <cmath>
#include <stdexcept>

#include "psconv/rng.hpp"

namespace psconv {

namespace {

template <typename T>
void he_normal(BasicTensor<T>& t, std::size_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<T>(rng.normal() * stddev);
}

template <typename T>
void accumulate(BasicTensor<T>& slot, BasicTensor<T>&& grad) {
  if (slot.empty()) {
    slot = std::move(grad);
    return;
  }
  if (slot.shape() != grad.shape()) throw ShapeError("gradient shape mismatch at junction");
  for (std::size_t i = 0; i < slot.numel(); ++i) slot[i] += grad[i];
}

}  // namespace

template <typename T>
Model<T>::Model(const ArchSpec& spec) : plan_(plan_architecture(spec)) {
  const auto& nodes = plan_.nodes;
  layers_.resize(nodes.size());
  caches_.resize(nodes.size());
  last_use_.assign(nodes.size() + 1, 0);

  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const NodeDesc& d = nodes[i];
    for (std::size_t in : d.inputs) last_use_[in] = i;
    // Init stream is independent of the mask stream so masked and unmasked
    // builds share identical dense weights.
    Rng rng(derive_seed(~spec.base_seed, i));
    switch (d.kind) {
      case OpKind::conv: {
        Conv2d<T> conv(d.in_ch, d.out_ch, d.kernel, d.stride, d.padding);
        he_normal(conv.weight.value, d.in_ch * d.kernel * d.kernel, rng);
        if (d.masked) {
          KernelSupportMask mask = generate_mask(d.kernel, static_cast<std::size_t>(spec.kss), d.in_ch, d.out_ch,
                                                 d.mask_seed);
          const CoverageReport report = check_coverage(mask);
          if (!report.feasible) {
            warnings_.push_back(d.name + ": in_ch*kss = " + std::to_string(d.in_ch * mask.kss()) + " < " +
                                std::to_string(report.positions) + ", each filter covers only " +
                                std::to_string(report.min_covered()) + " positions");
          }
          apply_mask_inplace(conv.weight.value, mask);
          conv.attach_mask(std::move(mask));
        }
        layers_[i] = std::move(conv);
        break;
      }
      case OpKind::batch_norm: layers_[i] = BatchNorm2d<T>(d.in_ch); break;
      case OpKind::linear: {
        Linear<T> fc(d.in_ch, d.out_ch);
        he_normal(fc.weight.value, d.in_ch, rng);
        layers_[i] = std::move(fc);
        break;
      }
      default: break;
    }
  }
}

template <typename T>
BasicTensor<T> Model<T>::forward(const BasicTensor<T>& batch, Mode mode) {
  const auto& spec = plan_.spec;
  const auto want_c = static_cast<std::size_t>(spec.input_channels);
  const auto want_s = static_cast<std::size_t>(spec.input_size);
  if (batch.rank() != 4 || batch.dim(1) != want_c || batch.dim(2) != want_s || batch.dim(3) != want_s) {
    throw ShapeError("model expects [N," + std::to_string(want_c) + "," + std::to_string(want_s) + "," +
                     std::to_string(want_s) + "] input, got " + batch.shape().to_string());
  }
  const auto& nodes = plan_.nodes;
  const bool train = mode == Mode::train;
  std::vector<BasicTensor<T>> values(nodes.size() + 1);
  const auto input = [&](std::size_t node, std::size_t slot) -> const BasicTensor<T>& {
    const std::size_t v = nodes[node].inputs[slot];
    return v == 0 ? batch : values[v];
  };

  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const NodeDesc& d = nodes[i];
    const BasicTensor<T>& x = input(i, 0);
    BasicTensor<T> y;
    Cache cache;
    try {
      switch (d.kind) {
        case OpKind::conv: {
          auto [out, c] = conv2d_forward(std::get<Conv2d<T>>(layers_[i]), x);
          y = std::move(out);
          if (train) cache = std::move(c);
          break;
        }
        case OpKind::batch_norm: {
          auto [out, c] = bn_forward(std::get<BatchNorm2d<T>>(layers_[i]), x, mode);
          y = std::move(out);
          if (train) cache = std::move(c);
          break;
        }
        case OpKind::relu: {
          auto [out, c] = relu_forward(x);
          y = std::move(out);
          if (train) cache = std::move(c);
          break;
        }
        case OpKind::max_pool: {
          auto [out, c] = maxpool2d_forward(x);
          y = std::move(out);
          if (train) cache = std::move(c);
          break;
        }
        case OpKind::avg_pool: {
          auto [out, c] = avgpool2d_forward(x, d.kernel);
          y = std::move(out);
          if (train) cache = std::move(c);
          break;
        }
        case OpKind::flatten:
          y = x.reshaped(Shape{x.dim(0), x.numel() / x.dim(0)});
          if (train) cache = x.shape();
          break;
        case OpKind::linear: {
          auto [out, c] = linear_forward(std::get<Linear<T>>(layers_[i]), x);
          y = std::move(out);
          if (train) cache = std::move(c);
          break;
        }
        case OpKind::add: y = add(x, input(i, 1)); break;
      }
    } catch (const ShapeError& e) {
      throw ShapeError(d.name + ": " + e.what());
    }
    caches_[i] = std::move(cache);
    values[i + 1] = std::move(y);
    for (std::size_t in : d.inputs) {
      if (in != 0 && last_use_[in] == i) values[in] = BasicTensor<T>();
    }
  }
  has_cache_ = train;
  return std::move(values.back());
}

template <typename T>
void Model<T>::backward(const BasicTensor<T>& grad_logits) {
  if (!has_cache_) throw std::logic_error("Model::backward called without a train-mode forward");
  const auto& nodes = plan_.nodes;
  std::vector<BasicTensor<T>> grads(nodes.size() + 1);
  grads.back() = grad_logits;

  for (std::size_t i = nodes.size(); i-- > 0;) {
    const NodeDesc& d = nodes[i];
    BasicTensor<T> gy = std::move(grads[i + 1]);
    if (gy.empty()) throw std::logic_error(d.name + ": no gradient reached this node");
    BasicTensor<T> gx;
    switch (d.kind) {
      case OpKind::conv: {
        auto& layer = std::get<Conv2d<T>>(layers_[i]);
        auto g = conv2d_backward(layer, std::get<ConvCache<T>>(caches_[i]), gy);
        layer.weight.grad = std::move(g.weight);
        if (layer.bias) layer.bias->grad = std::move(*g.bias);
        gx = std::move(g.input);
        break;
      }
      case OpKind::batch_norm: {
        auto& layer = std::get<BatchNorm2d<T>>(layers_[i]);
        auto g = bn_backward(layer, std::get<BnCache<T>>(caches_[i]), gy);
        layer.gamma.grad = std::move(g.gamma);
        layer.beta.grad = std::move(g.beta);
        gx = std::move(g.input);
        break;
      }
      case OpKind::relu: gx = relu_backward(std::get<ReluCache<T>>(caches_[i]), gy); break;
      case OpKind::max_pool: gx = maxpool2d_backward(std::get<MaxPoolCache>(caches_[i]), gy); break;
      case OpKind::avg_pool: gx = avgpool2d_backward(std::get<AvgPoolCache>(caches_[i]), gy); break;
      case OpKind::flatten: gx = gy.reshaped(std::get<Shape>(caches_[i])); break;
      case OpKind::linear: {
        auto& layer = std::get<Linear<T>>(layers_[i]);
        auto g = linear_backward(layer, std::get<LinearCache<T>>(caches_[i]), gy);
        layer.weight.grad = std::move(g.weight);
        layer.bias.grad = std::move(g.bias);
        gx = std::move(g.input);
        break;
      }
      case OpKind::add:
        accumulate(grads[d.inputs[1]], BasicTensor<T>(gy));
        gx = std::move(gy);
        break;
    }
    accumulate(grads[d.inputs[0]], std::move(gx));
  }
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::params() {
  std::vector<ParamRef<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string& name = plan_.nodes[i].name;
    if (auto* conv = std::get_if<Conv2d<T>>(&layers_[i])) {
      out.push_back({name + ".weight", &conv->weight, conv->mask ? &*conv->mask : nullptr});
      if (conv->bias) out.push_back({name + ".bias", &*conv->bias, nullptr});
    } else if (auto* bn = std::get_if<BatchNorm2d<T>>(&layers_[i])) {
      out.push_back({name + ".gamma", &bn->gamma, nullptr});
      out.push_back({name + ".beta", &bn->beta, nullptr});
    } else if (auto* fc = std::get_if<Linear<T>>(&layers_[i])) {
      out.push_back({name + ".weight", &fc->weight, nullptr});
      out.push_back({name + ".bias", &fc->bias, nullptr});
    }
  }
  return out;
}

template <typename T>
std::vector<BufferRef<T>> Model<T>::buffers() {
  std::vector<BufferRef<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (auto* bn = std::get_if<BatchNorm2d<T>>(&layers_[i])) {
      out.push_back({plan_.nodes[i].name + ".running_mean", &bn->running_mean});
      out.push_back({plan_.nodes[i].name + ".running_var", &bn->running_var});
    }
  }
  return out;
}

template <typename T>
std::vector<ConvRef<T>> Model<T>::convs() {
  std::vector<ConvRef<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (auto* conv = std::get_if<Conv2d<T>>(&layers_[i])) out.push_back({plan_.nodes[i].name, conv});
  }
  return out;
}

template <typename T>
void Model<T>::apply_masks() {
  for (auto& c : convs()) {
    if (c.layer->mask) apply_mask_inplace(c.layer->weight.value, *c.layer->mask);
  }
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : params()) p.param->grad.fill(T{0});
}

template <typename T>
void Model<T>::set_support_aware(bool enabled) {
  for (auto& c : convs()) c.layer->support_aware = enabled;
}

template <typename T>
std::size_t Model<T>::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : params()) n += p.param->value.numel();
  return n;
}

template class Model<float>;
template class Model<double>;

}  // namespace psconv
