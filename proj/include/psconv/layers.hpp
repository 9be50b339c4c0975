#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "psconv/kernels.hpp"
#include "psconv/mask.hpp"
#include "psconv/tensor.hpp"

namespace psconv {

enum class Mode { train, eval };

template <typename T>
struct Parameter {
  BasicTensor<T> value;
  BasicTensor<T> grad;

  explicit Parameter(Shape shape, T fill = T{0}) : value(shape, fill), grad(shape) {}
};

// Output side for a k-window with the given stride and padding.
std::size_t conv_output_size(std::size_t input, std::size_t kernel, std::size_t stride,
                             std::size_t padding);

// ---------------------------------------------------------------------------
// Convolution. Weights are OIHW. When a mask is attached the weights are
// expected to already be zero outside the support; forward runs the dense
// kernel over them unless support_aware is set.

template <typename T>
struct Conv2d {
  std::size_t in_ch, out_ch, kernel, stride, padding;
  Parameter<T> weight;
  std::optional<Parameter<T>> bias;
  std::optional<KernelSupportMask> mask;
  bool support_aware = false;

  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
         std::size_t padding, bool with_bias = false);

  kernels::ConvGeometry geometry(std::size_t in_h, std::size_t in_w) const;
  void attach_mask(KernelSupportMask m);
};

template <typename T>
struct ConvCache {
  BasicTensor<T> input;
};

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;  // dense; masking is the optimizer's job
  std::optional<BasicTensor<T>> bias;
};

template <typename T>
std::pair<BasicTensor<T>, ConvCache<T>> conv2d_forward(const Conv2d<T>& layer, const BasicTensor<T>& x);
template <typename T>
ConvGrads<T> conv2d_backward(const Conv2d<T>& layer, const ConvCache<T>& cache,
                             const BasicTensor<T>& grad_y);

// ---------------------------------------------------------------------------
// Batch normalization over (N, H, W) per channel. Normalization uses the
// biased batch variance; the running variance tracks the unbiased one.

template <typename T>
struct BatchNorm2d {
  std::size_t channels;
  T eps = T(1e-5);
  T momentum = T(0.1);
  Parameter<T> gamma;
  Parameter<T> beta;
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;

  explicit BatchNorm2d(std::size_t channels);
};

template <typename T>
struct BnCache {
  BasicTensor<T> xhat;
  std::vector<T> inv_std;
  Mode mode = Mode::train;
};

template <typename T>
struct BnGrads {
  BasicTensor<T> input, gamma, beta;
};

// Train mode updates the layer's running statistics.
template <typename T>
std::pair<BasicTensor<T>, BnCache<T>> bn_forward(BatchNorm2d<T>& layer, const BasicTensor<T>& x, Mode mode);
template <typename T>
BnGrads<T> bn_backward(const BatchNorm2d<T>& layer, const BnCache<T>& cache, const BasicTensor<T>& grad_y);

// ---------------------------------------------------------------------------
// Fully connected: y = x W^T + b, W is [out, in].

template <typename T>
struct Linear {
  std::size_t in_features, out_features;
  Parameter<T> weight;
  Parameter<T> bias;

  Linear(std::size_t in_features, std::size_t out_features);
};

template <typename T>
struct LinearCache {
  BasicTensor<T> input;
};

template <typename T>
struct LinearGrads {
  BasicTensor<T> input, weight, bias;
};

template <typename T>
std::pair<BasicTensor<T>, LinearCache<T>> linear_forward(const Linear<T>& layer, const BasicTensor<T>& x);
template <typename T>
LinearGrads<T> linear_backward(const Linear<T>& layer, const LinearCache<T>& cache,
                               const BasicTensor<T>& grad_y);

// ---------------------------------------------------------------------------
// Stateless ops.

template <typename T>
struct ReluCache {
  BasicTensor<T> output;
};
template <typename T>
std::pair<BasicTensor<T>, ReluCache<T>> relu_forward(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> relu_backward(const ReluCache<T>& cache, const BasicTensor<T>& grad_y);

// 2x2 window, stride 2. Ties resolve to the first element in row-major order.
struct MaxPoolCache {
  Shape input_shape;
  std::vector<std::size_t> argmax;  // flat input index per output element
};
template <typename T>
std::pair<BasicTensor<T>, MaxPoolCache> maxpool2d_forward(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> maxpool2d_backward(const MaxPoolCache& cache, const BasicTensor<T>& grad_y);

// kxk window, stride k, no padding.
struct AvgPoolCache {
  Shape input_shape;
  std::size_t kernel = 1;
};
template <typename T>
std::pair<BasicTensor<T>, AvgPoolCache> avgpool2d_forward(const BasicTensor<T>& x, std::size_t kernel);
template <typename T>
BasicTensor<T> avgpool2d_backward(const AvgPoolCache& cache, const BasicTensor<T>& grad_y);

template <typename T>
struct LossResult {
  T loss;
  BasicTensor<T> grad_logits;
};

// Mean cross-entropy of softmax(logits) over the batch; grad = (p - onehot)/N.
template <typename T>
LossResult<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

}  // namespace psconv
