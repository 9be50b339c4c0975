#include "psconv/layers.hpp"

#include <cmath>
#include <string>

namespace psconv {

namespace {

void require_nchw(const Shape& s, const char* what) {
  if (s.rank() != 4) throw ShapeError(std::string(what) + " expects NCHW input, got " + s.to_string());
}

void require_same(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": gradient shape " + a.to_string() +
                     " does not match forward output " + b.to_string());
  }
}

}  // namespace

std::size_t conv_output_size(std::size_t input, std::size_t kernel, std::size_t stride,
                             std::size_t padding) {
  if (stride == 0 || kernel == 0) throw ShapeError("kernel and stride must be positive");
  if (input + 2 * padding < kernel) {
    throw ShapeError("window " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(input + 2 * padding));
  }
  return (input + 2 * padding - kernel) / stride + 1;
}

// ---------------------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                  std::size_t padding, bool with_bias)
    : in_ch(in_ch),
      out_ch(out_ch),
      kernel(kernel),
      stride(stride),
      padding(padding),
      weight(Shape{out_ch, in_ch, kernel, kernel}) {
  if (with_bias) bias.emplace(Shape{out_ch});
}

template <typename T>
kernels::ConvGeometry Conv2d<T>::geometry(std::size_t in_h, std::size_t in_w) const {
  kernels::ConvGeometry g;
  g.in_ch = in_ch;
  g.in_h = in_h;
  g.in_w = in_w;
  g.out_ch = out_ch;
  g.kernel = kernel;
  g.stride = stride;
  g.padding = padding;
  g.out_h = conv_output_size(in_h, kernel, stride, padding);
  g.out_w = conv_output_size(in_w, kernel, stride, padding);
  return g;
}

template <typename T>
void Conv2d<T>::attach_mask(KernelSupportMask m) {
  if (m.shape() != weight.value.shape()) {
    throw ShapeError("mask " + m.shape().to_string() + " does not match conv weights " +
                     weight.value.shape().to_string());
  }
  mask = std::move(m);
}

template <typename T>
std::pair<BasicTensor<T>, ConvCache<T>> conv2d_forward(const Conv2d<T>& layer, const BasicTensor<T>& x) {
  require_nchw(x.shape(), "conv2d");
  if (x.dim(1) != layer.in_ch) {
    throw ShapeError("conv2d expects " + std::to_string(layer.in_ch) + " input channels, got " +
                     std::to_string(x.dim(1)));
  }
  const auto g = layer.geometry(x.dim(2), x.dim(3));
  const std::size_t batch = x.dim(0);
  BasicTensor<T> y(Shape{batch, g.out_ch, g.out_h, g.out_w});
  if (layer.support_aware && layer.mask) {
    kernels::conv2d_forward_support(x.data(), layer.weight.value.data(), layer.mask->bits(), batch, g,
                                    y.data());
  } else {
    kernels::conv2d_forward(x.data(), layer.weight.value.data(), batch, g, y.data());
  }
  if (layer.bias) {
    const std::size_t pixels = g.out_pixels();
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t o = 0; o < g.out_ch; ++o) {
        T* out = y.data() + (n * g.out_ch + o) * pixels;
        const T b = layer.bias->value[o];
        for (std::size_t p = 0; p < pixels; ++p) out[p] += b;
      }
    }
  }
  return {std::move(y), ConvCache<T>{x}};
}

template <typename T>
ConvGrads<T> conv2d_backward(const Conv2d<T>& layer, const ConvCache<T>& cache,
                             const BasicTensor<T>& grad_y) {
  const BasicTensor<T>& x = cache.input;
  const auto g = layer.geometry(x.dim(2), x.dim(3));
  const std::size_t batch = x.dim(0);
  require_same(grad_y.shape(), Shape{batch, g.out_ch, g.out_h, g.out_w}, "conv2d_backward");

  const std::size_t patch = g.patch_size();
  const std::size_t pixels = g.out_pixels();
  const std::size_t image = g.in_ch * g.in_h * g.in_w;

  ConvGrads<T> grads{BasicTensor<T>(x.shape()), BasicTensor<T>(layer.weight.value.shape()), std::nullopt};
  std::vector<T> w_t(patch * g.out_ch);
  kernels::transpose(layer.weight.value.data(), g.out_ch, patch, w_t.data());

  std::vector<T> columns(patch * pixels), columns_t(pixels * patch), grad_columns(patch * pixels);
  for (std::size_t n = 0; n < batch; ++n) {
    const T* gy = grad_y.data() + n * g.out_ch * pixels;
    kernels::im2col(x.data() + n * image, g, columns.data());
    kernels::transpose(columns.data(), patch, pixels, columns_t.data());
    // dW[Co, patch] += dY[Co, P] * cols^T[P, patch]
    kernels::gemm(g.out_ch, patch, pixels, gy, pixels, columns_t.data(), patch, grads.weight.data(), patch,
                  true);
    // dcols[patch, P] = W^T[patch, Co] * dY[Co, P]
    kernels::gemm(patch, pixels, g.out_ch, w_t.data(), g.out_ch, gy, pixels, grad_columns.data(), pixels,
                  false);
    kernels::col2im(grad_columns.data(), g, grads.input.data() + n * image);
  }

  if (layer.bias) {
    BasicTensor<T> gb(Shape{g.out_ch});
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t o = 0; o < g.out_ch; ++o) {
        const T* gy = grad_y.data() + (n * g.out_ch + o) * pixels;
        for (std::size_t p = 0; p < pixels; ++p) gb[o] += gy[p];
      }
    }
    grads.bias = std::move(gb);
  }
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels)
    : channels(channels),
      gamma(Shape{channels}, T{1}),
      beta(Shape{channels}, T{0}),
      running_mean(Shape{channels}, T{0}),
      running_var(Shape{channels}, T{1}) {}

template <typename T>
std::pair<BasicTensor<T>, BnCache<T>> bn_forward(BatchNorm2d<T>& layer, const BasicTensor<T>& x, Mode mode) {
  require_nchw(x.shape(), "batch_norm");
  const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (channels != layer.channels) {
    throw ShapeError("batch_norm expects " + std::to_string(layer.channels) + " channels, got " +
                     std::to_string(channels));
  }
  const std::size_t count = batch * plane;
  if (mode == Mode::train && count < 2) {
    throw ShapeError("batch_norm in train mode needs at least 2 values per channel");
  }

  BnCache<T> cache{BasicTensor<T>(x.shape()), std::vector<T>(channels), mode};
  BasicTensor<T> y(x.shape());
  const T momentum = layer.momentum;

#pragma omp parallel for schedule(static) if (x.numel() > 65536)
  for (std::size_t c = 0; c < channels; ++c) {
    T mean_c, inv_std;
    if (mode == Mode::train) {
      double acc = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* src = x.data() + (n * channels + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) acc += src[p];
      }
      const double mean = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* src = x.data() + (n * channels + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          const double d = src[p] - mean;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      mean_c = static_cast<T>(mean);
      inv_std = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(layer.eps)));
      const double unbiased = sq / static_cast<double>(count - 1);
      layer.running_mean[c] = (T{1} - momentum) * layer.running_mean[c] + momentum * mean_c;
      layer.running_var[c] = (T{1} - momentum) * layer.running_var[c] + momentum * static_cast<T>(unbiased);
    } else {
      mean_c = layer.running_mean[c];
      inv_std = T{1} / std::sqrt(layer.running_var[c] + layer.eps);
    }
    cache.inv_std[c] = inv_std;
    const T gamma = layer.gamma.value[c], beta = layer.beta.value[c];
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t base = (n * channels + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const T xh = (x[base + p] - mean_c) * inv_std;
        cache.xhat[base + p] = xh;
        y[base + p] = gamma * xh + beta;
      }
    }
  }
  return {std::move(y), std::move(cache)};
}

template <typename T>
BnGrads<T> bn_backward(const BatchNorm2d<T>& layer, const BnCache<T>& cache, const BasicTensor<T>& grad_y) {
  require_same(grad_y.shape(), cache.xhat.shape(), "bn_backward");
  const std::size_t batch = grad_y.dim(0), channels = grad_y.dim(1), plane = grad_y.dim(2) * grad_y.dim(3);
  const double count = static_cast<double>(batch * plane);
  BnGrads<T> grads{BasicTensor<T>(grad_y.shape()), BasicTensor<T>(Shape{channels}), BasicTensor<T>(Shape{channels})};

#pragma omp parallel for schedule(static) if (grad_y.numel() > 65536)
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t base = (n * channels + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        sum_dy += grad_y[base + p];
        sum_dy_xhat += static_cast<double>(grad_y[base + p]) * cache.xhat[base + p];
      }
    }
    grads.beta[c] = static_cast<T>(sum_dy);
    grads.gamma[c] = static_cast<T>(sum_dy_xhat);
    const T gamma = layer.gamma.value[c];
    const T inv_std = cache.inv_std[c];
    if (cache.mode == Mode::eval) {
      for (std::size_t n = 0; n < batch; ++n) {
        const std::size_t base = (n * channels + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) grads.input[base + p] = grad_y[base + p] * gamma * inv_std;
      }
      continue;
    }
    const T mean_dy = static_cast<T>(sum_dy / count);
    const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
    const T s = gamma * inv_std;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t base = (n * channels + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        grads.input[base + p] = s * (grad_y[base + p] - mean_dy - cache.xhat[base + p] * mean_dy_xhat);
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features)
    : in_features(in_features),
      out_features(out_features),
      weight(Shape{out_features, in_features}),
      bias(Shape{out_features}) {}

template <typename T>
std::pair<BasicTensor<T>, LinearCache<T>> linear_forward(const Linear<T>& layer, const BasicTensor<T>& x) {
  if (x.rank() != 2 || x.dim(1) != layer.in_features) {
    throw ShapeError("linear expects [N," + std::to_string(layer.in_features) + "], got " +
                     x.shape().to_string());
  }
  const std::size_t batch = x.dim(0);
  std::vector<T> w_t(layer.in_features * layer.out_features);
  kernels::transpose(layer.weight.value.data(), layer.out_features, layer.in_features, w_t.data());
  BasicTensor<T> y(Shape{batch, layer.out_features});
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(layer.bias.value.data(), layer.out_features, y.data() + n * layer.out_features);
  }
  kernels::gemm(batch, layer.out_features, layer.in_features, x.data(), layer.in_features, w_t.data(),
                layer.out_features, y.data(), layer.out_features, true);
  return {std::move(y), LinearCache<T>{x}};
}

template <typename T>
LinearGrads<T> linear_backward(const Linear<T>& layer, const LinearCache<T>& cache,
                               const BasicTensor<T>& grad_y) {
  const std::size_t batch = cache.input.dim(0);
  require_same(grad_y.shape(), Shape{batch, layer.out_features}, "linear_backward");
  LinearGrads<T> grads{BasicTensor<T>(cache.input.shape()), BasicTensor<T>(layer.weight.value.shape()),
                       BasicTensor<T>(Shape{layer.out_features})};
  std::vector<T> gy_t(layer.out_features * batch);
  kernels::transpose(grad_y.data(), batch, layer.out_features, gy_t.data());
  kernels::gemm(layer.out_features, layer.in_features, batch, gy_t.data(), batch, cache.input.data(),
                layer.in_features, grads.weight.data(), layer.in_features, false);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < layer.out_features; ++o) grads.bias[o] += grad_y[n * layer.out_features + o];
  }
  kernels::gemm(batch, layer.in_features, layer.out_features, grad_y.data(), layer.out_features,
                layer.weight.value.data(), layer.in_features, grads.input.data(), layer.in_features, false);
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
std::pair<BasicTensor<T>, ReluCache<T>> relu_forward(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  return {y, ReluCache<T>{y}};
}

template <typename T>
BasicTensor<T> relu_backward(const ReluCache<T>& cache, const BasicTensor<T>& grad_y) {
  require_same(grad_y.shape(), cache.output.shape(), "relu_backward");
  BasicTensor<T> gx(grad_y.shape());
  for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] = cache.output[i] > T{0} ? grad_y[i] : T{0};
  return gx;
}

template <typename T>
std::pair<BasicTensor<T>, MaxPoolCache> maxpool2d_forward(const BasicTensor<T>& x) {
  require_nchw(x.shape(), "maxpool2d");
  const std::size_t n_ = x.dim(0), c_ = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw ShapeError("maxpool2d needs even spatial dims, got " + x.shape().to_string());
  const std::size_t ho = h / 2, wo = w / 2;
  BasicTensor<T> y(Shape{n_, c_, ho, wo});
  MaxPoolCache cache{x.shape(), std::vector<std::size_t>(y.numel())};
  for (std::size_t plane = 0; plane < n_ * c_; ++plane) {
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow) {
        std::size_t best = plane * h * w + (2 * oh) * w + 2 * ow;
        for (std::size_t dr = 0; dr < 2; ++dr) {
          for (std::size_t dc = 0; dc < 2; ++dc) {
            const std::size_t idx = plane * h * w + (2 * oh + dr) * w + (2 * ow + dc);
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t out = (plane * ho + oh) * wo + ow;
        y[out] = x[best];
        cache.argmax[out] = best;
      }
    }
  }
  return {std::move(y), std::move(cache)};
}

template <typename T>
BasicTensor<T> maxpool2d_backward(const MaxPoolCache& cache, const BasicTensor<T>& grad_y) {
  if (grad_y.numel() != cache.argmax.size()) throw ShapeError("maxpool2d_backward: gradient shape mismatch");
  BasicTensor<T> gx(cache.input_shape);
  for (std::size_t i = 0; i < grad_y.numel(); ++i) gx[cache.argmax[i]] += grad_y[i];
  return gx;
}

template <typename T>
std::pair<BasicTensor<T>, AvgPoolCache> avgpool2d_forward(const BasicTensor<T>& x, std::size_t kernel) {
  require_nchw(x.shape(), "avgpool2d");
  const std::size_t h = x.dim(2), w = x.dim(3);
  const std::size_t ho = conv_output_size(h, kernel, kernel, 0);
  const std::size_t wo = conv_output_size(w, kernel, kernel, 0);
  const std::size_t planes = x.dim(0) * x.dim(1);
  BasicTensor<T> y(Shape{x.dim(0), x.dim(1), ho, wo});
  const T inv = T{1} / static_cast<T>(kernel * kernel);
  for (std::size_t plane = 0; plane < planes; ++plane) {
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow) {
        T acc{0};
        for (std::size_t r = 0; r < kernel; ++r) {
          for (std::size_t c = 0; c < kernel; ++c) acc += x[plane * h * w + (oh * kernel + r) * w + ow * kernel + c];
        }
        y[(plane * ho + oh) * wo + ow] = acc * inv;
      }
    }
  }
  return {std::move(y), AvgPoolCache{x.shape(), kernel}};
}

template <typename T>
BasicTensor<T> avgpool2d_backward(const AvgPoolCache& cache, const BasicTensor<T>& grad_y) {
  const auto& s = cache.input_shape;
  const std::size_t k = cache.kernel, h = s[2], w = s[3];
  const std::size_t ho = (h - k) / k + 1, wo = (w - k) / k + 1;
  require_same(grad_y.shape(), Shape{s[0], s[1], ho, wo}, "avgpool2d_backward");
  BasicTensor<T> gx(s);
  const T inv = T{1} / static_cast<T>(k * k);
  for (std::size_t plane = 0; plane < s[0] * s[1]; ++plane) {
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow) {
        const T g = grad_y[(plane * ho + oh) * wo + ow] * inv;
        for (std::size_t r = 0; r < k; ++r) {
          for (std::size_t c = 0; c < k; ++c) gx[plane * h * w + (oh * k + r) * w + ow * k + c] += g;
        }
      }
    }
  }
  return gx;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy expects [N,C] logits");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) throw ShapeError("label count does not match batch size");
  LossResult<T> result{T{0}, BasicTensor<T>(logits.shape())};
  double total = 0.0;
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw DataError("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    }
    const T* z = logits.data() + n * classes;
    double zmax = z[0];
    for (std::size_t c = 1; c < classes; ++c) zmax = std::max<double>(zmax, z[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(z[c] - zmax);
    const double log_denom = std::log(denom);
    total += log_denom - (z[label] - zmax);
    T* g = result.grad_logits.data() + n * classes;
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = std::exp(z[c] - zmax - log_denom);
      g[c] = static_cast<T>((p - (static_cast<std::size_t>(label) == c ? 1.0 : 0.0)) * inv_batch);
    }
  }
  result.loss = static_cast<T>(total * inv_batch);
  return result;
}

#define PSCONV_INSTANTIATE(T)                                                                          \
  template struct Conv2d<T>;                                                                           \
  template struct BatchNorm2d<T>;                                                                      \
  template struct Linear<T>;                                                                           \
  template std::pair<BasicTensor<T>, ConvCache<T>> conv2d_forward(const Conv2d<T>&, const BasicTensor<T>&); \
  template ConvGrads<T> conv2d_backward(const Conv2d<T>&, const ConvCache<T>&, const BasicTensor<T>&);  \
  template std::pair<BasicTensor<T>, BnCache<T>> bn_forward(BatchNorm2d<T>&, const BasicTensor<T>&, Mode); \
  template BnGrads<T> bn_backward(const BatchNorm2d<T>&, const BnCache<T>&, const BasicTensor<T>&);     \
  template std::pair<BasicTensor<T>, LinearCache<T>> linear_forward(const Linear<T>&, const BasicTensor<T>&); \
  template LinearGrads<T> linear_backward(const Linear<T>&, const LinearCache<T>&, const BasicTensor<T>&); \
  template std::pair<BasicTensor<T>, ReluCache<T>> relu_forward(const BasicTensor<T>&);                 \
  template BasicTensor<T> relu_backward(const ReluCache<T>&, const BasicTensor<T>&);                   \
  template std::pair<BasicTensor<T>, MaxPoolCache> maxpool2d_forward(const BasicTensor<T>&);           \
  template BasicTensor<T> maxpool2d_backward(const MaxPoolCache&, const BasicTensor<T>&);              \
  template std::pair<BasicTensor<T>, AvgPoolCache> avgpool2d_forward(const BasicTensor<T>&, std::size_t); \
  template BasicTensor<T> avgpool2d_backward(const AvgPoolCache&, const BasicTensor<T>&);              \
  template LossResult<T> softmax_cross_entropy(const BasicTensor<T>&, std::span<const int>);

PSCONV_INSTANTIATE(float)
PSCONV_INSTANTIATE(double)

#undef PSCONV_INSTANTIATE

}  // namespace psconv
