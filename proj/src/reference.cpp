#include "psconv/reference.hpp"

namespace psconv::reference {

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void conv2d_forward(const T* x, const T* w, std::size_t batch, const kernels::ConvGeometry& g, T* y) {
  const long pad = static_cast<long>(g.padding);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < g.out_ch; ++o) {
      for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
          T acc{0};
          for (std::size_t c = 0; c < g.in_ch; ++c) {
            for (std::size_t r = 0; r < g.kernel; ++r) {
              for (std::size_t s = 0; s < g.kernel; ++s) {
                const long ih = static_cast<long>(oh * g.stride + r) - pad;
                const long iw = static_cast<long>(ow * g.stride + s) - pad;
                if (ih < 0 || iw < 0 || ih >= static_cast<long>(g.in_h) ||
                    iw >= static_cast<long>(g.in_w)) {
                  continue;
                }
                acc += x[((n * g.in_ch + c) * g.in_h + ih) * g.in_w + iw] *
                       w[((o * g.in_ch + c) * g.kernel + r) * g.kernel + s];
              }
            }
          }
          y[((n * g.out_ch + o) * g.out_h + oh) * g.out_w + ow] = acc;
        }
      }
    }
  }
}

template void gemm(std::size_t, std::size_t, std::size_t, const float*, const float*, float*);
template void gemm(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);
template void conv2d_forward(const float*, const float*, std::size_t, const kernels::ConvGeometry&,
                             float*);
template void conv2d_forward(const double*, const double*, std::size_t, const kernels::ConvGeometry&,
                             double*);

}  // namespace psconv::reference
