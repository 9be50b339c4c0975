#include "psconv/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <vector>

namespace psconv::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

}  // namespace

void set_thread_limit(int threads) {
  omp_set_num_threads(threads > 0 ? threads : omp_get_num_procs());
}

int thread_limit() { return omp_get_max_threads(); }

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  const bool parallel = m > 1 && m * n * k >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (!accumulate) std::fill(crow, crow + n, T{0});
    const T* arow = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      // Masked weights leave whole rows of zeros in A.
      if (av == T{0}) continue;
      const T* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    const std::size_t r1 = std::min(rows, r0 + kBlock);
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
      }
    }
  }
}

template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* columns) {
  const std::size_t k = g.kernel;
  const std::size_t pixels = g.out_pixels();
  const bool parallel = g.patch_size() * pixels >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t row = 0; row < g.patch_size(); ++row) {
    const std::size_t c = row / (k * k);
    const std::size_t kr = (row / k) % k;
    const std::size_t kc = row % k;
    T* out = columns + row * pixels;
    const T* plane = image + c * g.in_h * g.in_w;
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      const long ih = static_cast<long>(oh * g.stride + kr) - static_cast<long>(g.padding);
      T* dst = out + oh * g.out_w;
      if (ih < 0 || ih >= static_cast<long>(g.in_h)) {
        std::fill(dst, dst + g.out_w, T{0});
        continue;
      }
      const T* src = plane + static_cast<std::size_t>(ih) * g.in_w;
      for (std::size_t ow = 0; ow < g.out_w; ++ow) {
        const long iw = static_cast<long>(ow * g.stride + kc) - static_cast<long>(g.padding);
        dst[ow] = (iw < 0 || iw >= static_cast<long>(g.in_w)) ? T{0} : src[iw];
      }
    }
  }
}

template <typename T>
void col2im(const T* columns, const ConvGeometry& g, T* image) {
  const std::size_t k = g.kernel;
  const std::size_t pixels = g.out_pixels();
  // Each input channel owns a disjoint set of column rows, so channels are
  // independent; the accumulation order inside a channel is fixed.
  const bool parallel = g.patch_size() * pixels >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    T* plane = image + c * g.in_h * g.in_w;
    for (std::size_t kr = 0; kr < k; ++kr) {
      for (std::size_t kc = 0; kc < k; ++kc) {
        const T* src = columns + ((c * k + kr) * k + kc) * pixels;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + kr) - static_cast<long>(g.padding);
          if (ih < 0 || ih >= static_cast<long>(g.in_h)) continue;
          T* dst = plane + static_cast<std::size_t>(ih) * g.in_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + kc) - static_cast<long>(g.padding);
            if (iw >= 0 && iw < static_cast<long>(g.in_w)) dst[iw] += src[oh * g.out_w + ow];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_forward(const T* x, const T* w, std::size_t batch, const ConvGeometry& g, T* y) {
  const std::size_t patch = g.patch_size();
  const std::size_t pixels = g.out_pixels();
  std::vector<T> columns(patch * pixels);
  for (std::size_t n = 0; n < batch; ++n) {
    im2col(x + n * g.in_ch * g.in_h * g.in_w, g, columns.data());
    gemm(g.out_ch, pixels, patch, w, patch, columns.data(), pixels, y + n * g.out_ch * pixels, pixels,
         false);
  }
}

template <typename T>
void conv2d_forward_support(const T* x, const T* w, std::span<const std::uint8_t> support,
                            std::size_t batch, const ConvGeometry& g, T* y) {
  const std::size_t k = g.kernel;
  const std::size_t kk = k * k;
  const std::size_t pixels = g.out_pixels();

  // Compact (channel, row, col) list of support positions per output channel.
  struct Tap {
    std::size_t c, r, s, widx;
  };
  std::vector<std::vector<Tap>> taps(g.out_ch);
  for (std::size_t o = 0; o < g.out_ch; ++o) {
    for (std::size_t c = 0; c < g.in_ch; ++c) {
      for (std::size_t q = 0; q < kk; ++q) {
        const std::size_t widx = (o * g.in_ch + c) * kk + q;
        if (support[widx]) taps[o].push_back({c, q / k, q % k, widx});
      }
    }
  }

  const std::size_t work = batch * g.out_ch;
#pragma omp parallel for schedule(static) if (work * pixels >= kParallelWork)
  for (std::size_t job = 0; job < work; ++job) {
    const std::size_t n = job / g.out_ch;
    const std::size_t o = job % g.out_ch;
    T* out = y + (n * g.out_ch + o) * pixels;
    std::fill(out, out + pixels, T{0});
    const T* img = x + n * g.in_ch * g.in_h * g.in_w;
    for (const Tap& t : taps[o]) {
      const T wv = w[t.widx];
      const T* plane = img + t.c * g.in_h * g.in_w;
      for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        const long ih = static_cast<long>(oh * g.stride + t.r) - static_cast<long>(g.padding);
        if (ih < 0 || ih >= static_cast<long>(g.in_h)) continue;
        const T* src = plane + static_cast<std::size_t>(ih) * g.in_w;
        T* dst = out + oh * g.out_w;
        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
          const long iw = static_cast<long>(ow * g.stride + t.s) - static_cast<long>(g.padding);
          if (iw >= 0 && iw < static_cast<long>(g.in_w)) dst[ow] += wv * src[iw];
        }
      }
    }
  }
}

#define PSCONV_INSTANTIATE(T)                                                                    \
  template void gemm(std::size_t, std::size_t, std::size_t, const T*, std::size_t, const T*,      \
                     std::size_t, T*, std::size_t, bool);                                         \
  template void transpose(const T*, std::size_t, std::size_t, T*);                                \
  template void im2col(const T*, const ConvGeometry&, T*);                                        \
  template void col2im(const T*, const ConvGeometry&, T*);                                        \
  template void conv2d_forward(const T*, const T*, std::size_t, const ConvGeometry&, T*);         \
  template void conv2d_forward_support(const T*, const T*, std::span<const std::uint8_t>,         \
                                       std::size_t, const ConvGeometry&, T*);

PSCONV_INSTANTIATE(float)
PSCONV_INSTANTIATE(double)

#undef PSCONV_INSTANTIATE

}  // namespace psconv::kernels
