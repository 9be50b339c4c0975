#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

// OpenMP-parallel compute kernels. Every kernel parallelizes over
// independent output elements only, so results do not depend on the
// thread count. Serial oracles for these live in reference.hpp.
namespace psconv::kernels {

// C[M,N] (+)= A[M,K] * B[K,N], all row-major with leading dimensions.
// Each C element accumulates over k in ascending order.
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

// dst[cols, rows] = src[rows, cols]^T
template <typename T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst);

struct ConvGeometry {
  std::size_t in_ch = 0, in_h = 0, in_w = 0;
  std::size_t out_ch = 0, out_h = 0, out_w = 0;
  std::size_t kernel = 0, stride = 1, padding = 0;

  std::size_t patch_size() const { return in_ch * kernel * kernel; }
  std::size_t out_pixels() const { return out_h * out_w; }
};

// One image [C,H,W] -> columns [C*k*k, Ho*Wo], zero padded.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* columns);

// Scatter-add columns [C*k*k, Ho*Wo] back into image [C,H,W].
template <typename T>
void col2im(const T* columns, const ConvGeometry& g, T* image);

// im2col + gemm forward for a batch: x [N,Ci,H,W], w [Co,Ci,k,k], y [N,Co,Ho,Wo].
template <typename T>
void conv2d_forward(const T* x, const T* w, std::size_t batch, const ConvGeometry& g, T* y);

// Direct convolution that visits only kernel-support positions. support is
// the [Co,Ci,k,k] 0/1 mask.
template <typename T>
void conv2d_forward_support(const T* x, const T* w, std::span<const std::uint8_t> support,
                            std::size_t batch, const ConvGeometry& g, T* y);

// Cap for OpenMP threads; 0 selects the runtime default.
void set_thread_limit(int threads);
int thread_limit();

}  // namespace psconv::kernels
