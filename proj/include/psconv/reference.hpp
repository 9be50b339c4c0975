#pragma once

#include <cstddef>

#include "psconv/kernels.hpp"

// Serial, loop-nest oracles for the parallel kernels. Kept deliberately
// naive; used by tests and the benchmark.
namespace psconv::reference {

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);

// Six-loop cross-correlation with zero padding.
template <typename T>
void conv2d_forward(const T* x, const T* w, std::size_t batch, const kernels::ConvGeometry& g, T* y);

}  // namespace psconv::reference
