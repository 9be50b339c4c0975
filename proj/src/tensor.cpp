#include "psconv/tensor.hpp"

#include <cmath>
#include <limits>

#include "psconv/kernels.hpp"

namespace psconv {

namespace {

std::size_t checked_numel(const std::vector<std::size_t>& dims) {
  if (dims.empty() || dims.size() > Shape::kMaxRank) {
    throw ShapeError("shape rank must be 1-4, got " + std::to_string(dims.size()));
  }
  std::size_t n = 1;
  for (std::size_t d : dims) {
    if (d == 0) throw ShapeError("shape dimensions must be positive");
    if (n > std::numeric_limits<std::size_t>::max() / d) {
      throw ShapeError("shape element count overflows");
    }
    n *= d;
  }
  return n;
}

template <typename T, typename Op>
BasicTensor<T> zip(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* what, Op op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().to_string() + " vs " +
                     b.shape().to_string());
  }
  BasicTensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::size_t n = a.numel();
#pragma omp parallel for schedule(static) if (n > 65536)
  for (std::size_t i = 0; i < n; ++i) po[i] = op(pa[i], pb[i]);
  return out;
}

template <typename T, typename Op>
BasicTensor<T> map(const BasicTensor<T>& a, Op op) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = op(a[i]);
  return out;
}

}  // namespace

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)), numel_(checked_numel(dims_)) {}

std::size_t Shape::flat_index(std::span<const std::size_t> coord) const {
  if (coord.size() != rank()) throw ShapeError("coordinate rank mismatch");
  std::size_t flat = 0;
  for (std::size_t i = 0; i < rank(); ++i) {
    if (coord[i] >= dims_[i]) throw ShapeError("coordinate out of range");
    flat = flat * dims_[i] + coord[i];
  }
  return flat;
}

std::vector<std::size_t> Shape::coordinate(std::size_t flat) const {
  if (flat >= numel_) throw ShapeError("flat index out of range");
  std::vector<std::size_t> coord(rank());
  for (std::size_t i = rank(); i-- > 0;) {
    coord[i] = flat % dims_[i];
    flat /= dims_[i];
  }
  return coord;
}

std::string Shape::to_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims_[i]);
  }
  return s + "]";
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return zip(a, b, "add", [](T x, T y) { return x + y; });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return zip(a, b, "sub", [](T x, T y) { return x - y; });
}

template <typename T>
BasicTensor<T> hadamard(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return zip(a, b, "hadamard", [](T x, T y) { return x * y; });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  return map(a, [factor](T x) { return x * factor; });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T value) {
  return map(a, [value](T x) { return x + value; });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects rank-2 tensors");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner dimension mismatch " + a.shape().to_string() + " x " +
                     b.shape().to_string());
  }
  BasicTensor<T> c(Shape{m, n});
  kernels::gemm(m, n, k, a.data(), k, b.data(), n, c.data(), n, false);
  return c;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects a rank-2 tensor");
  BasicTensor<T> out(Shape{a.dim(1), a.dim(0)});
  kernels::transpose(a.data(), a.dim(0), a.dim(1), out.data());
  return out;
}

template <typename T>
T sum(const BasicTensor<T>& t) {
  T acc{0};
  for (T v : t.values()) acc += v;
  return acc;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& t, std::size_t axis) {
  if (axis >= t.rank()) throw ShapeError("reduction axis out of range");
  const auto& dims = t.shape().dims();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= dims[i];
  for (std::size_t i = axis + 1; i < dims.size(); ++i) inner *= dims[i];
  const std::size_t len = dims[axis];

  std::vector<std::size_t> out_dims;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i != axis) out_dims.push_back(dims[i]);
  }
  if (out_dims.empty()) out_dims.push_back(1);
  BasicTensor<T> out{Shape(out_dims)};
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t a = 0; a < len; ++a) {
      const T* src = t.data() + (o * len + a) * inner;
      T* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& t, std::size_t axis) {
  if (axis >= t.rank()) throw ShapeError("reduction axis out of range");
  return scale(sum(t, axis), T{1} / static_cast<T>(t.dim(axis)));
}

template <typename T>
std::size_t argmax(std::span<const T> values) {
  if (values.empty()) throw ShapeError("argmax of empty range");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

template <typename T>
std::vector<std::size_t> argmax_rows(const BasicTensor<T>& t) {
  if (t.rank() != 2) throw ShapeError("argmax_rows expects [N,C]");
  const std::size_t cols = t.dim(1);
  std::vector<std::size_t> out(t.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r] = argmax(t.values().subspan(r * cols, cols));
  }
  return out;
}

template <typename T>
bool all_finite(const BasicTensor<T>& t) {
  for (T v : t.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

#define PSCONV_INSTANTIATE(T)                                                   \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> hadamard(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                        \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                   \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                       \
  template T sum(const BasicTensor<T>&);                                          \
  template BasicTensor<T> sum(const BasicTensor<T>&, std::size_t);                \
  template BasicTensor<T> mean(const BasicTensor<T>&, std::size_t);               \
  template std::size_t argmax(std::span<const T>);                                \
  template std::vector<std::size_t> argmax_rows(const BasicTensor<T>&);           \
  template bool all_finite(const BasicTensor<T>&);

PSCONV_INSTANTIATE(float)
PSCONV_INSTANTIATE(double)

#undef PSCONV_INSTANTIATE

}  // namespace psconv
