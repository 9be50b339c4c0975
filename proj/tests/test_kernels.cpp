#include <cmath>

#include "doctest.h"
#include "psconv/kernels.hpp"
#include "psconv/mask.hpp"
#include "psconv/reference.hpp"
#include "test_util.hpp"

using namespace psconv;
using kernels::ConvGeometry;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  const auto t = testutil::random_tensor<float>(Shape{n}, seed);
  return {t.values().begin(), t.values().end()};
}

void check_close(const std::vector<float>& a, const std::vector<float>& b, double tol = 1e-5) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(a[i] - b[i]) <= tol * (1.0 + std::abs(b[i])));
  }
}

ConvGeometry geom(std::size_t ci, std::size_t h, std::size_t co, std::size_t k, std::size_t s, std::size_t p) {
  const std::size_t o = (h + 2 * p - k) / s + 1;
  return {ci, h, h, co, o, o, k, s, p};
}

}  // namespace

TEST_CASE("gemm matches the reference loop") {
  for (auto [m, n, k] : {std::tuple{1, 1, 1}, {3, 5, 7}, {17, 9, 33}, {64, 64, 64}, {70, 40, 130}}) {
    const auto a = random_vec(m * k, 1), b = random_vec(k * n, 2);
    std::vector<float> c(m * n, 99.0f), ref(m * n);
    kernels::gemm<float>(m, n, k, a.data(), k, b.data(), n, c.data(), n, false);
    reference::gemm<float>(m, n, k, a.data(), b.data(), ref.data());
    check_close(c, ref);
  }
}

TEST_CASE("gemm accumulate adds onto C") {
  const std::size_t m = 4, n = 3, k = 5;
  const auto a = random_vec(m * k, 3), b = random_vec(k * n, 4);
  std::vector<float> c(m * n, 1.0f), ref(m * n);
  kernels::gemm<float>(m, n, k, a.data(), k, b.data(), n, c.data(), n, true);
  reference::gemm<float>(m, n, k, a.data(), b.data(), ref.data());
  for (auto& v : ref) v += 1.0f;
  check_close(c, ref);
}

TEST_CASE("gemm honours leading dimensions") {
  // A is the left 2x3 block of a 2x5 buffer.
  const std::vector<float> a{1, 2, 3, -1, -1, 4, 5, 6, -1, -1};
  const std::vector<float> b{7, 8, 9, 10, 11, 12};
  std::vector<float> c(2 * 2);
  kernels::gemm<float>(2, 2, 3, a.data(), 5, b.data(), 2, c.data(), 2, false);
  CHECK(c == std::vector<float>{58, 64, 139, 154});
}

TEST_CASE("results do not depend on the thread count") {
  const std::size_t m = 96, n = 80, k = 72;
  const auto a = random_vec(m * k, 5), b = random_vec(k * n, 6);
  std::vector<float> one(m * n), many(m * n);
  const int before = kernels::thread_limit();
  kernels::set_thread_limit(1);
  kernels::gemm<float>(m, n, k, a.data(), k, b.data(), n, one.data(), n, false);
  kernels::set_thread_limit(4);
  kernels::gemm<float>(m, n, k, a.data(), k, b.data(), n, many.data(), n, false);
  kernels::set_thread_limit(before);
  CHECK(one == many);
}

TEST_CASE("transpose") {
  const auto src = random_vec(37 * 53, 7);
  std::vector<float> dst(src.size());
  kernels::transpose(src.data(), 37, 53, dst.data());
  for (std::size_t r = 0; r < 37; ++r)
    for (std::size_t c = 0; c < 53; ++c) CHECK(dst[c * 37 + r] == src[r * 53 + c]);
}

TEST_CASE("col2im is the adjoint of im2col") {
  const auto g = geom(3, 7, 2, 3, 2, 1);
  const auto x = random_vec(g.in_ch * g.in_h * g.in_w, 8);
  const auto c = random_vec(g.patch_size() * g.out_pixels(), 9);
  std::vector<float> cols(c.size()), img(x.size(), 0.0f);
  kernels::im2col(x.data(), g, cols.data());
  kernels::col2im(c.data(), g, img.data());
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) lhs += double(cols[i]) * c[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += double(x[i]) * img[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-6));
}

TEST_CASE("im2col places padding zeros") {
  const auto g = geom(1, 2, 1, 3, 1, 1);
  const std::vector<float> x{1, 2, 3, 4};
  std::vector<float> cols(9 * 4);
  kernels::im2col(x.data(), g, cols.data());
  // Centre tap (row 4 of the patch) sees the image itself.
  CHECK(std::vector<float>(cols.begin() + 16, cols.begin() + 20) == x);
  // Top-left tap sees only x[0] at output (1,1).
  CHECK(std::vector<float>(cols.begin(), cols.begin() + 4) == std::vector<float>{0, 0, 0, 1});
}

TEST_CASE("conv forward matches the reference for several geometries") {
  for (const auto& g : {geom(3, 8, 4, 3, 1, 1), geom(2, 9, 5, 3, 2, 1), geom(4, 6, 3, 1, 2, 0), geom(3, 5, 2, 3, 1, 0)}) {
    const std::size_t batch = 2;
    const auto x = random_vec(batch * g.in_ch * g.in_h * g.in_w, 10);
    const auto w = random_vec(g.out_ch * g.patch_size(), 11);
    std::vector<float> y(batch * g.out_ch * g.out_pixels()), ref(y.size());
    kernels::conv2d_forward(x.data(), w.data(), batch, g, y.data());
    reference::conv2d_forward(x.data(), w.data(), batch, g, ref.data());
    check_close(y, ref);
  }
}

TEST_CASE("support-only conv equals dense conv on masked weights") {
  const auto g = geom(6, 8, 5, 3, 1, 1);
  const auto mask = generate_mask(3, 4, g.in_ch, g.out_ch, 12);
  auto w = random_vec(g.out_ch * g.patch_size(), 13);
  for (std::size_t i = 0; i < w.size(); ++i)
    if (!mask.bits()[i]) w[i] = 0.0f;
  const auto x = random_vec(g.in_ch * g.in_h * g.in_w, 14);
  std::vector<float> dense(g.out_ch * g.out_pixels()), sparse(dense.size());
  kernels::conv2d_forward(x.data(), w.data(), 1, g, dense.data());
  kernels::conv2d_forward_support(x.data(), w.data(), mask.bits(), 1, g, sparse.data());
  check_close(sparse, dense);
}
