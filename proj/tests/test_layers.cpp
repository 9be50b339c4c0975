#include <cmath>

#include "doctest.h"
#include "psconv/error.hpp"
#include "psconv/gradcheck.hpp"
#include "psconv/layers.hpp"
#include "test_util.hpp"

using namespace psconv;

TEST_CASE("conv output size") {
  CHECK(conv_output_size(32, 3, 1, 1) == 32);
  CHECK(conv_output_size(32, 3, 2, 1) == 16);
  CHECK(conv_output_size(32, 1, 2, 0) == 16);
  CHECK(conv_output_size(5, 3, 1, 0) == 3);
}

TEST_CASE("conv forward by hand") {
  Conv2d<float> conv(1, 1, 3, 1, 1);
  conv.weight.value.fill(1.0f);
  Tensor x(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto y = conv2d_forward(conv, x).first;
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.storage() == std::vector<float>{12, 21, 16, 27, 45, 33, 24, 39, 28});
}

TEST_CASE("conv bias and channel mismatch") {
  Conv2d<float> conv(2, 3, 1, 1, 0, true);
  conv.bias->value = Tensor(Shape{3}, {1, 2, 3});
  const auto y = conv2d_forward(conv, Tensor(Shape{1, 2, 2, 2})).first;
  CHECK(y.at(0, 2, 1, 1) == 3.0f);
  CHECK_THROWS_AS(conv2d_forward(conv, Tensor(Shape{1, 3, 2, 2})), ShapeError);
}

TEST_CASE("support-aware conv gives the same forward result") {
  Conv2d<float> conv(4, 5, 3, 1, 1);
  conv.weight.value = testutil::random_tensor<float>(Shape{5, 4, 3, 3}, 1);
  auto m = generate_mask(3, 3, 4, 5, 2);
  apply_mask_inplace(conv.weight.value, m);
  conv.attach_mask(std::move(m));
  const auto x = testutil::random_tensor<float>(Shape{2, 4, 6, 6}, 3);
  const auto dense = conv2d_forward(conv, x).first;
  conv.support_aware = true;
  const auto sparse = conv2d_forward(conv, x).first;
  for (std::size_t i = 0; i < dense.numel(); ++i) CHECK(sparse[i] == doctest::Approx(dense[i]).epsilon(1e-5));
}

TEST_CASE("batch norm train statistics and running averages") {
  BatchNorm2d<double> bn(1);
  Tensor64 x(Shape{2, 1, 1, 2}, {1, 2, 3, 6});  // mean 3, biased var 3.5, unbiased 14/3
  const auto y = bn_forward(bn, x, Mode::train).first;
  const double inv = 1.0 / std::sqrt(3.5 + 1e-5);
  CHECK(y[0] == doctest::Approx((1 - 3) * inv));
  CHECK(y[3] == doctest::Approx((6 - 3) * inv));
  CHECK(bn.running_mean[0] == doctest::Approx(0.3));
  CHECK(bn.running_var[0] == doctest::Approx(0.9 + 0.1 * 14.0 / 3.0));
}

TEST_CASE("batch norm eval uses running statistics") {
  BatchNorm2d<float> bn(2);
  bn.running_mean = Tensor(Shape{2}, {1, -1});
  bn.running_var = Tensor(Shape{2}, {4, 1});
  bn.gamma.value = Tensor(Shape{2}, {2, 1});
  bn.beta.value = Tensor(Shape{2}, {0, 5});
  Tensor x(Shape{1, 2, 1, 1}, {3, 0});
  const auto y = bn_forward(bn, x, Mode::eval).first;
  CHECK(y[0] == doctest::Approx(2 * 2 / std::sqrt(4 + 1e-5)));
  CHECK(y[1] == doctest::Approx(1 / std::sqrt(1 + 1e-5) + 5));
  CHECK(bn.running_mean[0] == 1.0f);  // untouched in eval
}

TEST_CASE("linear forward") {
  Linear<float> fc(3, 2);
  fc.weight.value = Tensor(Shape{2, 3}, {1, 0, -1, 2, 2, 2});
  fc.bias.value = Tensor(Shape{2}, {0.5f, -1});
  const auto y = linear_forward(fc, Tensor(Shape{1, 3}, {1, 2, 3})).first;
  CHECK(y.storage() == std::vector<float>{-1.5f, 11});
}

TEST_CASE("relu and pooling") {
  Tensor x(Shape{1, 1, 2, 4}, {-1, 2, 3, 3, 0.5f, -2, 3, 1});
  const auto r = relu_forward(x).first;
  CHECK(r.storage() == std::vector<float>{0, 2, 3, 3, 0.5f, 0, 3, 1});

  auto [mp, mcache] = maxpool2d_forward(x);
  CHECK(mp.storage() == std::vector<float>{2, 3});
  const auto g = maxpool2d_backward(mcache, Tensor(Shape{1, 1, 1, 2}, {1, 1}));
  // The tie among the three 3s goes to the first in row-major order.
  CHECK(g.storage() == std::vector<float>{0, 1, 1, 0, 0, 0, 0, 0});

  auto [ap, acache] = avgpool2d_forward(x, 2);
  CHECK(ap.storage() == std::vector<float>{-0.125f, 2.5f});
  const auto ga = avgpool2d_backward(acache, Tensor(Shape{1, 1, 1, 2}, {4, 8}));
  CHECK(ga.storage() == std::vector<float>{1, 1, 2, 2, 1, 1, 2, 2});
}

TEST_CASE("softmax cross entropy") {
  SUBCASE("uniform logits") {
    Tensor logits(Shape{2, 4});
    const std::vector<int> labels{1, 3};
    const auto res = softmax_cross_entropy(logits, labels);
    CHECK(res.loss == doctest::Approx(std::log(4.0)));
    CHECK(res.grad_logits.shape() == Shape{2, 4});
  }
  SUBCASE("gradient rows") {
    Tensor logits(Shape{2, 3});
    const std::vector<int> labels{0, 2};
    const auto res = softmax_cross_entropy(logits, labels);
    CHECK(res.grad_logits[0] == doctest::Approx((1.0 / 3 - 1) / 2));
    CHECK(res.grad_logits[1] == doctest::Approx(1.0 / 6));
  }
  SUBCASE("large logits stay finite") {
    Tensor logits(Shape{1, 2}, {1000, -1000});
    const std::vector<int> labels{1};
    const auto res = softmax_cross_entropy(logits, labels);
    CHECK(std::isfinite(res.loss));
    CHECK(res.loss == doctest::Approx(2000));
  }
  SUBCASE("bad labels") {
    Tensor logits(Shape{1, 2});
    const std::vector<int> high{2}, neg{-1}, count{0, 1};
    CHECK_THROWS_AS(softmax_cross_entropy(logits, high), DataError);
    CHECK_THROWS_AS(softmax_cross_entropy(logits, neg), DataError);
    CHECK_THROWS_AS(softmax_cross_entropy(logits, count), ShapeError);
  }
}

TEST_CASE("backward passes agree with finite differences") {
  for (bool f64 : {true, false}) {
    for (const auto& r : run_gradcheck("all", f64, 1)) {
      INFO((f64 ? "f64 " : "f32 ") << r.name << " err " << r.max_rel_error);
      CHECK(r.checked > 0);
      CHECK(r.max_rel_error < gradcheck_threshold(f64));
    }
  }
}

TEST_CASE("numeric gradient oracle on a known function") {
  std::vector<double> x{0.5, -1.0, 2.0};
  const auto f = [&] { return x[0] * x[0] * x[1] + std::sin(x[2]); };
  const auto g = numeric_gradient<double>(f, x, 1e-3);
  CHECK(g[0] == doctest::Approx(2 * 0.5 * -1.0).epsilon(1e-10));
  CHECK(g[1] == doctest::Approx(0.25).epsilon(1e-10));
  CHECK(g[2] == doctest::Approx(std::cos(2.0)).epsilon(1e-10));
  CHECK(x == std::vector<double>{0.5, -1.0, 2.0});
}
