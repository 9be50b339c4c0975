#include <set>

#include "doctest.h"
#include "psconv/arch.hpp"
#include "psconv/cost.hpp"
#include "psconv/model.hpp"
#include "test_util.hpp"

using namespace psconv;

namespace {

ArchSpec make(Family f, int kss, double width = 1.0, int classes = 10, int size = 32) {
  ArchSpec s;
  s.family = f;
  s.kss = kss;
  s.width_mult = width;
  s.num_classes = classes;
  s.input_size = size;
  s.base_seed = 21;
  return s;
}

std::size_t masked_convs(const ArchPlan& plan) {
  std::size_t n = 0;
  for (const auto& node : plan.nodes) n += node.kind == OpKind::conv && node.masked;
  return n;
}

}  // namespace

TEST_CASE("spec validation") {
  CHECK_NOTHROW(make(Family::resnet18, 4).validate());
  CHECK_THROWS_AS(make(Family::resnet18, 0).validate(), std::invalid_argument);
  CHECK_THROWS_AS(make(Family::resnet18, 10).validate(), std::invalid_argument);
  CHECK_THROWS_AS(make(Family::resnet18, 4, 0.0).validate(), std::invalid_argument);
  CHECK_THROWS_AS(make(Family::vgg16, 4, 1.0, 10, 48).validate(), std::invalid_argument);
  CHECK_THROWS_AS(make(Family::resnet18, 4, 1.0, 0).validate(), std::invalid_argument);
}

TEST_CASE("display names") {
  CHECK(make(Family::resnet18, 4, 0.5).display_name() == "ResNet18_HC_pSC4");
  CHECK(make(Family::vgg16, 9).display_name() == "VGG16_pSC9");
}

TEST_CASE("arch spec json round trip") {
  const auto s = make(Family::vgg16, 2, 0.5, 200, 64);
  const auto back = arch_from_json(to_json(s));
  CHECK(back.family == s.family);
  CHECK(back.kss == 2);
  CHECK(back.width_mult == 0.5);
  CHECK(back.num_classes == 200);
  CHECK(back.input_size == 64);
  CHECK(back.base_seed == 21);
}

TEST_CASE("width scaling rounds half to even") {
  CHECK(scaled_width(0.5, 64) == 32);
  CHECK(scaled_width(0.25, 10) == 2);  // 2.5 -> 2
  CHECK(scaled_width(0.3, 10) == 3);
  CHECK_THROWS(scaled_width(0.01, 10));
}

TEST_CASE("resnet18 plan") {
  const auto plan = plan_architecture(make(Family::resnet18, 4));
  CHECK(masked_convs(plan) == 17);
  const auto& last = plan.nodes.back();
  CHECK(last.kind == OpKind::linear);
  CHECK(last.in_ch == 512);
  CHECK(last.out_ch == 10);
  std::size_t adds = 0, projections = 0;
  for (const auto& n : plan.nodes) {
    if (n.kind == OpKind::add) {
      ++adds;
      REQUIRE(n.inputs.size() == 2);
    }
    if (n.kind == OpKind::conv && n.kernel == 1) {
      ++projections;
      CHECK_FALSE(n.masked);
    }
  }
  CHECK(adds == 8);
  CHECK(projections == 3);
}

TEST_CASE("vgg16 plan") {
  const auto plan = plan_architecture(make(Family::vgg16, 4, 1.0, 200, 64));
  CHECK(masked_convs(plan) == 13);
  std::size_t linears = 0;
  for (const auto& n : plan.nodes) linears += n.kind == OpKind::linear;
  CHECK(linears == 3);
  CHECK(plan.nodes.back().out_ch == 200);
}

TEST_CASE("mask seeds differ between layers") {
  const auto plan = plan_architecture(make(Family::resnet18, 4));
  std::set<std::uint64_t> seeds;
  for (const auto& n : plan.nodes)
    if (n.masked) seeds.insert(n.mask_seed);
  CHECK(seeds.size() == 17);
}

TEST_CASE("dense parameter storage of resnet18") {
  Model<float> m(make(Family::resnet18, 9));
  CHECK(m.parameter_count() == 11173962);
  CHECK(m.convs().size() == 20);
}

TEST_CASE("masked weights start at zero and masks are regular") {
  Model<float> m(make(Family::resnet18, 2, 0.5));
  std::size_t masked = 0;
  for (const auto& p : m.params()) {
    if (!p.mask) continue;
    ++masked;
    CHECK(p.mask->kss() == 2);
    for (std::size_t i = 0; i < p.mask->size(); ++i)
      if (!p.mask->bits()[i]) CHECK(p.param->value[i] == 0.0f);
  }
  CHECK(masked == 17);
}

TEST_CASE("parameter scaling with kss") {
  const auto dense = count_model(make(Family::resnet18, 9));
  for (int kss = 1; kss <= 9; ++kss) {
    const auto r = count_model(make(Family::resnet18, kss));
    REQUIRE(r.layers.size() == dense.layers.size());
    for (std::size_t i = 0; i < r.layers.size(); ++i) {
      if (r.layers[i].style == ConvStyle::psconv) {
        CHECK(r.layers[i].params * 9 == dense.layers[i].params * kss);
        CHECK(r.layers[i].flops * 9 == dense.layers[i].flops * kss);
      } else {
        CHECK(r.layers[i].params == dense.layers[i].params);
      }
    }
  }
}

TEST_CASE("forward shapes") {
  Model<float> small(make(Family::small_cnn, 4, 1.0, 3, 8));
  CHECK(small.forward(testutil::random_tensor<float>(Shape{5, 3, 8, 8}, 1), Mode::eval).shape() == Shape{5, 3});
  Model<float> vgg(make(Family::vgg16, 4, 0.25, 7, 32));
  CHECK(vgg.forward(testutil::random_tensor<float>(Shape{2, 3, 32, 32}, 2), Mode::eval).shape() == Shape{2, 7});
  CHECK_THROWS_AS(vgg.forward(Tensor(Shape{2, 3, 16, 16}), Mode::eval), ShapeError);
}

TEST_CASE("kss 9 masked model equals the unmasked model") {
  auto spec = make(Family::mini_resnet, 9, 1.0, 4, 8);
  Model<float> masked(spec);
  spec.masked = false;
  Model<float> plain(spec);
  for (const auto& p : plain.params()) CHECK(p.mask == nullptr);
  const auto x = testutil::random_tensor<float>(Shape{3, 3, 8, 8}, 3);
  CHECK(masked.forward(x, Mode::train) == plain.forward(x, Mode::train));
}

TEST_CASE("backward requires a training forward pass") {
  Model<float> m(make(Family::small_cnn, 4, 1.0, 2, 8));
  CHECK_THROWS_AS(m.backward(Tensor(Shape{1, 2})), std::logic_error);
  m.forward(Tensor(Shape{1, 3, 8, 8}), Mode::eval);
  CHECK_THROWS_AS(m.backward(Tensor(Shape{1, 2})), std::logic_error);
}

TEST_CASE("initialization is seeded") {
  const auto spec = make(Family::small_cnn, 4, 1.0, 2, 8);
  Model<float> a(spec), b(spec);
  auto spec2 = spec;
  spec2.base_seed = 22;
  Model<float> c(spec2);
  const auto pa = a.params(), pb = b.params(), pc = c.params();
  CHECK(pa[0].param->value == pb[0].param->value);
  CHECK_FALSE(pa[0].param->value == pc[0].param->value);
}

TEST_CASE("infeasible coverage is reported") {
  // The stem sees 3 input channels; 3 * kss < 9 for kss 2.
  Model<float> m(make(Family::small_cnn, 2, 1.0, 2, 8));
  CHECK_FALSE(m.warnings().empty());
  Model<float> ok(make(Family::small_cnn, 3, 1.0, 2, 8));
  CHECK(ok.warnings().empty());
}
