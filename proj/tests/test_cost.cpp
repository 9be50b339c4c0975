#include "doctest.h"
#include "psconv/cost.hpp"

using namespace psconv;

namespace {

ArchSpec make(Family f, int kss, double width, int classes, int size) {
  ArchSpec s;
  s.family = f;
  s.kss = kss;
  s.width_mult = width;
  s.num_classes = classes;
  s.input_size = size;
  return s;
}

// Oracle: conv + BN + dense classifier counted by hand for a stride-1,
// pad-1 3x3 chain.
std::uint64_t conv_params(std::uint64_t ci, std::uint64_t co, std::uint64_t y) { return ci * co * y; }

}  // namespace

TEST_CASE("8 to 16 channel 3x3 example") {
  CHECK(params_sfcc(8, 16, 3) == 1152);
  CHECK(params_dwc_pwc(8, 16, 3) == 200);
  CHECK(params_gwc_dwc(8, 16, 3, 4) == 432);
  CHECK(flops_gwc_dwc(32, 32, 8, 16, 3, 4) == 442368);
  CHECK(flops_sfcc(32, 32, 8, 16, 3) == 1152u * 1024);
  CHECK(flops_dwc_pwc(32, 32, 8, 16, 3) == 200u * 1024);
  CHECK(params_psconv(8, 16, 4) == 512);
  CHECK(flops_psconv(32, 32, 8, 16, 4) == 512u * 1024);
}

TEST_CASE("psconv reduces to sfcc at kss 9") {
  for (std::uint64_t ci : {3, 64, 512})
    for (std::uint64_t co : {8, 256}) {
      CHECK(params_psconv(ci, co, 9) == params_sfcc(ci, co, 3));
      CHECK(flops_psconv(16, 16, ci, co, 9) == flops_sfcc(16, 16, ci, co, 3));
    }
}

TEST_CASE("formula argument errors") {
  CHECK_THROWS_AS(params_gwc_dwc(8, 16, 3, 3), std::invalid_argument);
  CHECK_THROWS_AS(flops_gwc_dwc(4, 4, 8, 16, 3, 5), std::invalid_argument);
  CHECK_THROWS_AS(flops_sfcc(0, 4, 8, 16, 3), std::invalid_argument);
  CHECK_THROWS_AS(flops_sfcc(1u << 20, 1u << 20, 1u << 20, 1u << 20, 3), std::overflow_error);
}

TEST_CASE("style names round trip") {
  for (auto s : {ConvStyle::sfcc, ConvStyle::psconv, ConvStyle::dwc_pwc, ConvStyle::gwc_dwc, ConvStyle::linear,
                 ConvStyle::other}) {
    CHECK(parse_style(to_string(s)) == s);
  }
  CHECK_THROWS(parse_style("bogus"));
}

TEST_CASE("small cnn counted by hand") {
  const auto r = count_model(make(Family::small_cnn, 4, 1.0, 2, 8));
  // 3->16->16->32->32 at 8,8,4,4 with two 2x2 pools, global pool, fc 32->2.
  const std::uint64_t params = conv_params(3, 16, 4) + conv_params(16, 16, 4) + conv_params(16, 32, 4) +
                               conv_params(32, 32, 4) + 2 * (16 + 16 + 32 + 32) + 32 * 2 + 2;
  const std::uint64_t flops =
      64 * (3 * 16 + 16 * 16) * 4 + 16 * (16 * 32 + 32 * 32) * 4 + 32 * 2;
  CHECK(r.total_params == params);
  CHECK(r.total_flops == flops);
}

TEST_CASE("resnet18 dense totals") {
  const auto r = count_model(make(Family::resnet18, 9, 1.0, 10, 32));
  CHECK(r.total_params == 11173962);
  CHECK(r.total_flops == 555422720);
  CHECK(r.model == "ResNet18_pSC9");
  REQUIRE(r.baseline);
  CHECK(r.flops_reduction_pct() == 0.0);
}

TEST_CASE("reductions against the baseline") {
  const auto r = count_model(make(Family::resnet18, 4, 0.5, 10, 32));
  REQUIRE(r.baseline);
  CHECK(r.baseline->total_params == 11173962);
  CHECK(r.params_reduction_pct() == doctest::Approx(100.0 * (1.0 - double(r.total_params) / 11173962)));
  const auto b4 = count_model(make(Family::resnet18, 4, 1.0, 10, 32), 4);
  CHECK(b4.params_reduction_pct() == doctest::Approx(0.0));
}

TEST_CASE("report json round trip") {
  const auto r = count_model(make(Family::vgg16, 2, 1.0, 200, 64));
  const auto j = to_json(r);
  for (const char* key : {"model", "layers", "total_flops", "total_params", "baseline", "reductions"}) {
    CHECK(j.contains(key));
  }
  const auto back = cost_report_from_json(j);
  CHECK(back.total_flops == r.total_flops);
  CHECK(back.total_params == r.total_params);
  CHECK(back.layers.size() == r.layers.size());
  CHECK(back.baseline->total_params == r.baseline->total_params);
  auto bad = j;
  bad["total_params"] = r.total_params + 1;
  CHECK_THROWS(cost_report_from_json(bad));
}

TEST_CASE("table text lists every costed layer and the totals") {
  const auto r = count_model(make(Family::small_cnn, 4, 1.0, 2, 8));
  const auto text = format_table(r);
  for (const auto& l : r.layers) {
    if (l.flops > 0 || l.params > 0) CHECK(text.find(l.name) != std::string::npos);
  }
  CHECK(text.find(std::to_string(r.total_params)) != std::string::npos);
}

TEST_CASE("bundled reference tables") {
  const auto rows = parse_reference_tables(bundled_reference_tables());
  CHECK(rows.size() == 18);
  std::size_t per_table[5] = {};
  for (const auto& r : rows) ++per_table[r.table];
  CHECK(per_table[1] == 6);
  CHECK(per_table[2] == 6);
  CHECK(per_table[3] == 3);
  CHECK(per_table[4] == 3);
  CHECK_THROWS(parse_reference_tables("{\"version\": 2, \"tables\": []}"));
}

TEST_CASE("comparison flags the sparse FLOP gap") {
  const auto rows = compare_with_published(make(Family::resnet18, 4, 1.0, 10, 32),
                                           parse_reference_tables(bundled_reference_tables()));
  REQUIRE(rows.size() == 6);
  for (const auto& r : rows) CHECK(std::abs(r.params_delta_pct) < 1.0);
  const auto text = format_comparison(rows);
  CHECK(text.find("ResNet18_pSC4") != std::string::npos);
  CHECK(text.find("FLOP gap") != std::string::npos);
}
