#include <set>

#include "doctest.h"
#include "json.hpp"
#include "psconv/error.hpp"
#include "psconv/mask.hpp"
#include "test_util.hpp"

using namespace psconv;

namespace {

// Independent count of distinct covered positions per filter.
std::size_t covered(const KernelSupportMask& m, std::size_t o) {
  std::set<std::size_t> pos;
  for (std::size_t i = 0; i < m.in_ch(); ++i)
    for (std::size_t r = 0; r < m.k(); ++r)
      for (std::size_t c = 0; c < m.k(); ++c)
        if (m.test(o, i, r, c)) pos.insert(r * m.k() + c);
  return pos.size();
}

}  // namespace

TEST_CASE("every slice carries exactly kss positions") {
  for (std::size_t kss = 1; kss <= 9; ++kss) {
    const auto m = generate_mask(3, kss, 5, 7, 100 + kss);
    CHECK(m.shape() == Shape{7, 5, 3, 3});
    for (std::size_t o = 0; o < 7; ++o)
      for (std::size_t i = 0; i < 5; ++i) CHECK(m.slice_popcount(o, i) == kss);
  }
}

TEST_CASE("coverage is complete when feasible and maximal otherwise") {
  for (std::size_t in_ch : {1, 2, 3, 4, 16}) {
    for (std::size_t kss = 1; kss <= 9; ++kss) {
      const auto m = generate_mask(3, kss, in_ch, 8, 7);
      const auto report = check_coverage(m);
      CHECK(report.positions == 9);
      CHECK(report.feasible == (in_ch * kss >= 9));
      for (std::size_t o = 0; o < 8; ++o) {
        CHECK(covered(m, o) == std::min<std::size_t>(in_ch * kss, 9));
        CHECK(report.covered[o] == covered(m, o));
      }
      CHECK(report.all_covered() == report.feasible);
    }
  }
}

TEST_CASE("generation is deterministic per seed") {
  CHECK(generate_mask(3, 4, 16, 8, 42) == generate_mask(3, 4, 16, 8, 42));
  CHECK_FALSE(generate_mask(3, 4, 16, 8, 42) == generate_mask(3, 4, 16, 8, 43));
}

TEST_CASE("kss equal to k*k gives the dense mask") {
  const auto m = generate_mask(3, 9, 4, 4, 1);
  CHECK(m.is_dense());
  for (auto b : m.bits()) CHECK(b == 1);
}

TEST_CASE("invalid arguments are rejected") {
  CHECK_THROWS_AS(generate_mask(3, 0, 4, 4, 1), ShapeError);
  CHECK_THROWS_AS(generate_mask(3, 10, 4, 4, 1), ShapeError);
  CHECK_THROWS_AS(generate_mask(3, 4, 0, 4, 1), ShapeError);
  // A slice with the wrong popcount violates regularity.
  std::vector<std::uint8_t> bits(9, 0);
  bits[0] = bits[1] = 1;
  CHECK_THROWS_AS(KernelSupportMask(1, 1, 3, 3, 0, bits), ShapeError);
}

TEST_CASE("apply_mask zeroes exactly the off-support positions") {
  const auto m = generate_mask(3, 2, 3, 4, 9);
  auto w = testutil::random_tensor<float>(Shape{4, 3, 3, 3}, 3);
  for (auto& v : w.values()) v += 2.0f;  // no accidental zeros
  const auto masked = apply_mask(w, m);
  for (std::size_t i = 0; i < w.numel(); ++i) CHECK(masked[i] == (m.bits()[i] ? w[i] : 0.0f));
  apply_mask_inplace(w, m);
  CHECK(w == masked);
  CHECK_THROWS_AS(apply_mask(Tensor(Shape{4, 3, 3, 2}), m), ShapeError);
}

TEST_CASE("as_tensor mirrors the bitset") {
  const auto m = generate_mask(3, 5, 2, 3, 4);
  const auto t = m.as_tensor<float>();
  CHECK(t.shape() == m.shape());
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(t[i] == float(m.bits()[i]));
}

TEST_CASE("serialization round trip") {
  const auto m = generate_mask(3, 4, 20, 64, 77);
  const auto text = mask_serialize(m);
  CHECK(mask_deserialize(text) == m);
  const auto j = nlohmann::json::parse(text);
  CHECK(j.at("bits").get<std::string>().size() == (20 * 64 * 9 + 7) / 8 * 2);

  testutil::TempDir dir("mask");
  save_mask(dir / "m.psmask.json", m);
  CHECK(load_mask(dir / "m.psmask.json") == m);
}

TEST_CASE("packing is MSB first") {
  std::vector<std::uint8_t> bits(9, 0);
  bits[0] = 1;  // kss = 1, position (0, 0)
  const KernelSupportMask m(1, 1, 3, 1, 0, bits);
  const auto j = nlohmann::json::parse(mask_serialize(m));
  CHECK(j.at("bits") == "8000");
}

TEST_CASE("corrupted mask documents are rejected") {
  const auto m = generate_mask(3, 4, 2, 2, 5);
  auto j = nlohmann::json::parse(mask_serialize(m));
  auto hex = j.at("bits").get<std::string>();
  SUBCASE("not json") { CHECK_THROWS_AS(mask_deserialize("{nope"), FormatError); }
  SUBCASE("missing field") {
    j.erase("kss");
    CHECK_THROWS_AS(mask_deserialize(j.dump()), FormatError);
  }
  SUBCASE("non-hex") {
    hex[0] = 'z';
    j["bits"] = hex;
    CHECK_THROWS_AS(mask_deserialize(j.dump()), FormatError);
  }
  SUBCASE("wrong length") {
    j["bits"] = hex + "00";
    CHECK_THROWS_AS(mask_deserialize(j.dump()), FormatError);
  }
  SUBCASE("set padding bits") {
    // 36 bits use 4.5 bytes; the low nibble of the last byte is padding.
    hex.back() = 'f';
    j["bits"] = hex;
    CHECK_THROWS_AS(mask_deserialize(j.dump()), FormatError);
  }
  SUBCASE("slice popcount disagrees with kss") {
    j["kss"] = 3;
    CHECK_THROWS_AS(mask_deserialize(j.dump()), FormatError);
  }
}
