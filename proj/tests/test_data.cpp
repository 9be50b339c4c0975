#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "psconv/data.hpp"
#include "psconv/error.hpp"
#include "psconv/raw_io.hpp"
#include "test_util.hpp"

using namespace psconv;

namespace {

std::vector<CifarRecord> fixture(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CifarRecord> recs(n);
  for (auto& r : recs) {
    r.label = static_cast<std::uint8_t>(rng.below(10));
    for (auto& p : r.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  }
  return recs;
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("cifar records round trip byte for byte") {
  const auto recs = fixture(5, 1);
  const auto bytes = serialize_cifar_records(recs);
  CHECK(bytes.size() == 5 * 3073);
  const auto parsed = parse_cifar_records(bytes);
  REQUIRE(parsed.size() == 5);
  CHECK(serialize_cifar_records(parsed) == bytes);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(parsed[i].label == recs[i].label);
    CHECK(parsed[i].pixels == recs[i].pixels);
  }
}

TEST_CASE("cifar layout: label byte then R, G, B planes") {
  std::vector<std::uint8_t> bytes(3073, 0);
  bytes[0] = 7;
  bytes[1] = 255;            // R(0,0)
  bytes[1 + 1024 + 33] = 51;  // G(1,1)
  bytes[1 + 2048 + 1023] = 102;  // B(31,31)
  const auto recs = parse_cifar_records(bytes);
  const auto ds = cifar_to_dataset(recs);
  CHECK(ds.labels[0] == 7);
  CHECK(ds.images.at(0, 0, 0, 0) == 1.0f);
  CHECK(ds.images.at(0, 1, 1, 1) == doctest::Approx(0.2));
  CHECK(ds.images.at(0, 2, 31, 31) == doctest::Approx(0.4));
  CHECK(ds.class_count == 10);
}

TEST_CASE("cifar parse errors") {
  auto bytes = serialize_cifar_records(fixture(2, 2));
  bytes[3073] = 10;
  CHECK_THROWS_AS(parse_cifar_records(bytes), FormatError);
  bytes.pop_back();
  CHECK_THROWS_AS(parse_cifar_records(bytes), FormatError);

  testutil::TempDir dir("cifar");
  write_bytes(dir / "short.bin", serialize_cifar_records(fixture(5, 3)));
  CHECK_THROWS_AS(read_cifar_batch(dir / "short.bin"), FormatError);
  CHECK_THROWS_AS(read_cifar_batch(dir / "absent.bin"), FormatError);
  CHECK_THROWS_AS(load_cifar10(dir.path()), FormatError);
}

TEST_CASE("channel statistics and standardization") {
  auto t = testutil::random_tensor<float>(Shape{20, 3, 4, 4}, 5, 3.0);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] += static_cast<float>((i / 16) % 3);  // per-channel offset
  const auto stats = compute_channel_stats(t);
  REQUIRE(stats.mean.size() == 3);
  standardize(t, stats);
  const auto after = compute_channel_stats(t);
  for (int c = 0; c < 3; ++c) {
    CHECK(after.mean[c] == doctest::Approx(0.0).epsilon(1e-5).scale(1.0));
    CHECK(after.stddev[c] == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("splits are disjoint, sized and seeded") {
  const auto pool = synth_dataset(100, 4, 2, 1);
  const auto s = make_splits(pool, SplitSpec{70, 20, 3});
  CHECK(s.train.size() == 70);
  CHECK(s.val.size() == 20);
  std::set<std::size_t> seen(s.train_indices.begin(), s.train_indices.end());
  for (auto i : s.val_indices) CHECK(seen.insert(i).second);
  CHECK(make_splits(pool, SplitSpec{70, 20, 3}).train_indices == s.train_indices);
  CHECK_FALSE(make_splits(pool, SplitSpec{70, 20, 4}).train_indices == s.train_indices);
  CHECK_THROWS_AS(make_splits(pool, SplitSpec{90, 20, 3}), DataError);
  // Labels travel with their images.
  for (std::size_t j = 0; j < s.val.size(); ++j) CHECK(s.val.labels[j] == pool.labels[s.val_indices[j]]);
}

TEST_CASE("default split spec") {
  const SplitSpec s;
  CHECK(s.train_n == 40000);
  CHECK(s.val_n == 10000);
}

TEST_CASE("raw dataset round trip") {
  testutil::TempDir dir("raw");
  const auto ds = synth_dataset(12, 3, 4, 7);
  write_raw_dataset(dir / "x.bin", dir / "y.bin", ds);
  const auto plain = load_raw_dataset(dir / "x.bin", dir / "y.bin", Normalize::none);
  CHECK(plain.images == ds.images);
  CHECK(plain.labels == ds.labels);
  CHECK(plain.class_count == 3);
  const auto norm = load_raw_dataset(dir / "x.bin", dir / "y.bin");
  CHECK(compute_channel_stats(norm.images).stddev[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(load_raw_dataset(dir / "x.bin", dir / "y.bin", Normalize::none, 200).class_count == 200);
}

TEST_CASE("raw dataset errors") {
  testutil::TempDir dir("rawbad");
  const auto ds = synth_dataset(6, 2, 4, 8);
  write_raw_tensor(dir / "x.bin", ds.images);
  write_raw_labels(dir / "few.bin", std::vector<int>{0, 1});
  CHECK_THROWS_AS(load_raw_dataset(dir / "x.bin", dir / "few.bin"), DataError);
  write_raw_labels(dir / "y.bin", ds.labels);
  CHECK_THROWS_AS(load_raw_dataset(dir / "x.bin", dir / "y.bin", Normalize::none, 1), DataError);
  write_raw_tensor(dir / "flat.bin", Tensor(Shape{6, 48}));
  CHECK_THROWS_AS(load_raw_dataset(dir / "flat.bin", dir / "y.bin"), FormatError);
  CHECK_THROWS_AS(read_raw_labels(dir / "none.bin"), FormatError);
}

TEST_CASE("synthetic data is balanced and seeded") {
  const auto a = synth_dataset(101, 4, 3, 5);
  int counts[4] = {};
  for (int l : a.labels) ++counts[l];
  for (int c : counts) CHECK((c == 25 || c == 26));
  CHECK(a.images.shape() == Shape{101, 3, 3, 3});
  const auto b = synth_dataset(101, 4, 3, 5);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK_NOTHROW(a.validate());
}

TEST_CASE("gather builds a batch") {
  const auto ds = synth_dataset(10, 2, 2, 6);
  const std::vector<std::size_t> idx{9, 0};
  std::vector<int> labels;
  const auto batch = ds.gather(idx, labels);
  CHECK(batch.shape() == Shape{2, 3, 2, 2});
  CHECK(labels == std::vector<int>{ds.labels[9], ds.labels[0]});
  CHECK(batch[0] == ds.images[9 * 12]);
}
