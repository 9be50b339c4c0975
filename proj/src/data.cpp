#include "psconv/data.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "psconv/raw_io.hpp"
#include "psconv/rng.hpp"

namespace psconv {

void Dataset::validate() const {
  if (labels.empty()) throw DataError("dataset is empty");
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw DataError("dataset images " + images.shape().to_string() + " do not match " +
                    std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || l >= class_count) throw DataError("label " + std::to_string(l) + " outside class range");
  }
  if (!all_finite(images)) throw DataError("dataset contains non-finite pixels");
}

Tensor Dataset::gather(std::span<const std::size_t> indices, std::vector<int>& labels_out) const {
  const std::size_t per = images.numel() / images.dim(0);
  Tensor batch(Shape{indices.size(), images.dim(1), images.dim(2), images.dim(3)});
  labels_out.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= size()) throw DataError("example index out of range");
    std::copy_n(images.data() + src * per, per, batch.data() + i * per);
    labels_out[i] = labels[src];
  }
  return batch;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw DataError("empty subset");
  Dataset out;
  out.class_count = class_count;
  out.images = gather(indices, out.labels);
  return out;
}

ChannelStats compute_channel_stats(const Tensor& images) {
  const std::size_t n = images.dim(0), channels = images.dim(1), plane = images.dim(2) * images.dim(3);
  ChannelStats s{std::vector<double>(channels), std::vector<double>(channels)};
  const double count = static_cast<double>(n * plane);
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* p = images.data() + (i * channels + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) acc += p[k];
    }
    const double mean = acc / count;
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* p = images.data() + (i * channels + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) sq += (p[k] - mean) * (p[k] - mean);
    }
    s.mean[c] = mean;
    s.stddev[c] = std::sqrt(sq / count);
  }
  return s;
}

void standardize(Tensor& images, const ChannelStats& stats) {
  const std::size_t n = images.dim(0), channels = images.dim(1), plane = images.dim(2) * images.dim(3);
  if (stats.mean.size() != channels) throw ShapeError("channel statistics do not match image channels");
  for (std::size_t c = 0; c < channels; ++c) {
    const double inv = stats.stddev[c] > 0.0 ? 1.0 / stats.stddev[c] : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      float* p = images.data() + (i * channels + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) p[k] = static_cast<float>((p[k] - stats.mean[c]) * inv);
    }
  }
}

// --- CIFAR-10 ----------------------------------------------------------------

std::vector<CifarRecord> parse_cifar_records(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError("CIFAR-10 data of " + std::to_string(bytes.size()) + " bytes is not a whole number of " +
                      std::to_string(kCifarRecordBytes) + "-byte records");
  }
  std::vector<CifarRecord> records(bytes.size() / kCifarRecordBytes);
  for (std::size_t r = 0; r < records.size(); ++r) {
    const std::uint8_t* src = bytes.data() + r * kCifarRecordBytes;
    if (src[0] > 9) throw FormatError("CIFAR-10 record " + std::to_string(r) + " has label " + std::to_string(src[0]));
    records[r].label = src[0];
    std::copy_n(src + 1, kCifarPixels, records[r].pixels.begin());
  }
  return records;
}

std::vector<std::uint8_t> serialize_cifar_records(std::span<const CifarRecord> records) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(records.size() * kCifarRecordBytes);
  for (const auto& r : records) {
    bytes.push_back(r.label);
    bytes.insert(bytes.end(), r.pixels.begin(), r.pixels.end());
  }
  return bytes;
}

std::vector<CifarRecord> read_cifar_batch(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FormatError("missing CIFAR-10 batch file: " + path.string());
  const auto bytes = read_file_bytes(path);
  if (bytes.size() != kCifarBatchRecords * kCifarRecordBytes) {
    throw FormatError(path.string() + ": expected " + std::to_string(kCifarBatchRecords * kCifarRecordBytes) +
                      " bytes, found " + std::to_string(bytes.size()));
  }
  return parse_cifar_records(bytes);
}

Dataset cifar_to_dataset(std::span<const CifarRecord> records) {
  Dataset ds;
  ds.class_count = 10;
  ds.images = Tensor(Shape{records.size(), 3, 32, 32});
  ds.labels.resize(records.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    ds.labels[r] = records[r].label;
    float* dst = ds.images.data() + r * kCifarPixels;
    for (std::size_t p = 0; p < kCifarPixels; ++p) dst[p] = static_cast<float>(records[r].pixels[p]) / 255.0f;
  }
  return ds;
}

Cifar10 load_cifar10(const std::filesystem::path& dir) {
  std::vector<CifarRecord> train;
  train.reserve(5 * kCifarBatchRecords);
  for (int i = 1; i <= 5; ++i) {
    auto batch = read_cifar_batch(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    train.insert(train.end(), batch.begin(), batch.end());
  }
  const auto test = read_cifar_batch(dir / "test_batch.bin");
  Cifar10 out{cifar_to_dataset(train), cifar_to_dataset(test), {}};
  train.clear();
  train.shrink_to_fit();
  out.stats = compute_channel_stats(out.train_pool.images);
  standardize(out.train_pool.images, out.stats);
  standardize(out.test.images, out.stats);
  return out;
}

// --- splits --------------------------------------------------------------------

Splits make_splits(const Dataset& pool, const SplitSpec& spec) {
  if (spec.train_n == 0) throw DataError("train split must be non-empty");
  if (spec.train_n + spec.val_n > pool.size()) {
    throw DataError("split " + std::to_string(spec.train_n) + "+" + std::to_string(spec.val_n) +
                    " exceeds pool of " + std::to_string(pool.size()));
  }
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(spec.shuffle_seed);
  rng.shuffle(std::span(order));
  Splits s;
  s.train_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.train_n));
  s.val_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(spec.train_n),
                       order.begin() + static_cast<std::ptrdiff_t>(spec.train_n + spec.val_n));
  s.train = pool.subset(s.train_indices);
  if (spec.val_n > 0) s.val = pool.subset(s.val_indices);
  return s;
}

// --- raw -----------------------------------------------------------------------

void write_raw_labels(const std::filesystem::path& path, std::span<const int> labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  le::put_u32(out, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) le::put_u32(out, static_cast<std::uint32_t>(l));
  if (!out) throw FormatError("write failed: " + path.string());
}

std::vector<int> read_raw_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  const std::uint32_t count = le::get_u32(in);
  std::vector<int> labels(count);
  for (auto& l : labels) {
    const std::uint32_t v = le::get_u32(in);
    if (v > static_cast<std::uint32_t>(INT32_MAX)) throw FormatError("label value out of range");
    l = static_cast<int>(v);
  }
  return labels;
}

Dataset load_raw_dataset(const std::filesystem::path& images, const std::filesystem::path& labels, Normalize mode,
                         int class_count) {
  Dataset ds;
  ds.images = read_raw_tensor(images);
  if (ds.images.rank() != 4) throw FormatError("raw images must be [N,C,S,S], got " + ds.images.shape().to_string());
  ds.labels = read_raw_labels(labels);
  if (ds.labels.size() != ds.images.dim(0)) {
    throw DataError("label count " + std::to_string(ds.labels.size()) + " does not match image count " +
                    std::to_string(ds.images.dim(0)));
  }
  int max_label = 0;
  for (int l : ds.labels) max_label = std::max(max_label, l);
  ds.class_count = class_count > 0 ? class_count : max_label + 1;
  if (mode == Normalize::standardize) standardize(ds.images, compute_channel_stats(ds.images));
  ds.validate();
  return ds;
}

void write_raw_dataset(const std::filesystem::path& images, const std::filesystem::path& labels, const Dataset& ds) {
  write_raw_tensor(images, ds.images);
  write_raw_labels(labels, ds.labels);
}

// --- synthetic -----------------------------------------------------------------

Dataset synth_dataset(std::size_t n, int classes, std::size_t size, std::uint64_t seed, std::size_t channels) {
  if (n == 0 || classes < 1 || size == 0 || channels == 0) throw std::invalid_argument("synth_dataset needs n, classes, size >= 1");
  Dataset ds;
  ds.class_count = classes;
  ds.images = Tensor(Shape{n, channels, size, size});
  ds.labels.resize(n);
  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span(order));
  const std::size_t per = channels * size * size;
  for (std::size_t i = 0; i < n; ++i) {
    // Balanced labels assigned over a shuffled order.
    ds.labels[order[i]] = static_cast<int>(i % static_cast<std::size_t>(classes));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double offset = static_cast<double>(ds.labels[i]) / classes;
    float* dst = ds.images.data() + i * per;
    for (std::size_t p = 0; p < per; ++p) dst[p] = static_cast<float>(offset + rng.normal());
  }
  return ds;
}

}  // namespace psconv
