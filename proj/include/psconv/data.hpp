#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "psconv/tensor.hpp"

namespace psconv {

struct Dataset {
  Tensor images;            // [N, C, S, S]
  std::vector<int> labels;  // N entries in [0, class_count)
  int class_count = 0;

  std::size_t size() const { return labels.size(); }
  void validate() const;
  // Copies the listed examples into a new dataset.
  Dataset subset(std::span<const std::size_t> indices) const;
  // Gathers examples into a batch tensor (and labels) for training.
  Tensor gather(std::span<const std::size_t> indices, std::vector<int>& labels_out) const;
};

struct ChannelStats {
  std::vector<double> mean, stddev;
};

ChannelStats compute_channel_stats(const Tensor& images);
// (x - mean) / std per channel, in place.
void standardize(Tensor& images, const ChannelStats& stats);

// --- CIFAR-10 binary format -------------------------------------------------

inline constexpr std::size_t kCifarPixels = 3072;  // 1024 R, 1024 G, 1024 B
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarPixels;
inline constexpr std::size_t kCifarBatchRecords = 10000;

struct CifarRecord {
  std::uint8_t label;
  std::array<std::uint8_t, kCifarPixels> pixels;
};

// Parses whole records; throws FormatError if the byte count is not a
// multiple of 3073 or a label byte exceeds 9.
std::vector<CifarRecord> parse_cifar_records(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_cifar_records(std::span<const CifarRecord> records);
// One batch file; must hold exactly 10000 records.
std::vector<CifarRecord> read_cifar_batch(const std::filesystem::path& path);
// Pixels scaled to [0, 1], no standardization.
Dataset cifar_to_dataset(std::span<const CifarRecord> records);

struct Cifar10 {
  Dataset train_pool;  // data_batch_1..5, 50000 images
  Dataset test;        // test_batch, 10000 images
  ChannelStats stats;  // from train_pool, applied to both
};

Cifar10 load_cifar10(const std::filesystem::path& dir);

// --- splits -----------------------------------------------------------------

struct SplitSpec {
  std::size_t train_n = 40000;
  std::size_t val_n = 10000;
  std::uint64_t shuffle_seed = 0;
};

struct Splits {
  Dataset train, val;
  std::vector<std::size_t> train_indices, val_indices;
};

Splits make_splits(const Dataset& pool, const SplitSpec& spec);

// --- raw tensors ------------------------------------------------------------

enum class Normalize { standardize, none };

// images: PSCTENS1 [N,C,S,S] float; labels: u32 count then count x u32.
// class_count is max(label) + 1 unless given.
Dataset load_raw_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                         Normalize mode = Normalize::standardize, int class_count = 0);
void write_raw_labels(const std::filesystem::path& path, std::span<const int> labels);
std::vector<int> read_raw_labels(const std::filesystem::path& path);
void write_raw_dataset(const std::filesystem::path& images, const std::filesystem::path& labels, const Dataset& ds);

// --- synthetic --------------------------------------------------------------

// Class-conditional Gaussian blobs: pixel = c / classes + N(0, 1). Labels
// cycle through the classes, so each class holds n/classes (+1) examples.
Dataset synth_dataset(std::size_t n, int classes, std::size_t size, std::uint64_t seed, std::size_t channels = 3);

}  // namespace psconv
