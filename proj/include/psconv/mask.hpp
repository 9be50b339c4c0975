#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psconv/tensor.hpp"

namespace psconv {

// Fixed kernel support for one conv layer: a [out_ch, in_ch, k, k] bitset in
// which every (o, i) slice carries exactly kss ones.
class KernelSupportMask {
 public:
  // Validates the regularity invariant; throws ShapeError on violation.
  KernelSupportMask(std::size_t out_ch, std::size_t in_ch, std::size_t k, std::size_t kss,
                    std::uint64_t seed, std::vector<std::uint8_t> bits);

  static KernelSupportMask dense(std::size_t out_ch, std::size_t in_ch, std::size_t k,
                                 std::uint64_t seed = 0);

  std::size_t out_ch() const { return out_ch_; }
  std::size_t in_ch() const { return in_ch_; }
  std::size_t k() const { return k_; }
  std::size_t kss() const { return kss_; }
  std::uint64_t seed() const { return seed_; }
  Shape shape() const { return Shape{out_ch_, in_ch_, k_, k_}; }
  std::size_t size() const { return bits_.size(); }

  // One byte per position, 0 or 1, row-major over (o, i, r, c).
  std::span<const std::uint8_t> bits() const { return bits_; }
  bool test(std::size_t o, std::size_t i, std::size_t r, std::size_t c) const {
    return bits_[((o * in_ch_ + i) * k_ + r) * k_ + c] != 0;
  }
  std::size_t slice_popcount(std::size_t o, std::size_t i) const;
  bool is_dense() const { return kss_ == k_ * k_; }

  template <typename T>
  BasicTensor<T> as_tensor() const;

  friend bool operator==(const KernelSupportMask&, const KernelSupportMask&) = default;

 private:
  std::size_t out_ch_, in_ch_, k_, kss_;
  std::uint64_t seed_;
  std::vector<std::uint8_t> bits_;
};

struct CoverageReport {
  std::size_t positions = 0;             // k*k
  std::vector<std::size_t> covered;      // per filter, distinct positions with any set bit
  bool feasible = false;                 // in_ch * kss >= k*k

  bool all_covered() const;
  std::size_t min_covered() const;
};

// Constrained pseudo-random support. For each filter: positions are visited
// in random order and handed to a random channel with remaining quota, which
// covers every position whenever in_ch*kss >= k*k; the remaining quota of each
// channel is then filled with distinct unused positions of that channel.
KernelSupportMask generate_mask(std::size_t k, std::size_t kss, std::size_t in_ch,
                                std::size_t out_ch, std::uint64_t seed);

CoverageReport check_coverage(const KernelSupportMask& mask);

template <typename T>
BasicTensor<T> apply_mask(const BasicTensor<T>& weights, const KernelSupportMask& mask);
template <typename T>
void apply_mask_inplace(BasicTensor<T>& weights, const KernelSupportMask& mask);

// .psmask.json: {"out_ch","in_ch","k","kss","seed","bits"} where bits is the
// row-major bitset packed MSB-first into bytes and hex encoded.
std::string mask_serialize(const KernelSupportMask& mask);
KernelSupportMask mask_deserialize(std::string_view text);

void save_mask(const std::filesystem::path& path, const KernelSupportMask& mask);
KernelSupportMask load_mask(const std::filesystem::path& path);

}  // namespace psconv
