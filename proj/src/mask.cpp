#include "psconv/mask.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "psconv/rng.hpp"

namespace psconv {

namespace {

void check_dims(std::size_t out_ch, std::size_t in_ch, std::size_t k, std::size_t kss) {
  if (out_ch == 0 || in_ch == 0 || k == 0) throw ShapeError("mask dimensions must be positive");
  if (kss < 1 || kss > k * k) {
    throw ShapeError("kernel support size " + std::to_string(kss) + " outside [1, " +
                     std::to_string(k * k) + "]");
  }
}

constexpr char kHex[] = "0123456789abcdef";

int hex_value(char ch) {
  if (ch >= '0' && ch <= '9') return ch - '0';
  if (ch >= 'a' && ch <= 'f') return ch - 'a' + 10;
  if (ch >= 'A' && ch <= 'F') return ch - 'A' + 10;
  return -1;
}

}  // namespace

KernelSupportMask::KernelSupportMask(std::size_t out_ch, std::size_t in_ch, std::size_t k,
                                     std::size_t kss, std::uint64_t seed,
                                     std::vector<std::uint8_t> bits)
    : out_ch_(out_ch), in_ch_(in_ch), k_(k), kss_(kss), seed_(seed), bits_(std::move(bits)) {
  check_dims(out_ch, in_ch, k, kss);
  if (bits_.size() != out_ch * in_ch * k * k) {
    throw ShapeError("mask bit count " + std::to_string(bits_.size()) + " does not match " +
                     shape().to_string());
  }
  for (auto& b : bits_) {
    if (b > 1) throw ShapeError("mask bits must be 0 or 1");
  }
  for (std::size_t o = 0; o < out_ch_; ++o) {
    for (std::size_t i = 0; i < in_ch_; ++i) {
      if (slice_popcount(o, i) != kss_) {
        throw ShapeError("mask slice (" + std::to_string(o) + "," + std::to_string(i) + ") has " +
                         std::to_string(slice_popcount(o, i)) + " ones, expected " +
                         std::to_string(kss_));
      }
    }
  }
}

KernelSupportMask KernelSupportMask::dense(std::size_t out_ch, std::size_t in_ch, std::size_t k,
                                           std::uint64_t seed) {
  return KernelSupportMask(out_ch, in_ch, k, k * k, seed,
                           std::vector<std::uint8_t>(out_ch * in_ch * k * k, 1));
}

std::size_t KernelSupportMask::slice_popcount(std::size_t o, std::size_t i) const {
  const std::size_t kk = k_ * k_;
  const auto first = bits_.begin() + static_cast<std::ptrdiff_t>((o * in_ch_ + i) * kk);
  return static_cast<std::size_t>(std::count(first, first + static_cast<std::ptrdiff_t>(kk), 1));
}

template <typename T>
BasicTensor<T> KernelSupportMask::as_tensor() const {
  return BasicTensor<T>(shape(), std::vector<T>(bits_.begin(), bits_.end()));
}

template BasicTensor<float> KernelSupportMask::as_tensor<float>() const;
template BasicTensor<double> KernelSupportMask::as_tensor<double>() const;

bool CoverageReport::all_covered() const {
  return std::all_of(covered.begin(), covered.end(), [&](std::size_t c) { return c == positions; });
}

std::size_t CoverageReport::min_covered() const {
  return covered.empty() ? 0 : *std::min_element(covered.begin(), covered.end());
}

KernelSupportMask generate_mask(std::size_t k, std::size_t kss, std::size_t in_ch,
                                std::size_t out_ch, std::uint64_t seed) {
  check_dims(out_ch, in_ch, k, kss);
  const std::size_t kk = k * k;
  if (kss == kk) return KernelSupportMask::dense(out_ch, in_ch, k, seed);
  std::vector<std::uint8_t> bits(out_ch * in_ch * kk, 0);

  Rng rng(seed);
  std::vector<std::size_t> order(kk);
  std::vector<std::size_t> quota(in_ch);
  std::vector<std::size_t> open;  // channels with remaining quota
  std::vector<std::size_t> free_positions;
  open.reserve(in_ch);
  free_positions.reserve(kk);

  for (std::size_t o = 0; o < out_ch; ++o) {
    std::uint8_t* filter = bits.data() + o * in_ch * kk;
    std::fill(quota.begin(), quota.end(), kss);
    open.resize(in_ch);
    std::iota(open.begin(), open.end(), std::size_t{0});

    // Coverage pass: every position goes to some channel while quota lasts.
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span(order));
    for (std::size_t pos : order) {
      if (open.empty()) break;
      const std::size_t pick = rng.below(open.size());
      const std::size_t ch = open[pick];
      filter[ch * kk + pos] = 1;
      if (--quota[ch] == 0) {
        open[pick] = open.back();
        open.pop_back();
      }
    }

    // Fill pass, in channel order.
    for (std::size_t ch = 0; ch < in_ch; ++ch) {
      std::uint8_t* slice = filter + ch * kk;
      if (quota[ch] == 0) continue;
      free_positions.clear();
      for (std::size_t pos = 0; pos < kk; ++pos) {
        if (!slice[pos]) free_positions.push_back(pos);
      }
      for (std::size_t n = 0; n < quota[ch]; ++n) {
        const std::size_t pick = n + rng.below(free_positions.size() - n);
        std::swap(free_positions[n], free_positions[pick]);
        slice[free_positions[n]] = 1;
      }
    }
  }
  return KernelSupportMask(out_ch, in_ch, k, kss, seed, std::move(bits));
}

CoverageReport check_coverage(const KernelSupportMask& mask) {
  const std::size_t kk = mask.k() * mask.k();
  CoverageReport report;
  report.positions = kk;
  report.feasible = mask.in_ch() * mask.kss() >= kk;
  report.covered.resize(mask.out_ch());
  const auto bits = mask.bits();
  for (std::size_t o = 0; o < mask.out_ch(); ++o) {
    std::size_t covered = 0;
    for (std::size_t pos = 0; pos < kk; ++pos) {
      for (std::size_t i = 0; i < mask.in_ch(); ++i) {
        if (bits[(o * mask.in_ch() + i) * kk + pos]) {
          ++covered;
          break;
        }
      }
    }
    report.covered[o] = covered;
  }
  return report;
}

template <typename T>
void apply_mask_inplace(BasicTensor<T>& weights, const KernelSupportMask& mask) {
  if (weights.shape() != mask.shape()) {
    throw ShapeError("mask " + mask.shape().to_string() + " does not match weights " +
                     weights.shape().to_string());
  }
  const auto bits = mask.bits();
  for (std::size_t i = 0; i < weights.numel(); ++i) {
    if (!bits[i]) weights[i] = T{0};
  }
}

template <typename T>
BasicTensor<T> apply_mask(const BasicTensor<T>& weights, const KernelSupportMask& mask) {
  BasicTensor<T> out = weights;
  apply_mask_inplace(out, mask);
  return out;
}

template BasicTensor<float> apply_mask(const BasicTensor<float>&, const KernelSupportMask&);
template BasicTensor<double> apply_mask(const BasicTensor<double>&, const KernelSupportMask&);
template void apply_mask_inplace(BasicTensor<float>&, const KernelSupportMask&);
template void apply_mask_inplace(BasicTensor<double>&, const KernelSupportMask&);

std::string mask_serialize(const KernelSupportMask& mask) {
  const auto bits = mask.bits();
  std::string hex;
  hex.reserve((bits.size() + 7) / 8 * 2);
  for (std::size_t byte = 0; byte < (bits.size() + 7) / 8; ++byte) {
    unsigned v = 0;
    for (std::size_t b = 0; b < 8; ++b) {
      const std::size_t idx = byte * 8 + b;
      v = (v << 1) | (idx < bits.size() ? bits[idx] : 0u);
    }
    hex.push_back(kHex[v >> 4]);
    hex.push_back(kHex[v & 0xF]);
  }
  nlohmann::ordered_json j;
  j["out_ch"] = mask.out_ch();
  j["in_ch"] = mask.in_ch();
  j["k"] = mask.k();
  j["kss"] = mask.kss();
  j["seed"] = mask.seed();
  j["bits"] = hex;
  return j.dump(2) + "\n";
}

KernelSupportMask mask_deserialize(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("mask header is not valid JSON: ") + e.what());
  }
  std::size_t out_ch, in_ch, k, kss;
  std::uint64_t seed;
  std::string hex;
  try {
    out_ch = j.at("out_ch").get<std::size_t>();
    in_ch = j.at("in_ch").get<std::size_t>();
    k = j.at("k").get<std::size_t>();
    kss = j.at("kss").get<std::size_t>();
    seed = j.at("seed").get<std::uint64_t>();
    hex = j.at("bits").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("mask header: ") + e.what());
  }
  if (out_ch == 0 || in_ch == 0 || k == 0) throw FormatError("mask header has zero dimension");
  const std::size_t count = out_ch * in_ch * k * k;
  if (hex.size() != (count + 7) / 8 * 2) {
    throw FormatError("mask payload has " + std::to_string(hex.size()) + " hex digits, expected " +
                      std::to_string((count + 7) / 8 * 2));
  }
  std::vector<std::uint8_t> bits(count);
  for (std::size_t byte = 0; byte < hex.size() / 2; ++byte) {
    const int hi = hex_value(hex[2 * byte]);
    const int lo = hex_value(hex[2 * byte + 1]);
    if (hi < 0 || lo < 0) throw FormatError("mask payload contains non-hex characters");
    const unsigned v = static_cast<unsigned>(hi << 4 | lo);
    for (std::size_t b = 0; b < 8; ++b) {
      const std::size_t idx = byte * 8 + b;
      const std::uint8_t bit = (v >> (7 - b)) & 1u;
      if (idx < count) {
        bits[idx] = bit;
      } else if (bit) {
        throw FormatError("mask payload has set padding bits");
      }
    }
  }
  try {
    return KernelSupportMask(out_ch, in_ch, k, kss, seed, std::move(bits));
  } catch (const ShapeError& e) {
    throw FormatError(std::string("invalid mask: ") + e.what());
  }
}

void save_mask(const std::filesystem::path& path, const KernelSupportMask& mask) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out << mask_serialize(mask);
  if (!out) throw FormatError("write failed: " + path.string());
}

KernelSupportMask load_mask(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return mask_deserialize(ss.str());
}

}  // namespace psconv
