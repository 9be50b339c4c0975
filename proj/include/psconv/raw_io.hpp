#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "psconv/tensor.hpp"

namespace psconv {

// PSCTENS1: 8-byte magic, u32 rank, rank x u32 dims, then f32 elements.
// All integers and floats little-endian.
inline constexpr char kRawTensorMagic[8] = {'P', 'S', 'C', 'T', 'E', 'N', 'S', '1'};

void write_raw_tensor(std::ostream& out, const Tensor& t);
Tensor read_raw_tensor(std::istream& in);
void write_raw_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_raw_tensor(const std::filesystem::path& path);

namespace le {

void put_u32(std::ostream& out, std::uint32_t v);
void put_f32s(std::ostream& out, std::span<const float> values);
std::uint32_t get_u32(std::istream& in);
void get_f32s(std::istream& in, std::span<float> values);

}  // namespace le

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace psconv
