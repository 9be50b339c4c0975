#include "psconv/raw_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace psconv {

namespace le {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

void require(std::istream& in, const char* what) {
  if (!in) throw FormatError(std::string("unexpected end of stream reading ") + what);
}

}  // namespace

void put_u32(std::ostream& out, std::uint32_t v) {
  v = to_le(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_f32s(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  require(in, "u32");
  return to_le(v);
}

void get_f32s(std::istream& in, std::span<float> values) {
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  require(in, "f32 payload");
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : values) f = std::bit_cast<float>(to_le(std::bit_cast<std::uint32_t>(f)));
  }
}

}  // namespace le

void write_raw_tensor(std::ostream& out, const Tensor& t) {
  out.write(kRawTensorMagic, sizeof kRawTensorMagic);
  le::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape().dims()) le::put_u32(out, static_cast<std::uint32_t>(d));
  le::put_f32s(out, t.values());
}

Tensor read_raw_tensor(std::istream& in) {
  char magic[sizeof kRawTensorMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kRawTensorMagic, sizeof magic) != 0) {
    throw FormatError("not a PSCTENS1 tensor file (bad magic)");
  }
  const std::uint32_t rank = le::get_u32(in);
  if (rank < 1 || rank > Shape::kMaxRank) {
    throw FormatError("PSCTENS1 rank out of range: " + std::to_string(rank));
  }
  std::vector<std::size_t> dims(rank);
  for (auto& d : dims) d = le::get_u32(in);
  Shape shape;
  try {
    shape = Shape(dims);
  } catch (const ShapeError& e) {
    throw FormatError(std::string("PSCTENS1 header: ") + e.what());
  }
  Tensor t(shape);
  le::get_f32s(in, t.values());
  return t;
}

void write_raw_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  write_raw_tensor(out, t);
  if (!out) throw FormatError("write failed: " + path.string());
}

Tensor read_raw_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  return read_raw_tensor(in);
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw FormatError("cannot open: " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<std::uint8_t> bytes(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw FormatError("read failed: " + path.string());
  return bytes;
}

}  // namespace psconv
