#include "mim/token_grid.h"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

#include "mim/image.h"

namespace mim {

namespace {

constexpr char kMagic[] = "MIMTOK1";
constexpr std::size_t kMagicLen = 7;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::int64_t TokenGrid::masked_count() const {
  return std::count(indices.begin(), indices.end(), static_cast<std::int64_t>(codebook_size));
}

std::vector<bool> TokenGrid::mask() const {
  std::vector<bool> m(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) m[i] = masked(static_cast<std::int64_t>(i));
  return m;
}

void TokenGrid::check() const {
  if (height < 0 || width < 0 ||
      indices.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
    throw std::invalid_argument("token grid: extents do not match index count");
  }
  for (auto v : indices) {
    if (v < 0 || v > codebook_size) {
      throw std::out_of_range("token grid: index " + std::to_string(v) + " outside [0, " +
                              std::to_string(codebook_size) + "]");
    }
  }
}

std::int64_t token_count(std::int64_t image_h, std::int64_t image_w, std::int64_t f) {
  if (f <= 0 || image_h % f != 0 || image_w % f != 0) {
    throw std::invalid_argument("token_count: " + std::to_string(image_h) + "x" +
                                std::to_string(image_w) + " is not divisible by f=" +
                                std::to_string(f));
  }
  return (image_h / f) * (image_w / f);
}

std::vector<std::uint8_t> serialize_token_grid(const TokenGrid& grid) {
  grid.check();
  if (grid.codebook_size > 0xFFFF) {
    throw std::invalid_argument("token grid: K does not fit the 16-bit file format");
  }
  std::vector<std::uint8_t> out(kMagic, kMagic + kMagicLen);
  put_u32(out, static_cast<std::uint32_t>(grid.height));
  put_u32(out, static_cast<std::uint32_t>(grid.width));
  put_u32(out, static_cast<std::uint32_t>(grid.codebook_size));
  for (auto v : grid.indices) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  return out;
}

TokenGrid deserialize_token_grid(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kMagicLen + 12 || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    throw IoError("not a MIMTOK1 token file");
  }
  const std::uint8_t* p = bytes.data() + kMagicLen;
  const auto h = get_u32(p), w = get_u32(p + 4), k = get_u32(p + 8);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (bytes.size() != kMagicLen + 12 + 2 * n) throw IoError("token file has wrong length");
  TokenGrid grid(static_cast<int>(h), static_cast<int>(w), static_cast<int>(k));
  p += 12;
  for (std::size_t i = 0; i < n; ++i) grid.indices[i] = p[2 * i] | (p[2 * i + 1] << 8);
  try {
    grid.check();
  } catch (const std::exception& e) {
    throw IoError(e.what());
  }
  return grid;
}

void write_token_grid(const std::filesystem::path& path, const TokenGrid& grid) {
  const auto bytes = serialize_token_grid(grid);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

TokenGrid read_token_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_token_grid(bytes);
}

}  // namespace mim
