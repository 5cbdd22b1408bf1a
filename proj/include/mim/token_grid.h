#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mim {

/// Codebook indices in [0, K]; the value K marks a masked cell.
struct TokenGrid {
  int height = 0;
  int width = 0;
  int codebook_size = 0;
  std::vector<std::int64_t> indices;  // row-major

  TokenGrid() = default;
  TokenGrid(int h, int w, int k, std::int64_t fill = 0)
      : height(h), width(w), codebook_size(k),
        indices(static_cast<std::size_t>(h) * w, fill) {}
  static TokenGrid fully_masked(int h, int w, int k) { return TokenGrid(h, w, k, k); }

  std::int64_t size() const { return static_cast<std::int64_t>(indices.size()); }
  std::int64_t mask_index() const { return codebook_size; }
  bool masked(std::int64_t i) const { return indices[i] == codebook_size; }
  std::int64_t masked_count() const;
  std::vector<bool> mask() const;
  void check() const;

  bool operator==(const TokenGrid&) const = default;
};

/// (h / f)·(w / f); throws unless both extents divide.
std::int64_t token_count(std::int64_t image_h, std::int64_t image_w, std::int64_t f);

void write_token_grid(const std::filesystem::path& path, const TokenGrid& grid);
TokenGrid read_token_grid(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_token_grid(const TokenGrid& grid);
TokenGrid deserialize_token_grid(const std::vector<std::uint8_t>& bytes);

}  // namespace mim
