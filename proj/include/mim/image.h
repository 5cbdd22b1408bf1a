#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mim/tensor.h"

namespace mim {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit interleaved pixels, row-major, channels = 3 (RGB) or 1 (gray).
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int h, int w, int c) : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c) {}

  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool operator==(const Image&) const = default;
};

void write_ppm(const std::filesystem::path& path, const Image& image);
void write_pgm(const std::filesystem::path& path, const Image& image);
/// Reads P6 or P5 with maxval 255.
Image read_pnm(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);
/// Dispatches on the extension (.png, otherwise PNM).
Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image);

/// [B, 3, H, W] in [0, 1].
Tensor images_to_tensor(const std::vector<Image>& images);
/// Rounds to nearest and clamps.
std::vector<Image> tensor_to_images(const Tensor& x);

}  // namespace mim
