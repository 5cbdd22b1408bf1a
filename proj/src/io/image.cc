#include "mim/image.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

namespace mim {

namespace {

void write_pnm(const std::filesystem::path& path, const Image& image, int channels,
               const char* magic) {
  if (image.channels != channels) {
    throw std::invalid_argument(std::string(magic) + " needs " + std::to_string(channels) +
                                " channel(s), image has " + std::to_string(image.channels));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << magic << "\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// Next header integer, skipping whitespace and comments.
int header_int(std::istream& in, const std::filesystem::path& path) {
  int c;
  while ((c = in.peek()) != EOF) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v = -1;
  if (!(in >> v) || v < 0) throw IoError("malformed PNM header: " + path.string());
  return v;
}

struct FileCloser {
  void operator()(FILE* f) const { if (f) std::fclose(f); }
};

}  // namespace

void write_ppm(const std::filesystem::path& path, const Image& image) {
  write_pnm(path, image, 3, "P6");
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
  write_pnm(path, image, 1, "P5");
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  int channels;
  if (magic == "P6") {
    channels = 3;
  } else if (magic == "P5") {
    channels = 1;
  } else {
    throw IoError("not a binary PPM/PGM file: " + path.string());
  }
  const int w = header_int(in, path);
  const int h = header_int(in, path);
  const int maxval = header_int(in, path);
  if (maxval != 255) throw IoError("only maxval 255 is supported: " + path.string());
  in.get();  // single whitespace before the raster
  Image image(h, w, channels);
  in.read(reinterpret_cast<char*>(image.pixels.data()),
          static_cast<std::streamsize>(image.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(image.pixels.size())) {
    throw IoError("truncated raster: " + path.string());
  }
  return image;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  std::unique_ptr<FILE, FileCloser> f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG write failed: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, image.width, image.height, 8,
               image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, image.pixels.data() + static_cast<std::size_t>(y) * image.width * image.channels);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, FileCloser> f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng init failed");
  }
  Image image;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("PNG read failed: " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  png_set_expand(png);
  const auto color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  png_read_update_info(png, info);
  const int channels = png_get_channels(png, info);
  image = Image(static_cast<int>(png_get_image_height(png, info)),
                static_cast<int>(png_get_image_width(png, info)), channels);
  for (int y = 0; y < image.height; ++y) {
    png_read_row(png, image.pixels.data() + static_cast<std::size_t>(y) * image.width * channels,
                 nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

Image read_image(const std::filesystem::path& path) {
  return path.extension() == ".png" ? read_png(path) : read_pnm(path);
}

void write_image(const std::filesystem::path& path, const Image& image) {
  if (path.extension() == ".png") {
    write_png(path, image);
  } else if (image.channels == 1) {
    write_pgm(path, image);
  } else {
    write_ppm(path, image);
  }
}

Tensor images_to_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const int h = images[0].height, w = images[0].width;
  std::vector<float> data(images.size() * 3 * h * w);
  std::size_t o = 0;
  for (const auto& im : images) {
    if (im.height != h || im.width != w || im.channels != 3) {
      throw ShapeError("images_to_tensor: batch images must share one RGB size");
    }
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) data[o++] = im.at(y, x, c) / 255.0f;
  }
  return Tensor::from_data({static_cast<std::int64_t>(images.size()), 3, h, w}, std::move(data));
}

std::vector<Image> tensor_to_images(const Tensor& x) {
  if (x.rank() != 4 || x.size(1) != 3) {
    throw ShapeError("tensor_to_images: expected [B, 3, H, W], got " + shape_str(x.shape()));
  }
  const int b = static_cast<int>(x.size(0)), h = static_cast<int>(x.size(2)),
            w = static_cast<int>(x.size(3));
  std::vector<Image> out;
  auto d = x.data();
  std::size_t o = 0;
  for (int i = 0; i < b; ++i) {
    Image im(h, w, 3);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const float v = std::clamp(d[o++], 0.0f, 1.0f);
          im.at(y, xx, c) = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    out.push_back(std::move(im));
  }
  return out;
}

}  // namespace mim
