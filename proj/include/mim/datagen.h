#pragma once

#include <array>
#include <filesystem>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mim/image.h"

namespace mim {

enum class Shape2D { circle, square, triangle };
enum class Placement { center, top_left, top_right, bottom_left, bottom_right };
enum class Size { small, large };

inline constexpr int kPaletteSize = 8;

struct Rgb {
  std::uint8_t r, g, b;
};

struct NamedColor {
  std::string_view name;
  Rgb rgb;
};

const std::array<NamedColor, kPaletteSize>& palette();
std::string_view shape_name(Shape2D s);
std::string_view placement_name(Placement p);
std::string_view size_name(Size s);

struct SceneSpec {
  Shape2D shape = Shape2D::circle;
  int fill = 0;        // palette index
  int background = 1;  // palette index, != fill
  Placement placement = Placement::center;
  Size size = Size::large;

  void check() const;
  bool operator==(const SceneSpec&) const = default;
};

/// 3 shapes · 8 fills · 7 backgrounds · 5 placements · 2 sizes.
inline constexpr int kLatticeSize = 1680;

/// Lattice enumeration with size varying fastest, then placement,
/// background, fill, shape.
SceneSpec spec_at(int index);
int spec_index(const SceneSpec& spec);

/// Centre and half-extent in pixels for an image side.
struct Footprint {
  double cx, cy, radius;
};
Footprint footprint(const SceneSpec& spec, int image_size);

/// Whether the pixel whose centre is (x + 0.5, y + 0.5) is inside the shape.
bool covers(const SceneSpec& spec, int image_size, int x, int y);

/// Hard-edged rasterization, no anti-aliasing.
Image render(const SceneSpec& spec, int image_size);

/// "a {size} {color} {shape} at the {position} on a {background} background"
std::string caption(const SceneSpec& spec);

/// Every word any caption can contain.
std::vector<std::string> caption_words();

struct CorpusItem {
  SceneSpec spec;
  Image image;
  std::string caption;
};

/// First n lattice entries after a seeded Fisher–Yates shuffle.
std::vector<CorpusItem> make_corpus(int n, std::uint64_t seed, int image_size = 32);
std::vector<SceneSpec> sample_specs(int n, std::uint64_t seed);

/// {i}.ppm plus captions.txt, one caption per line in index order.
void write_dataset_dir(const std::filesystem::path& dir, const std::vector<CorpusItem>& items);

struct CaptionedImage {
  Image image;
  std::string caption;
};
/// Reads a directory written by write_dataset_dir; throws IoError when an
/// image is missing or the caption count disagrees.
std::vector<CaptionedImage> read_dataset_dir(const std::filesystem::path& dir);

}  // namespace mim
