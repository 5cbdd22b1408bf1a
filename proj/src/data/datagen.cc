#include "mim/datagen.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "mim/rng.h"

namespace mim {

const std::array<NamedColor, kPaletteSize>& palette() {
  static const std::array<NamedColor, kPaletteSize> colors{{
      {"red", {230, 30, 30}},
      {"green", {20, 170, 40}},
      {"blue", {30, 60, 230}},
      {"yellow", {250, 220, 20}},
      {"purple", {140, 40, 190}},
      {"orange", {250, 140, 20}},
      {"white", {255, 255, 255}},
      {"black", {0, 0, 0}},
  }};
  return colors;
}

std::string_view shape_name(Shape2D s) {
  switch (s) {
    case Shape2D::circle: return "circle";
    case Shape2D::square: return "square";
    case Shape2D::triangle: return "triangle";
  }
  return "?";
}

std::string_view placement_name(Placement p) {
  switch (p) {
    case Placement::center: return "center";
    case Placement::top_left: return "top-left";
    case Placement::top_right: return "top-right";
    case Placement::bottom_left: return "bottom-left";
    case Placement::bottom_right: return "bottom-right";
  }
  return "?";
}

std::string_view size_name(Size s) { return s == Size::small ? "small" : "large"; }

void SceneSpec::check() const {
  if (fill < 0 || fill >= kPaletteSize || background < 0 || background >= kPaletteSize) {
    throw std::invalid_argument("scene spec: palette index out of range");
  }
  if (fill == background) throw std::invalid_argument("scene spec: fill equals background");
}

SceneSpec spec_at(int index) {
  if (index < 0 || index >= kLatticeSize) {
    throw std::out_of_range("spec index " + std::to_string(index) + " outside the lattice");
  }
  SceneSpec s;
  s.size = static_cast<Size>(index % 2);
  index /= 2;
  s.placement = static_cast<Placement>(index % 5);
  index /= 5;
  const int bg_slot = index % 7;
  index /= 7;
  s.fill = index % 8;
  s.shape = static_cast<Shape2D>(index / 8);
  s.background = bg_slot < s.fill ? bg_slot : bg_slot + 1;
  return s;
}

int spec_index(const SceneSpec& spec) {
  spec.check();
  const int bg_slot = spec.background < spec.fill ? spec.background : spec.background - 1;
  int index = static_cast<int>(spec.shape);
  index = index * 8 + spec.fill;
  index = index * 7 + bg_slot;
  index = index * 5 + static_cast<int>(spec.placement);
  return index * 2 + static_cast<int>(spec.size);
}

Footprint footprint(const SceneSpec& spec, int image_size) {
  const double s = image_size;
  double cx = s / 2, cy = s / 2;
  switch (spec.placement) {
    case Placement::center: break;
    case Placement::top_left: cx = cy = s / 4; break;
    case Placement::top_right: cx = 3 * s / 4; cy = s / 4; break;
    case Placement::bottom_left: cx = s / 4; cy = 3 * s / 4; break;
    case Placement::bottom_right: cx = cy = 3 * s / 4; break;
  }
  return {cx, cy, spec.size == Size::large ? s / 4 : s / 8};
}

bool covers(const SceneSpec& spec, int image_size, int x, int y) {
  const auto [cx, cy, r] = footprint(spec, image_size);
  const double px = x + 0.5 - cx, py = y + 0.5 - cy;
  switch (spec.shape) {
    case Shape2D::circle:
      return px * px + py * py <= r * r;
    case Shape2D::square:
      return std::abs(px) <= r && std::abs(py) <= r;
    case Shape2D::triangle:
      // apex at the top, base along the bottom edge of the bounding box
      return py <= r && std::abs(px) <= (py + r) / 2;
  }
  return false;
}

Image render(const SceneSpec& spec, int image_size) {
  spec.check();
  if (image_size < 16) throw std::invalid_argument("render: image_size must be >= 16");
  const Rgb fg = palette()[spec.fill].rgb, bg = palette()[spec.background].rgb;
  Image image(image_size, image_size, 3);
  for (int y = 0; y < image_size; ++y) {
    for (int x = 0; x < image_size; ++x) {
      const Rgb c = covers(spec, image_size, x, y) ? fg : bg;
      image.at(y, x, 0) = c.r;
      image.at(y, x, 1) = c.g;
      image.at(y, x, 2) = c.b;
    }
  }
  return image;
}

std::string caption(const SceneSpec& spec) {
  spec.check();
  std::string out = "a ";
  out += size_name(spec.size);
  out += ' ';
  out += palette()[spec.fill].name;
  out += ' ';
  out += shape_name(spec.shape);
  out += " at the ";
  out += placement_name(spec.placement);
  out += " on a ";
  out += palette()[spec.background].name;
  out += " background";
  return out;
}

std::vector<std::string> caption_words() {
  std::set<std::string> words{"a", "at", "the", "on", "background"};
  for (const auto& c : palette()) words.emplace(c.name);
  for (int i = 0; i < 3; ++i) words.emplace(shape_name(static_cast<Shape2D>(i)));
  for (int i = 0; i < 5; ++i) words.emplace(placement_name(static_cast<Placement>(i)));
  for (int i = 0; i < 2; ++i) words.emplace(size_name(static_cast<Size>(i)));
  return {words.begin(), words.end()};
}

std::vector<SceneSpec> sample_specs(int n, std::uint64_t seed) {
  if (n < 0 || n > kLatticeSize) {
    throw std::invalid_argument("make_corpus: n=" + std::to_string(n) + " exceeds the " +
                                std::to_string(kLatticeSize) + " distinct scenes");
  }
  std::vector<int> order(kLatticeSize);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (int i = kLatticeSize - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(order[i], order[j]);
  }
  std::vector<SceneSpec> specs;
  for (int i = 0; i < n; ++i) specs.push_back(spec_at(order[i]));
  return specs;
}

std::vector<CorpusItem> make_corpus(int n, std::uint64_t seed, int image_size) {
  std::vector<CorpusItem> items;
  for (const auto& spec : sample_specs(n, seed)) {
    items.push_back({spec, render(spec, image_size), caption(spec)});
  }
  return items;
}

void write_dataset_dir(const std::filesystem::path& dir, const std::vector<CorpusItem>& items) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream captions(dir / "captions.txt");
  if (!captions) throw IoError("cannot write " + (dir / "captions.txt").string());
  for (std::size_t i = 0; i < items.size(); ++i) {
    write_ppm(dir / (std::to_string(i) + ".ppm"), items[i].image);
    captions << items[i].caption << '\n';
  }
  if (!captions.flush()) throw IoError("cannot write " + (dir / "captions.txt").string());
}

std::vector<CaptionedImage> read_dataset_dir(const std::filesystem::path& dir) {
  std::ifstream in(dir / "captions.txt");
  if (!in) throw IoError("cannot read " + (dir / "captions.txt").string());
  std::vector<CaptionedImage> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto path = dir / (std::to_string(out.size()) + ".ppm");
    out.push_back({read_pnm(path), line});
  }
  if (out.empty()) throw IoError(dir.string() + " holds no captions");
  if (std::filesystem::exists(dir / (std::to_string(out.size()) + ".ppm"))) {
    throw IoError(dir.string() + ": more images than captions");
  }
  return out;
}

}  // namespace mim
