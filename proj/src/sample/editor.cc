#include "mim/editor.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mim {

std::int64_t Mask2D::count() const { return std::count(cells.begin(), cells.end(), true); }

Mask2D Mask2D::from_image(const Image& img) {
  Mask2D m(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        if (img.at(y, x, c) != 0) m.cells[static_cast<std::size_t>(y) * img.width + x] = true;
  return m;
}

Image Mask2D::to_image() const {
  Image img(height, width, 1);
  for (std::size_t i = 0; i < cells.size(); ++i) img.pixels[i] = cells[i] ? 255 : 0;
  return img;
}

Mask2D project_mask(const Mask2D& pixels, int f, bool allow_empty) {
  if (f < 1 || pixels.height % f != 0 || pixels.width % f != 0) {
    throw std::invalid_argument("project_mask: extents " + std::to_string(pixels.height) + "x" +
                                std::to_string(pixels.width) + " not divisible by " +
                                std::to_string(f));
  }
  Mask2D out(pixels.height / f, pixels.width / f);
  for (int y = 0; y < pixels.height; ++y)
    for (int x = 0; x < pixels.width; ++x)
      if (pixels.at(y, x)) out.cells[static_cast<std::size_t>(y / f) * out.width + x / f] = true;
  if (!allow_empty && out.count() == 0) throw std::invalid_argument("project_mask: empty region");
  return out;
}

TokenGrid apply_token_mask(const TokenGrid& grid, const Mask2D& tokens) {
  if (tokens.height != grid.height || tokens.width != grid.width) {
    throw ShapeError("apply_token_mask: mask " + std::to_string(tokens.height) + "x" +
                     std::to_string(tokens.width) + " for grid " + std::to_string(grid.height) +
                     "x" + std::to_string(grid.width));
  }
  TokenGrid out = grid;
  for (std::size_t i = 0; i < tokens.cells.size(); ++i)
    if (tokens.cells[i]) out.indices[i] = out.mask_index();
  return out;
}

EditResult edit_tokens(const TokenGrid& source, const Mask2D& token_mask, Denoiser& denoiser,
                       const SamplerConfig& config) {
  if (source.masked_count() != 0) throw std::invalid_argument("edit: source grid has masked cells");
  EditResult out;
  out.source_tokens = source;
  out.tokens = decode_grid(apply_token_mask(source, token_mask), denoiser, config, out.trace);
  return out;
}

namespace {

void decode_image(EditResult& r, const VqTokenizer& tokenizer) {
  NoGradGuard guard;
  r.image = tensor_to_images(tokenizer.decode({r.tokens})).at(0);
}

TokenGrid encode_source(const Image& source, const VqTokenizer& tokenizer) {
  const int size = tokenizer.config().image_size;
  if (source.height != size || source.width != size || source.channels != 3) {
    throw ShapeError("edit: source must be " + std::to_string(size) + "x" +
                     std::to_string(size) + " RGB");
  }
  NoGradGuard guard;
  return tokenizer.encode(images_to_tensor({source})).at(0);
}

}  // namespace

EditResult edit(const EditRequest& request, const T2IModel<float>& model,
                const VqTokenizer& tokenizer, bool allow_empty) {
  if (request.region.height != request.source.height ||
      request.region.width != request.source.width) {
    throw ShapeError("edit: region extents differ from the image");
  }
  const auto token_mask =
      project_mask(request.region, tokenizer.config().downsample_f, allow_empty);
  const auto source = encode_source(request.source, tokenizer);
  ModelDenoiser denoiser(model, request.caption);
  auto out = edit_tokens(source, token_mask, denoiser, request.sampler);
  decode_image(out, tokenizer);
  return out;
}

Mask2D confidence_mask(const TokenGrid& source, Denoiser& denoiser, double strength,
                       double cfg_scale) {
  if (!(strength > 0 && strength <= 1)) {
    throw std::invalid_argument("confidence_mask: strength must lie in (0, 1]");
  }
  const MaskRate rate = make_rate(0.0);
  const auto g = cfg_mix(denoiser.logits(source, true, rate), denoiser.logits(source, false, rate),
                         cfg_scale);
  const int k = denoiser.codebook_size();
  const std::int64_t n = source.size();
  std::vector<std::pair<double, std::int64_t>> scored;
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = g.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0;
    for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    scored.push_back({std::exp(row[source.indices[i]] - mx) / z, i});
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  const auto count = static_cast<std::int64_t>(std::ceil(strength * static_cast<double>(n)));
  Mask2D mask(source.height, source.width);
  for (std::int64_t c = 0; c < std::min(count, n); ++c) mask.cells[scored[c].second] = true;
  return mask;
}

EditResult edit_mask_free(const Image& source, const std::string& caption, double strength,
                          const SamplerConfig& config, const T2IModel<float>& model,
                          const VqTokenizer& tokenizer) {
  const auto tokens = encode_source(source, tokenizer);
  ModelDenoiser denoiser(model, caption);
  const auto mask = confidence_mask(tokens, denoiser, strength, config.cfg_scale);
  auto out = edit_tokens(tokens, mask, denoiser, config);
  decode_image(out, tokenizer);
  return out;
}

}  // namespace mim
