#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mim/image.h"
#include "mim/sampler.h"

namespace mim {

/// Row-major boolean grid.
struct Mask2D {
  int height = 0;
  int width = 0;
  std::vector<bool> cells;

  Mask2D() = default;
  Mask2D(int h, int w, bool fill = false)
      : height(h), width(w), cells(static_cast<std::size_t>(h) * w, fill) {}
  bool at(int y, int x) const { return cells[static_cast<std::size_t>(y) * width + x]; }
  std::int64_t count() const;
  /// Nonzero pixels of a single-channel image.
  static Mask2D from_image(const Image& img);
  Image to_image() const;
};

/// A token cell is set iff any pixel of its f×f patch is set. Throws when
/// the result is empty unless allow_empty.
Mask2D project_mask(const Mask2D& pixels, int f, bool allow_empty = false);

struct EditRequest {
  Image source;
  Mask2D region;  // pixel space
  std::string caption;
  SamplerConfig sampler;
};

struct EditResult {
  TokenGrid source_tokens;
  TokenGrid tokens;
  Image image;
  DecodeTrace trace;
};

/// Replaces the masked token cells of grid.
TokenGrid apply_token_mask(const TokenGrid& grid, const Mask2D& tokens);

/// Masked decoding restricted to the region; other tokens keep their source
/// values exactly.
EditResult edit_tokens(const TokenGrid& source, const Mask2D& token_mask, Denoiser& denoiser,
                       const SamplerConfig& config);

EditResult edit(const EditRequest& request, const T2IModel<float>& model,
                const VqTokenizer& tokenizer, bool allow_empty = false);

/// Token mask of the ⌈strength·N⌉ source cells whose tokens the model finds
/// least likely under the caption (guided logits of the unmasked source).
/// Ties go to the lower position.
Mask2D confidence_mask(const TokenGrid& source, Denoiser& denoiser, double strength,
                       double cfg_scale);

/// Edit without a user mask: confidence_mask, then edit_tokens.
EditResult edit_mask_free(const Image& source, const std::string& caption, double strength,
                          const SamplerConfig& config, const T2IModel<float>& model,
                          const VqTokenizer& tokenizer);

}  // namespace mim
