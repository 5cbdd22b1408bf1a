#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mim/nn.h"
#include "mim/schedule.h"
#include "mim/text.h"
#include "mim/token_grid.h"

namespace mim {

struct ModelConfig {
  int width = 128;
  int heads = 4;
  int mm_depth = 2;
  int sm_depth = 4;
  double rope_base = 10000.0;
  int codebook_K = 256;
  int text_width = 128;
  int cond_width = 128;
  int mlp_ratio = 4;
  int sin_dim = 64;  // per sinusoidal condition channel
  bool compression_enabled = true;
  int compression_threshold = 16;

  void check() const;
  int head_dim() const { return width / heads; }
  bool compresses(int grid_side) const {
    return compression_enabled && grid_side >= compression_threshold;
  }
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct MicroConditions {
  double original_h = 32;
  double original_w = 32;
  double crop_x = 0;
  double crop_y = 0;
  double preference = 1.0;  // clamped to [0, 1]
};

struct ConditionBundle {
  MicroConditions micro;
  MaskRate rate;
};

/// Adaptive-norm transformer block. Multi-modal blocks keep a separate text
/// stream with its own parameters and attend jointly over [text; image];
/// single-modal blocks carry the image stream only.
template <typename T>
class Block {
 public:
  Block() = default;
  Block(ParamStore<T>& store, const std::string& prefix, const ModelConfig& config,
        bool multimodal, Rng& rng);

  bool multimodal() const { return multimodal_; }

  struct State {
    BasicTensor<T> image;  // [B, N, D]
    BasicTensor<T> text;   // [B, L, D], multi-modal blocks only
  };

  /// positions: L text positions followed by N image positions.
  State operator()(const State& in, const BasicTensor<T>& y,
                   const std::vector<std::int64_t>& positions) const;

  /// Joint attention weights [B, H, L+N, L+N] of the first sub-layer.
  BasicTensor<T> attention_weights(const State& in, const BasicTensor<T>& y,
                                   const std::vector<std::int64_t>& positions) const;

 private:
  struct Stream {
    Linear<T> modulation;  // y -> 6·D (shift, scale, gate) × 2, zero-initialized
    Linear<T> qkv, out;
    BasicTensor<T> q_gain, k_gain;
    FeedForward<T> ff;
  };
  struct Prepared {
    BasicTensor<T> q, k, v;  // [B, H, L+N, d]
    std::vector<BasicTensor<T>> mods;  // per stream, [B, 6·D]
  };

  Stream make_stream(ParamStore<T>& store, const std::string& prefix, Rng& rng);
  Prepared prepare(const State& in, const BasicTensor<T>& y,
                   const std::vector<std::int64_t>& positions) const;

  ModelConfig config_;
  bool multimodal_ = false;
  Stream image_, text_;
};

template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(ParamStore<T>& store, const std::string& prefix, const ModelConfig& config, Rng& rng);

  const ModelConfig& config() const { return config_; }
  const std::vector<Block<T>>& blocks() const { return blocks_; }

  /// [B, N, D]; grids flattened row-major, index K selects the mask row.
  BasicTensor<T> embed_tokens(const std::vector<TokenGrid>& grids) const;

  /// y = MLP([pooled, sin(h), sin(w), sin(crop_x), sin(crop_y),
  ///          sin(1000·preference), sin(level)]) -> [B, cond_width]
  BasicTensor<T> condition(const BasicTensor<T>& pooled,
                           const std::vector<ConditionBundle>& bundles) const;

  /// x: [B, h·w, D] -> [B, h·w/4, D] and back.
  BasicTensor<T> compress(const BasicTensor<T>& x, int h, int w) const;
  BasicTensor<T> decompress(const BasicTensor<T>& x, int h, int w) const;

  /// Logits [B, N, K].
  BasicTensor<T> forward(const std::vector<TokenGrid>& grids, const TextEmbedding<T>& text,
                         const std::vector<ConditionBundle>& bundles) const;

  /// The condition-free path used by the identity-at-init check:
  /// head(norm(decompress(compress(embed)))).
  BasicTensor<T> bypass(const std::vector<TokenGrid>& grids) const;

 private:
  ModelConfig config_;
  BasicTensor<T> table_;  // [K + 1, D]
  Linear<T> text_in_;
  Linear<T> cond_up_, cond_out_;
  BasicTensor<T> down_w_, down_b_, up_w_, up_b_;
  std::vector<Block<T>> blocks_;
  Linear<T> final_mod_;  // y -> 2·D (shift, scale), zero-initialized
  Linear<T> head_;
};

/// Channel-last features [B, h·w, D] <-> [B, D, h, w].
template <typename T>
BasicTensor<T> tokens_to_map(const BasicTensor<T>& x, int h, int w);
template <typename T>
BasicTensor<T> map_to_tokens(const BasicTensor<T>& x);

}  // namespace mim
