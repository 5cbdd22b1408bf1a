#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mim/backbone.h"
#include "mim/image.h"
#include "mim/schedule.h"
#include "mim/t2i.h"
#include "mim/token_grid.h"
#include "mim/vq.h"

namespace mim {

struct SamplerConfig {
  int steps = 48;
  double cfg_scale = 9.0;
  double temperature = 1.0;  // 0 = greedy
  std::uint64_t seed = 0;

  void check() const;
  nlohmann::json to_json() const;
  static SamplerConfig from_json(const nlohmann::json& j);
};

/// g = u + s·(c − u); s = 0 returns u and s = 1 returns c exactly.
std::vector<float> cfg_mix(const std::vector<float>& cond, const std::vector<float>& uncond,
                           double s);

/// Source of token logits for one grid. Implementations count their calls.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual int codebook_size() const = 0;
  /// Row-major [N, K] logits for the grid, with or without the text.
  virtual std::vector<float> logits(const TokenGrid& grid, bool conditional,
                                    const MaskRate& rate) = 0;
  std::int64_t calls() const { return calls_; }

 protected:
  std::int64_t calls_ = 0;
};

/// Wraps a trained model with one caption and fixed micro-conditions.
class ModelDenoiser : public Denoiser {
 public:
  ModelDenoiser(const T2IModel<float>& model, const std::string& caption,
                const MicroConditions& micro = {});
  int codebook_size() const override { return model_.model_config().codebook_K; }
  std::vector<float> logits(const TokenGrid& grid, bool conditional, const MaskRate& rate) override;

 private:
  const T2IModel<float>& model_;
  MicroConditions micro_;
  TextEmbedding<float> cond_, uncond_;
};

struct StepRecord {
  int step = 0;  // 1-based
  std::int64_t masked_before = 0;
  std::vector<std::int64_t> committed;  // flattened positions, ascending
  double min_confidence = 0;
  int rate_level = 0;
};

struct DecodeTrace {
  std::vector<StepRecord> steps;
  std::int64_t forward_passes = 0;

  /// Columns step,masked_before,committed,min_confidence.
  std::string to_csv() const;
};

/// One decoding step t (1-based): predicts every masked cell under guidance,
/// commits schedule.unmask[t-1] of them by confidence (ties to the lower
/// position) and leaves the rest masked. Cells already committed are never
/// touched.
TokenGrid decode_step(const TokenGrid& grid, Denoiser& denoiser, const InferenceSchedule& schedule,
                      int t, Rng& rng, const SamplerConfig& config, DecodeTrace& trace);

/// Runs the full loop from a partially or fully masked grid. The schedule
/// covers only the masked cells, with T clamped to their count.
TokenGrid decode_grid(const TokenGrid& start, Denoiser& denoiser, const SamplerConfig& config,
                      DecodeTrace& trace);

struct Generation {
  TokenGrid tokens;
  Image image;
  DecodeTrace trace;
};

/// Starts fully masked at the tokenizer's grid size.
Generation generate(const T2IModel<float>& model, const VqTokenizer& tokenizer,
                    const std::string& caption, const SamplerConfig& config,
                    const MicroConditions& micro = {});

}  // namespace mim
