#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "json.hpp"
#include "mim/checkpoint.h"
#include "mim/image.h"
#include "mim/nn.h"
#include "mim/token_grid.h"

namespace mim {

struct VqConfig {
  int image_size = 32;
  int downsample_f = 4;
  int codebook_K = 256;
  int embed_D = 64;
  double commitment_beta = 0.25;
  int base_channels = 32;

  void check() const;
  int grid_side() const { return image_size / downsample_f; }
  nlohmann::json to_json() const;
  static VqConfig from_json(const nlohmann::json& j);
};

struct Quantized {
  std::vector<std::int64_t> indices;  // per latent vector, [B·h·w] row-major
  Tensor quantized;                   // straight-through, [B, D, h, w]
  Tensor codebook_loss;               // mean ‖sg(z) − e‖²
  Tensor commitment_loss;             // mean ‖z − sg(e)‖²
};

/// Nearest codebook row for every spatial vector of latents [B, D, h, w];
/// the lowest index wins ties. Output values equal the codebook rows, while
/// gradients pass to the latents as if quantization were the identity.
Quantized quantize(const Tensor& latents, const Tensor& codebook);

/// Index of the nearest row of codebook [K, D] to v (squared distances in
/// double, strict comparison so the lowest index wins).
std::int64_t nearest_code(std::span<const float> v, const Tensor& codebook);

class VqTokenizer {
 public:
  VqTokenizer(const VqConfig& config, std::uint64_t seed);

  const VqConfig& config() const { return config_; }
  ParamStore<float>& params() { return params_; }
  const ParamStore<float>& params() const { return params_; }
  const Tensor& codebook() const { return codebook_; }

  /// images [B, 3, H, W] in [0, 1] -> latents [B, D, H/f, W/f]
  Tensor encode_latents(const Tensor& images) const;
  Tensor decode_latents(const Tensor& latents) const;

  std::vector<TokenGrid> encode(const Tensor& images) const;
  /// Complete grids only; pixels clamped to [0, 1].
  Tensor decode(const std::vector<TokenGrid>& grids) const;

  struct Losses {
    Tensor total;
    double reconstruction = 0;
    double codebook = 0;
    double commitment = 0;
    std::vector<std::int64_t> indices;
  };
  Losses loss(const Tensor& images) const;

  /// Replaces the codebook with K latent vectors drawn from these images.
  void init_codebook_from(const Tensor& images, Rng& rng);

  Checkpoint to_checkpoint() const;
  void write_into(Checkpoint& ckpt, const std::string& prefix) const;
  static VqTokenizer from_checkpoint(const Checkpoint& ckpt, const std::string& prefix = "");

 private:
  struct Conv {
    Tensor weight, bias;
    int stride = 1, pad = 0;
    bool transposed = false;
    Tensor operator()(const Tensor& x) const;
  };
  struct ResBlock {
    Conv a, b;
    Tensor operator()(const Tensor& x) const;
  };

  Conv conv(const std::string& name, int in, int out, int k, int stride, int pad, Rng& rng);
  Conv conv_t(const std::string& name, int in, int out, int k, int stride, int pad, Rng& rng);

  VqConfig config_;
  ParamStore<float> params_;
  std::vector<Conv> down_;
  ResBlock enc_res_;
  Conv enc_out_;
  Conv dec_in_;
  ResBlock dec_res_;
  std::vector<Conv> up_;
  Tensor codebook_;
};

struct VqTrainConfig {
  int steps = 3000;
  int batch = 32;
  double lr = 1e-3;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  bool data_init = true;
  int log_every = 100;
};

struct VqTrainResult {
  std::vector<double> loss_curve;  // total loss per step
  std::vector<double> recon_curve;
  std::vector<std::int64_t> usage;  // codebook histogram over the training set
};

using TrainLog = std::function<void(const std::string&)>;

/// Trains the tokenizer in place. A non-finite loss aborts with
/// NumericError naming the step.
VqTrainResult train_tokenizer(VqTokenizer& tok, const std::vector<Image>& dataset,
                              const VqTrainConfig& cfg, const TrainLog& log = {});

/// Codebook histogram of encode() over the images.
std::vector<std::int64_t> codebook_usage(const VqTokenizer& tok, const std::vector<Image>& images);
double reconstruction_mse(const VqTokenizer& tok, const std::vector<Image>& images);

}  // namespace mim
