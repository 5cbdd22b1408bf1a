#include "mim/vq.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "mim/optim.h"

namespace mim {

void VqConfig::check() const {
  if (downsample_f != 2 && downsample_f != 4 && downsample_f != 8 && downsample_f != 16) {
    throw std::invalid_argument("vq: downsample_f must be one of 2, 4, 8, 16");
  }
  if (image_size <= 0 || image_size % downsample_f != 0) {
    throw std::invalid_argument("vq: image_size must be divisible by downsample_f");
  }
  if (codebook_K < 2) throw std::invalid_argument("vq: codebook_K must be >= 2");
  if (codebook_K > 0xFFFF) throw std::invalid_argument("vq: codebook_K must fit in 16 bits");
  if (embed_D < 1 || base_channels < 1) throw std::invalid_argument("vq: widths must be positive");
  if (!(commitment_beta >= 0)) throw std::invalid_argument("vq: commitment_beta must be >= 0");
}

nlohmann::json VqConfig::to_json() const {
  return {{"image_size", image_size},         {"downsample_f", downsample_f},
          {"codebook_K", codebook_K},         {"embed_D", embed_D},
          {"commitment_beta", format_real(commitment_beta)},
          {"base_channels", base_channels}};
}

VqConfig VqConfig::from_json(const nlohmann::json& j) {
  VqConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.downsample_f = j.at("downsample_f").get<int>();
  c.codebook_K = j.at("codebook_K").get<int>();
  c.embed_D = j.at("embed_D").get<int>();
  c.commitment_beta = parse_real(j.at("commitment_beta").get<std::string>());
  c.base_channels = j.at("base_channels").get<int>();
  c.check();
  return c;
}

std::int64_t nearest_code(std::span<const float> v, const Tensor& codebook) {
  const auto k = codebook.size(0), d = codebook.size(1);
  auto cb = codebook.data();
  std::int64_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::int64_t j = 0; j < k; ++j) {
    double acc = 0;
    for (std::int64_t c = 0; c < d; ++c) {
      const double diff = static_cast<double>(v[c]) - cb[j * d + c];
      acc += diff * diff;
    }
    if (acc < best_d) {
      best_d = acc;
      best = j;
    }
  }
  return best;
}

namespace {

// Values of e, gradient of the identity with respect to z.
Tensor straight_through(const Tensor& z, const Tensor& e) {
  std::vector<float> out(e.data().begin(), e.data().end());
  return make_result<float>(z.shape(), std::move(out), {z}, "straight_through",
                            [](Node<float>& self) {
                              auto& g = self.inputs[0]->ensure_grad();
                              for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                            });
}

}  // namespace

Quantized quantize(const Tensor& latents, const Tensor& codebook) {
  if (!codebook.defined() || codebook.rank() != 2 || codebook.size(0) == 0) {
    throw std::invalid_argument("quantize: empty codebook");
  }
  if (latents.rank() != 4 || latents.size(1) != codebook.size(1)) {
    throw ShapeError("quantize: latents " + shape_str(latents.shape()) +
                     " do not match codebook " + shape_str(codebook.shape()));
  }
  const auto b = latents.size(0), d = latents.size(1), h = latents.size(2), w = latents.size(3);
  auto z = reshape(permute(latents, {0, 2, 3, 1}), {b * h * w, d});
  Quantized q;
  q.indices.resize(static_cast<std::size_t>(b * h * w));
  auto zd = z.data();
  for (std::int64_t i = 0; i < b * h * w; ++i) {
    q.indices[i] = nearest_code(zd.subspan(i * d, d), codebook);
  }
  auto e = embedding(codebook, std::span<const std::int64_t>(q.indices));
  q.codebook_loss = mse(z.detach(), e);
  q.commitment_loss = mse(z, e.detach());
  q.quantized = permute(reshape(straight_through(z, e), {b, h, w, d}), {0, 3, 1, 2});
  return q;
}

Tensor VqTokenizer::Conv::operator()(const Tensor& x) const {
  return transposed ? conv_transpose2d(x, weight, bias, stride, pad)
                    : conv2d(x, weight, bias, stride, pad);
}

Tensor VqTokenizer::ResBlock::operator()(const Tensor& x) const {
  return add(x, b(silu(a(silu(x)))));
}

VqTokenizer::Conv VqTokenizer::conv(const std::string& name, int in, int out, int k,
                                    int stride, int pad, Rng& rng) {
  Conv c;
  c.weight = params_.add_normal(name + ".weight", {out, in, k, k},
                                static_cast<float>(1.0 / std::sqrt(in * k * k)), rng);
  c.bias = params_.add_zeros(name + ".bias", {out});
  c.stride = stride;
  c.pad = pad;
  return c;
}

VqTokenizer::Conv VqTokenizer::conv_t(const std::string& name, int in, int out, int k,
                                      int stride, int pad, Rng& rng) {
  Conv c;
  const double fan_in = static_cast<double>(in) * k * k / (stride * stride);
  c.weight = params_.add_normal(name + ".weight", {in, out, k, k},
                                static_cast<float>(1.0 / std::sqrt(fan_in)), rng);
  c.bias = params_.add_zeros(name + ".bias", {out});
  c.stride = stride;
  c.pad = pad;
  c.transposed = true;
  return c;
}

VqTokenizer::VqTokenizer(const VqConfig& config, std::uint64_t seed) : config_(config) {
  config_.check();
  Rng rng(seed);
  std::vector<int> widths{3};
  for (int f = config_.downsample_f, i = 0; f > 1; f /= 2, ++i) {
    widths.push_back(std::min(config_.base_channels << i, 4 * config_.base_channels));
  }
  const int stages = static_cast<int>(widths.size()) - 1;
  for (int i = 0; i < stages; ++i) {
    down_.push_back(conv("enc.down" + std::to_string(i), widths[i], widths[i + 1], 4, 2, 1, rng));
  }
  const int top = widths.back();
  enc_res_.a = conv("enc.res.a", top, top, 3, 1, 1, rng);
  enc_res_.b = conv("enc.res.b", top, top, 3, 1, 1, rng);
  enc_out_ = conv("enc.out", top, config_.embed_D, 1, 1, 0, rng);
  codebook_ = params_.add_normal("codebook", {config_.codebook_K, config_.embed_D}, 1.0f, rng);
  dec_in_ = conv("dec.in", config_.embed_D, top, 1, 1, 0, rng);
  dec_res_.a = conv("dec.res.a", top, top, 3, 1, 1, rng);
  dec_res_.b = conv("dec.res.b", top, top, 3, 1, 1, rng);
  for (int i = stages; i > 0; --i) {
    const int out = i == 1 ? 3 : widths[i - 1];
    up_.push_back(conv_t("dec.up" + std::to_string(stages - i), widths[i], out, 4, 2, 1, rng));
  }
}

Tensor VqTokenizer::encode_latents(const Tensor& images) const {
  if (images.rank() != 4 || images.size(1) != 3) {
    throw ShapeError("encode: expected images [B, 3, H, W], got " + shape_str(images.shape()));
  }
  if (images.size(2) % config_.downsample_f != 0 || images.size(3) % config_.downsample_f != 0) {
    throw ShapeError("encode: image extents must be divisible by f=" +
                     std::to_string(config_.downsample_f));
  }
  for (float v : images.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw std::invalid_argument("encode: pixel values must lie in [0, 1]");
    }
  }
  Tensor x = add_scalar(scale(images, 2.0f), -1.0f);
  for (std::size_t i = 0; i < down_.size(); ++i) x = silu(down_[i](x));
  x = enc_res_(x);
  return enc_out_(silu(x));
}

Tensor VqTokenizer::decode_latents(const Tensor& latents) const {
  Tensor x = dec_res_(dec_in_(latents));
  for (std::size_t i = 0; i < up_.size(); ++i) {
    x = up_[i](silu(x));
  }
  return x;
}

std::vector<TokenGrid> VqTokenizer::encode(const Tensor& images) const {
  NoGradGuard ng;
  auto latents = encode_latents(images);
  const auto b = latents.size(0), h = latents.size(2), w = latents.size(3), d = latents.size(1);
  auto z = reshape(permute(latents, {0, 2, 3, 1}), {b * h * w, d});
  std::vector<TokenGrid> grids;
  for (std::int64_t i = 0; i < b; ++i) {
    TokenGrid g(static_cast<int>(h), static_cast<int>(w), config_.codebook_K);
    for (std::int64_t c = 0; c < h * w; ++c) {
      g.indices[c] = nearest_code(z.data().subspan((i * h * w + c) * d, d), codebook_);
    }
    grids.push_back(std::move(g));
  }
  return grids;
}

Tensor VqTokenizer::decode(const std::vector<TokenGrid>& grids) const {
  if (grids.empty()) throw std::invalid_argument("decode: no grids");
  NoGradGuard ng;
  const int h = grids[0].height, w = grids[0].width;
  std::vector<std::int64_t> ids;
  for (const auto& g : grids) {
    g.check();
    if (g.height != h || g.width != w) throw ShapeError("decode: grids differ in size");
    if (g.codebook_size != config_.codebook_K) {
      throw std::invalid_argument("decode: grid K does not match the codebook");
    }
    if (g.masked_count() > 0) {
      throw std::invalid_argument("decode: grid has " + std::to_string(g.masked_count()) +
                                  " masked cells; only complete grids can be decoded");
    }
    ids.insert(ids.end(), g.indices.begin(), g.indices.end());
  }
  const auto b = static_cast<std::int64_t>(grids.size());
  auto e = embedding(codebook_, std::span<const std::int64_t>(ids));
  auto latents = permute(reshape(e, {b, h, w, config_.embed_D}), {0, 3, 1, 2});
  auto out = decode_latents(latents);
  for (auto& v : out.mutable_data()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

VqTokenizer::Losses VqTokenizer::loss(const Tensor& images) const {
  auto q = quantize(encode_latents(images), codebook_);
  auto recon = decode_latents(q.quantized);
  auto rec = mse(recon, images);
  Losses out;
  out.total = add(add(rec, q.codebook_loss),
                  scale(q.commitment_loss, static_cast<float>(config_.commitment_beta)));
  out.reconstruction = rec.item();
  out.codebook = q.codebook_loss.item();
  out.commitment = q.commitment_loss.item();
  out.indices = std::move(q.indices);
  return out;
}

void VqTokenizer::init_codebook_from(const Tensor& images, Rng& rng) {
  NoGradGuard ng;
  auto latents = encode_latents(images);
  const auto d = latents.size(1);
  auto z = reshape(permute(latents, {0, 2, 3, 1}), {-1, d});
  const auto m = static_cast<std::uint64_t>(z.size(0));
  auto cb = codebook_.mutable_data();
  for (std::int64_t j = 0; j < config_.codebook_K; ++j) {
    const auto row = static_cast<std::int64_t>(rng.below(m));
    for (std::int64_t c = 0; c < d; ++c) {
      cb[j * d + c] = z.data()[row * d + c] + 0.01f * static_cast<float>(rng.normal());
    }
  }
}

void VqTokenizer::write_into(Checkpoint& ckpt, const std::string& prefix) const {
  ckpt.put(params_, prefix);
}

Checkpoint VqTokenizer::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.manifest["kind"] = "tokenizer";
  ckpt.manifest["vq"] = config_.to_json();
  write_into(ckpt, "");
  return ckpt;
}

VqTokenizer VqTokenizer::from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  const auto& j = ckpt.manifest;
  if (!j.contains("vq")) {
    throw CheckpointError(CheckpointErrorKind::kind, "checkpoint has no tokenizer section");
  }
  VqTokenizer tok(VqConfig::from_json(j["vq"]), 0);
  ckpt.get(tok.params_, prefix);
  return tok;
}

std::vector<std::int64_t> codebook_usage(const VqTokenizer& tok, const std::vector<Image>& images) {
  std::vector<std::int64_t> usage(tok.config().codebook_K, 0);
  for (std::size_t i = 0; i < images.size(); i += 64) {
    std::vector<Image> chunk(images.begin() + i, images.begin() + std::min(images.size(), i + 64));
    for (const auto& g : tok.encode(images_to_tensor(chunk))) {
      for (auto v : g.indices) ++usage[v];
    }
  }
  return usage;
}

double reconstruction_mse(const VqTokenizer& tok, const std::vector<Image>& images) {
  double total = 0;
  std::int64_t count = 0;
  for (std::size_t i = 0; i < images.size(); i += 64) {
    std::vector<Image> chunk(images.begin() + i, images.begin() + std::min(images.size(), i + 64));
    auto x = images_to_tensor(chunk);
    auto y = tok.decode(tok.encode(x));
    for (std::int64_t k = 0; k < x.numel(); ++k) {
      const double d = static_cast<double>(x.data()[k]) - y.data()[k];
      total += d * d;
    }
    count += x.numel();
  }
  return total / static_cast<double>(count);
}

VqTrainResult train_tokenizer(VqTokenizer& tok, const std::vector<Image>& dataset,
                              const VqTrainConfig& cfg, const TrainLog& log) {
  if (dataset.empty()) throw std::invalid_argument("train_tokenizer: empty dataset");
  Rng rng(cfg.seed);
  auto sample_batch = [&] {
    std::vector<Image> batch;
    for (int i = 0; i < cfg.batch; ++i) batch.push_back(dataset[rng.below(dataset.size())]);
    return images_to_tensor(batch);
  };
  VqTrainResult result;
  if (cfg.steps > 0 && cfg.data_init) {
    auto init_rng = rng.fork();
    tok.init_codebook_from(sample_batch(), init_rng);
  }
  auto params = tok.params().tensors();
  for (auto& p : params) p.set_requires_grad(true);
  AdamW<float> opt(params, AdamWConfig{.lr = cfg.lr, .weight_decay = 0.0});
  for (int step = 0; step < cfg.steps; ++step) {
    auto x = sample_batch();
    tok.params().zero_grad();
    auto l = tok.loss(x);
    const double total = l.total.item();
    if (!std::isfinite(total)) {
      throw NumericError("train_tokenizer: non-finite loss " + std::to_string(total) +
                         " at step " + std::to_string(step) + " (reconstruction " +
                         std::to_string(l.reconstruction) + ", codebook " +
                         std::to_string(l.codebook) + ")");
    }
    l.total.backward();
    clip_grad_norm(params, cfg.grad_clip);
    opt.step();
    result.loss_curve.push_back(total);
    result.recon_curve.push_back(l.reconstruction);
    if (log && cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      std::set<std::int64_t> used(l.indices.begin(), l.indices.end());
      log("step " + std::to_string(step) + " loss " + format_real(total) + " recon " +
          format_real(l.reconstruction) + " codes_in_batch " + std::to_string(used.size()));
    }
  }
  result.usage = codebook_usage(tok, dataset);
  return result;
}

}  // namespace mim
