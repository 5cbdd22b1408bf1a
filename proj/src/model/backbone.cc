#include "mim/backbone.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mim/attention.h"
#include "mim/checkpoint.h"

namespace mim {

void ModelConfig::check() const {
  if (width < 2 || heads < 1 || width % heads != 0) {
    throw std::invalid_argument("model config: width must be divisible by heads");
  }
  if (head_dim() % 2 != 0) throw std::invalid_argument("model config: head dim must be even for RoPE");
  if (mm_depth < 0 || sm_depth < 0) throw std::invalid_argument("model config: negative depth");
  if (codebook_K < 2) throw std::invalid_argument("model config: codebook_K must be >= 2");
  if (text_width < 1 || cond_width < 1 || mlp_ratio < 1) {
    throw std::invalid_argument("model config: widths must be positive");
  }
  if (sin_dim < 2 || sin_dim % 2 != 0) throw std::invalid_argument("model config: sin_dim must be even");
  if (!(rope_base > 1)) throw std::invalid_argument("model config: rope_base must exceed 1");
  if (compression_threshold < 2) throw std::invalid_argument("model config: compression_threshold must be >= 2");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"width", width},
          {"heads", heads},
          {"mm_depth", mm_depth},
          {"sm_depth", sm_depth},
          {"rope_base", format_real(rope_base)},
          {"codebook_K", codebook_K},
          {"text_width", text_width},
          {"cond_width", cond_width},
          {"mlp_ratio", mlp_ratio},
          {"sin_dim", sin_dim},
          {"compression_enabled", compression_enabled},
          {"compression_threshold", compression_threshold}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.width = j.at("width").get<int>();
  c.heads = j.at("heads").get<int>();
  c.mm_depth = j.at("mm_depth").get<int>();
  c.sm_depth = j.at("sm_depth").get<int>();
  c.rope_base = parse_real(j.at("rope_base").get<std::string>());
  c.codebook_K = j.at("codebook_K").get<int>();
  c.text_width = j.at("text_width").get<int>();
  c.cond_width = j.at("cond_width").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.sin_dim = j.at("sin_dim").get<int>();
  c.compression_enabled = j.at("compression_enabled").get<bool>();
  c.compression_threshold = j.at("compression_threshold").get<int>();
  c.check();
  return c;
}

template <typename T>
BasicTensor<T> tokens_to_map(const BasicTensor<T>& x, int h, int w) {
  const auto b = x.size(0), d = x.size(2);
  return permute(reshape(x, {b, h, w, d}), {0, 3, 1, 2});
}

template <typename T>
BasicTensor<T> map_to_tokens(const BasicTensor<T>& x) {
  const auto b = x.size(0), d = x.size(1), h = x.size(2), w = x.size(3);
  return reshape(permute(x, {0, 2, 3, 1}), {b, h * w, d});
}

namespace {

// Columns [i·D, (i+1)·D) of a [B, k·D] modulation tensor.
template <typename T>
BasicTensor<T> chunk(const BasicTensor<T>& m, int i, std::int64_t d) {
  return slice(m, 1, i * d, d);
}

// x + gate·f, gate [B, D] broadcast over the sequence.
template <typename T>
BasicTensor<T> gated(const BasicTensor<T>& x, const BasicTensor<T>& gate, const BasicTensor<T>& f) {
  return add(x, mul(reshape(gate, {gate.size(0), 1, gate.size(1)}), f));
}

template <typename T>
constexpr T kQkEps = T(1e-10);

template <typename T>
BasicTensor<T> plain_norm(const BasicTensor<T>& x) {
  return layer_norm(x, BasicTensor<T>(), BasicTensor<T>(), T(1e-6));
}

}  // namespace

template <typename T>
typename Block<T>::Stream Block<T>::make_stream(ParamStore<T>& store, const std::string& prefix,
                                                 Rng& rng) {
  const int d = config_.width;
  Stream s;
  s.modulation = Linear<T>::zeros(store, prefix + "modulation", config_.cond_width, 6 * d);
  s.qkv = Linear<T>(store, prefix + "qkv", d, 3 * d, rng);
  s.out = Linear<T>(store, prefix + "out", d, d, rng);
  s.q_gain = store.add_full(prefix + "q_norm", {config_.head_dim()}, T(1));
  s.k_gain = store.add_full(prefix + "k_norm", {config_.head_dim()}, T(1));
  s.ff = FeedForward<T>(store, prefix + "ff", d, config_.mlp_ratio * d, rng);
  return s;
}

template <typename T>
Block<T>::Block(ParamStore<T>& store, const std::string& prefix, const ModelConfig& config,
                bool multimodal, Rng& rng)
    : config_(config), multimodal_(multimodal) {
  image_ = make_stream(store, prefix + "image.", rng);
  if (multimodal_) text_ = make_stream(store, prefix + "text.", rng);
}

template <typename T>
typename Block<T>::Prepared Block<T>::prepare(const State& in, const BasicTensor<T>& y,
                                              const std::vector<std::int64_t>& positions) const {
  if (multimodal_ && !in.text.defined()) {
    throw std::invalid_argument("multimodal block: missing text stream");
  }
  const std::int64_t d = config_.width;
  const int heads = config_.heads;
  auto act = silu(y);
  Prepared p;
  std::vector<BasicTensor<T>> qs, ks, vs;
  auto project = [&](const Stream& s, const BasicTensor<T>& x) {
    auto mod = s.modulation(act);
    p.mods.push_back(mod);
    auto h = modulate(plain_norm(x), chunk(mod, 0, d), chunk(mod, 1, d));
    auto qkv = s.qkv(h);
    qs.push_back(rms_norm(split_heads(slice(qkv, 2, 0, d), heads), s.q_gain, kQkEps<T>));
    ks.push_back(rms_norm(split_heads(slice(qkv, 2, d, d), heads), s.k_gain, kQkEps<T>));
    vs.push_back(split_heads(slice(qkv, 2, 2 * d, d), heads));
  };
  if (multimodal_) project(text_, in.text);
  project(image_, in.image);
  auto q = qs.size() == 1 ? qs[0] : concat(qs, 2);
  auto k = ks.size() == 1 ? ks[0] : concat(ks, 2);
  auto v = vs.size() == 1 ? vs[0] : concat(vs, 2);
  if (static_cast<std::int64_t>(positions.size()) != q.size(2)) {
    throw ShapeError("block: " + std::to_string(positions.size()) + " positions for " +
                     std::to_string(q.size(2)) + " tokens");
  }
  p.q = rope_rotate(q, positions, config_.rope_base);
  p.k = rope_rotate(k, positions, config_.rope_base);
  p.v = v;
  return p;
}

template <typename T>
BasicTensor<T> Block<T>::attention_weights(const State& in, const BasicTensor<T>& y,
                                           const std::vector<std::int64_t>& positions) const {
  auto p = prepare(in, y, positions);
  return mim::attention_weights(p.q, p.k, BasicTensor<T>());
}

template <typename T>
typename Block<T>::State Block<T>::operator()(const State& in, const BasicTensor<T>& y,
                                              const std::vector<std::int64_t>& positions) const {
  auto p = prepare(in, y, positions);
  const std::int64_t d = config_.width;
  auto joint = merge_heads(attention(p.q, p.k, p.v, BasicTensor<T>()));
  const std::int64_t text_len = multimodal_ ? in.text.size(1) : 0;
  auto finish = [&](const Stream& s, const BasicTensor<T>& x, const BasicTensor<T>& mod,
                    const BasicTensor<T>& attn) {
    auto h = gated(x, chunk(mod, 2, d), s.out(attn));
    auto f = s.ff(modulate(plain_norm(h), chunk(mod, 3, d), chunk(mod, 4, d)));
    return gated(h, chunk(mod, 5, d), f);
  };
  State out;
  if (multimodal_) {
    out.text = finish(text_, in.text, p.mods[0], slice(joint, 1, 0, text_len));
    out.image = finish(image_, in.image, p.mods[1],
                       slice(joint, 1, text_len, joint.size(1) - text_len));
  } else {
    out.image = finish(image_, in.image, p.mods[0], joint);
  }
  return out;
}

template <typename T>
Backbone<T>::Backbone(ParamStore<T>& store, const std::string& prefix, const ModelConfig& config,
                      Rng& rng)
    : config_(config) {
  config_.check();
  const int d = config_.width;
  table_ = store.add_normal(prefix + "embed", {config_.codebook_K + 1, d}, T(0.02), rng);
  text_in_ = Linear<T>(store, prefix + "text_in", config_.text_width, d, rng);
  cond_up_ = Linear<T>(store, prefix + "cond.up", config_.text_width + 6 * config_.sin_dim,
                       config_.cond_width, rng);
  cond_out_ = Linear<T>(store, prefix + "cond.out", config_.cond_width, config_.cond_width, rng);
  const T conv_std = static_cast<T>(1.0 / std::sqrt(4.0 * d));
  down_w_ = store.add_normal(prefix + "compress.weight", {d, d, 2, 2}, conv_std, rng);
  down_b_ = store.add_zeros(prefix + "compress.bias", {d});
  up_w_ = store.add_normal(prefix + "decompress.weight", {d, d, 2, 2},
                           static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))), rng);
  up_b_ = store.add_zeros(prefix + "decompress.bias", {d});
  for (int i = 0; i < config_.mm_depth; ++i) {
    blocks_.emplace_back(store, prefix + "mm" + std::to_string(i) + ".", config_, true, rng);
  }
  for (int i = 0; i < config_.sm_depth; ++i) {
    blocks_.emplace_back(store, prefix + "sm" + std::to_string(i) + ".", config_, false, rng);
  }
  final_mod_ = Linear<T>::zeros(store, prefix + "final.modulation", config_.cond_width, 2 * d);
  head_ = Linear<T>(store, prefix + "head", d, config_.codebook_K, rng);
  // Small logits at init, so the first loss sits at ln K.
  for (auto& w : head_.weight.mutable_data()) w *= T(0.1);
}

template <typename T>
BasicTensor<T> Backbone<T>::embed_tokens(const std::vector<TokenGrid>& grids) const {
  if (grids.empty()) throw std::invalid_argument("embed_tokens: empty batch");
  std::vector<std::int64_t> ids;
  for (const auto& g : grids) {
    if (g.height != grids[0].height || g.width != grids[0].width) {
      throw ShapeError("embed_tokens: grids differ in size");
    }
    if (g.codebook_size != config_.codebook_K) {
      throw std::invalid_argument("embed_tokens: grid K=" + std::to_string(g.codebook_size) +
                                  " but model K=" + std::to_string(config_.codebook_K));
    }
    for (auto v : g.indices) {
      if (v < 0 || v > config_.codebook_K) {
        throw std::out_of_range("embed_tokens: index " + std::to_string(v) + " outside [0, K]");
      }
    }
    ids.insert(ids.end(), g.indices.begin(), g.indices.end());
  }
  const auto b = static_cast<std::int64_t>(grids.size());
  return reshape(embedding(table_, std::span<const std::int64_t>(ids)), {b, grids[0].size(), config_.width});
}

template <typename T>
BasicTensor<T> Backbone<T>::condition(const BasicTensor<T>& pooled,
                                      const std::vector<ConditionBundle>& bundles) const {
  const auto b = static_cast<std::int64_t>(bundles.size());
  if (pooled.rank() != 2 || pooled.size(0) != b || pooled.size(1) != config_.text_width) {
    throw ShapeError("condition: pooled text " + shape_str(pooled.shape()) + " for " +
                     std::to_string(b) + " bundles");
  }
  const int e = config_.sin_dim;
  std::vector<T> channels;
  channels.reserve(static_cast<std::size_t>(b * 6 * e));
  for (const auto& bundle : bundles) {
    const auto& m = bundle.micro;
    const double pref = std::clamp(m.preference, 0.0, 1.0);
    for (double v : {m.original_h, m.original_w, m.crop_x, m.crop_y, pref * 1000.0,
                     static_cast<double>(bundle.rate.level)}) {
      if (!std::isfinite(v)) throw std::invalid_argument("condition: non-finite micro-condition");
      for (double s : sinusoidal_embed(v, e)) channels.push_back(static_cast<T>(s));
    }
  }
  auto sin_part = BasicTensor<T>::from_data({b, 6 * e}, std::move(channels));
  auto h = concat<T>({pooled, sin_part}, 1);
  return cond_out_(silu(cond_up_(h)));
}

template <typename T>
BasicTensor<T> Backbone<T>::compress(const BasicTensor<T>& x, int h, int w) const {
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("compress: grid extents must be even, got " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  return map_to_tokens(conv2d(tokens_to_map(x, h, w), down_w_, down_b_, 2, 0));
}

template <typename T>
BasicTensor<T> Backbone<T>::decompress(const BasicTensor<T>& x, int h, int w) const {
  return map_to_tokens(conv_transpose2d(tokens_to_map(x, h / 2, w / 2), up_w_, up_b_, 2, 0));
}

template <typename T>
BasicTensor<T> Backbone<T>::bypass(const std::vector<TokenGrid>& grids) const {
  const int h = grids[0].height, w = grids[0].width;
  const bool squeeze = config_.compresses(std::min(h, w));
  auto x = embed_tokens(grids);
  if (squeeze) x = compress(x, h, w);
  x = plain_norm(x);
  if (squeeze) x = decompress(x, h, w);
  return head_(x);
}

template <typename T>
BasicTensor<T> Backbone<T>::forward(const std::vector<TokenGrid>& grids,
                                    const TextEmbedding<T>& text,
                                    const std::vector<ConditionBundle>& bundles) const {
  if (grids.size() != bundles.size()) {
    throw std::invalid_argument("forward: grids and bundles differ in batch size");
  }
  const int h = grids[0].height, w = grids[0].width;
  const bool squeeze = config_.compresses(std::min(h, w));
  auto x = embed_tokens(grids);
  if (squeeze) x = compress(x, h, w);
  const auto y = condition(text.pooled, bundles);
  const std::int64_t text_len = text.sequence.size(1);
  const std::int64_t n = x.size(1);
  std::vector<std::int64_t> positions(static_cast<std::size_t>(text_len + n));
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int64_t>(i);
  const std::vector<std::int64_t> image_positions(positions.begin() + text_len, positions.end());
  typename Block<T>::State state{x, text_in_(text.sequence)};
  for (const auto& block : blocks_) {
    if (block.multimodal()) {
      state = block(state, y, positions);
    } else {
      state = block({state.image, BasicTensor<T>()}, y, image_positions);
    }
  }
  auto mod = final_mod_(silu(y));
  const std::int64_t d = config_.width;
  auto out = modulate(plain_norm(state.image), slice(mod, 1, 0, d), slice(mod, 1, d, d));
  if (squeeze) out = decompress(out, h, w);
  return head_(out);
}

template class Block<float>;
template class Block<double>;
template class Backbone<float>;
template class Backbone<double>;
template BasicTensor<float> tokens_to_map(const BasicTensor<float>&, int, int);
template BasicTensor<double> tokens_to_map(const BasicTensor<double>&, int, int);
template BasicTensor<float> map_to_tokens(const BasicTensor<float>&);
template BasicTensor<double> map_to_tokens(const BasicTensor<double>&);

}  // namespace mim
