#include "mim/text.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mim/attention.h"
#include "mim/datagen.h"

namespace mim {

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  tokens_ = {"<pad>", "<unk>", "<uncond>"};
  std::vector<std::string> sorted(words);
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (const auto& w : sorted) {
    if (w.empty() || w.front() == '<') {
      throw std::invalid_argument("vocabulary: reserved or empty word '" + w + "'");
    }
    tokens_.push_back(w);
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    ids_[tokens_[i]] = static_cast<std::int64_t>(i);
  }
}

Vocabulary Vocabulary::captions() { return Vocabulary(caption_words()); }

std::int64_t Vocabulary::id(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() || it->second < 3 ? kUnk : it->second;
}

std::vector<std::int64_t> Vocabulary::tokenize(const std::string& caption, int max_len) const {
  std::string lower(caption);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream in(lower);
  std::vector<std::int64_t> ids;
  std::string word;
  while (in >> word && static_cast<int>(ids.size()) < max_len) ids.push_back(id(word));
  ids.resize(static_cast<std::size_t>(max_len), kPad);
  return ids;
}

std::vector<std::int64_t> Vocabulary::null_ids(int max_len) const {
  std::vector<std::int64_t> ids(static_cast<std::size_t>(max_len), kPad);
  if (max_len > 0) ids[0] = kUncond;
  return ids;
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [token, id] : ids_) j[token] = id;
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  std::vector<std::string> words;
  for (const auto& [token, id] : j.items()) {
    if (id.get<std::int64_t>() >= 3) words.push_back(token);
  }
  Vocabulary v(words);
  for (const auto& [token, id] : j.items()) {
    if (v.ids_.at(token) != id.get<std::int64_t>()) {
      throw std::invalid_argument("vocabulary: table is not in canonical order");
    }
  }
  return v;
}

void TextConfig::check() const {
  if (max_len < 1 || width < 1 || heads < 1 || layers < 0 || mlp_ratio < 1) {
    throw std::invalid_argument("text config: extents must be positive");
  }
  if (width % heads != 0) throw std::invalid_argument("text config: width % heads != 0");
}

nlohmann::json TextConfig::to_json() const {
  return {{"max_len", max_len}, {"width", width}, {"heads", heads},
          {"layers", layers},   {"mlp_ratio", mlp_ratio}};
}

TextConfig TextConfig::from_json(const nlohmann::json& j) {
  TextConfig c;
  c.max_len = j.at("max_len").get<int>();
  c.width = j.at("width").get<int>();
  c.heads = j.at("heads").get<int>();
  c.layers = j.at("layers").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.check();
  return c;
}

template <typename T>
TextEncoder<T>::TextEncoder(ParamStore<T>& store, const std::string& prefix,
                            const TextConfig& config, std::int64_t vocab_size, Rng& rng)
    : config_(config), vocab_size_(vocab_size) {
  config_.check();
  const int w = config_.width;
  tokens_ = store.add_normal(prefix + "tokens", {vocab_size, w}, T(0.02), rng);
  positions_ = store.add_normal(prefix + "positions", {config_.max_len, w}, T(0.02), rng);
  for (int i = 0; i < config_.layers; ++i) {
    const std::string p = prefix + "layer" + std::to_string(i) + ".";
    Layer l;
    l.ln1_g = store.add_full(p + "ln1.gain", {w}, T(1));
    l.ln1_b = store.add_zeros(p + "ln1.bias", {w});
    l.qkv = Linear<T>(store, p + "qkv", w, 3 * w, rng);
    l.out = Linear<T>(store, p + "out", w, w, rng);
    l.ln2_g = store.add_full(p + "ln2.gain", {w}, T(1));
    l.ln2_b = store.add_zeros(p + "ln2.bias", {w});
    l.ff = FeedForward<T>(store, p + "ff", w, config_.mlp_ratio * w, rng);
    layers_.push_back(l);
  }
  final_g_ = store.add_full(prefix + "final.gain", {w}, T(1));
  final_b_ = store.add_zeros(prefix + "final.bias", {w});
}

template <typename T>
TextEmbedding<T> TextEncoder<T>::encode(const std::vector<std::vector<std::int64_t>>& ids) const {
  if (ids.empty()) throw std::invalid_argument("encode_text: empty batch");
  const auto b = static_cast<std::int64_t>(ids.size());
  const auto len = static_cast<std::int64_t>(ids[0].size());
  if (len < 1 || len > config_.max_len) {
    throw std::invalid_argument("encode_text: sequence length must be in [1, " +
                                std::to_string(config_.max_len) + "]");
  }
  std::vector<std::int64_t> flat;
  std::vector<T> key_bias(static_cast<std::size_t>(b * len), T(0));
  std::vector<T> pool(static_cast<std::size_t>(b * len), T(0));
  for (std::int64_t i = 0; i < b; ++i) {
    if (static_cast<std::int64_t>(ids[i].size()) != len) {
      throw std::invalid_argument("encode_text: rows differ in length");
    }
    std::int64_t content = 0;
    for (auto id : ids[i]) {
      if (id < 0 || id >= vocab_size_) throw std::out_of_range("encode_text: token id out of range");
      content += id != Vocabulary::kPad;
    }
    for (std::int64_t s = 0; s < len; ++s) {
      const bool pad = ids[i][s] == Vocabulary::kPad;
      if (pad && content > 0) key_bias[i * len + s] = T(-1e9);
      if (!pad || content == 0) pool[i * len + s] = T(1) / static_cast<T>(content > 0 ? content : len);
    }
    flat.insert(flat.end(), ids[i].begin(), ids[i].end());
  }
  const int w = config_.width;
  auto x = reshape(embedding(tokens_, std::span<const std::int64_t>(flat)), {b, len, w});
  x = add(x, slice(positions_, 0, 0, len));
  auto bias = BasicTensor<T>::from_data({b, 1, 1, len}, std::move(key_bias));
  for (const auto& l : layers_) {
    auto h = layer_norm(x, l.ln1_g, l.ln1_b, T(1e-5));
    auto qkv = l.qkv(h);
    auto q = split_heads(slice(qkv, 2, 0, w), config_.heads);
    auto k = split_heads(slice(qkv, 2, w, w), config_.heads);
    auto v = split_heads(slice(qkv, 2, 2 * w, w), config_.heads);
    x = add(x, l.out(merge_heads(attention(q, k, v, bias))));
    x = add(x, l.ff(layer_norm(x, l.ln2_g, l.ln2_b, T(1e-5))));
  }
  TextEmbedding<T> out;
  out.sequence = layer_norm(x, final_g_, final_b_, T(1e-5));
  auto weights = BasicTensor<T>::from_data({b, 1, len}, std::move(pool));
  out.pooled = reshape(matmul(weights, out.sequence), {b, w});
  return out;
}

template class TextEncoder<float>;
template class TextEncoder<double>;

}  // namespace mim
