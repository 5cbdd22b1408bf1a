#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mim/nn.h"

namespace mim {

/// Fixed token table: PAD, UNK and UNCOND sentinels followed by the sorted
/// caption words.
class Vocabulary {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kUnk = 1;
  static constexpr std::int64_t kUncond = 2;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& words);
  /// Vocabulary of the synthetic caption grammar.
  static Vocabulary captions();

  std::int64_t size() const { return static_cast<std::int64_t>(tokens_.size()); }
  std::int64_t id(const std::string& word) const;
  const std::string& token(std::int64_t id) const { return tokens_.at(id); }

  /// Lowercased whitespace split, UNK for unknown words, PAD-filled or
  /// truncated to max_len.
  std::vector<std::int64_t> tokenize(const std::string& caption, int max_len) const;
  /// [UNCOND, PAD, ...]
  std::vector<std::int64_t> null_ids(int max_len) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::int64_t> ids_;
};

struct TextConfig {
  int max_len = 16;
  int width = 128;
  int heads = 4;
  int layers = 2;
  int mlp_ratio = 4;

  void check() const;
  nlohmann::json to_json() const;
  static TextConfig from_json(const nlohmann::json& j);
};

template <typename T>
struct TextEmbedding {
  BasicTensor<T> sequence;  // [B, L, width]
  BasicTensor<T> pooled;    // [B, width]
};

/// Pre-norm transformer over learned token and position embeddings. Keys at
/// PAD positions are masked out; pooled = mean over non-PAD positions (over
/// all positions when everything is PAD).
template <typename T>
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(ParamStore<T>& store, const std::string& prefix, const TextConfig& config,
              std::int64_t vocab_size, Rng& rng);

  const TextConfig& config() const { return config_; }

  /// Every row must have the same length L ≤ max_len.
  TextEmbedding<T> encode(const std::vector<std::vector<std::int64_t>>& ids) const;

 private:
  struct Layer {
    BasicTensor<T> ln1_g, ln1_b, ln2_g, ln2_b;
    Linear<T> qkv, out;
    FeedForward<T> ff;
  };

  TextConfig config_;
  std::int64_t vocab_size_ = 0;
  BasicTensor<T> tokens_, positions_;
  std::vector<Layer> layers_;
  BasicTensor<T> final_g_, final_b_;
};

}  // namespace mim
