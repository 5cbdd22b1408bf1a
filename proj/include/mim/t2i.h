#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mim/backbone.h"
#include "mim/checkpoint.h"
#include "mim/text.h"

namespace mim {

/// Text encoder and backbone sharing one parameter store, trained jointly.
template <typename T>
class T2IModel {
 public:
  T2IModel(const Vocabulary& vocab, const TextConfig& text, const ModelConfig& model,
           std::uint64_t seed);

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const Vocabulary& vocab() const { return vocab_; }
  const TextEncoder<T>& text_encoder() const { return text_; }
  const Backbone<T>& backbone() const { return backbone_; }
  const TextConfig& text_config() const { return text_.config(); }
  const ModelConfig& model_config() const { return backbone_.config(); }
  std::uint64_t seed() const { return seed_; }

  std::vector<std::int64_t> tokenize(const std::string& caption) const {
    return vocab_.tokenize(caption, text_config().max_len);
  }
  TextEmbedding<T> encode_ids(const std::vector<std::vector<std::int64_t>>& ids) const {
    return text_.encode(ids);
  }
  TextEmbedding<T> encode_captions(const std::vector<std::string>& captions) const;
  /// Encoding of the UNCOND sentinel sequence, repeated batch times.
  TextEmbedding<T> null_embedding(int batch = 1) const;

  BasicTensor<T> logits(const std::vector<TokenGrid>& grids, const TextEmbedding<T>& text,
                        const std::vector<ConditionBundle>& bundles) const {
    return backbone_.forward(grids, text, bundles);
  }

  /// Adds manifest sections (vocabulary, configs, seed) and tensors under
  /// the "t2i." prefix.
  void write_into(Checkpoint& ckpt) const;
  static T2IModel from_checkpoint(const Checkpoint& ckpt);

 private:
  Vocabulary vocab_;
  std::uint64_t seed_;
  ParamStore<T> params_;
  TextEncoder<T> text_;
  Backbone<T> backbone_;
};

}  // namespace mim
