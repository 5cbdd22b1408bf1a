#include "mim/t2i.h"

#include <stdexcept>

namespace mim {

template <typename T>
T2IModel<T>::T2IModel(const Vocabulary& vocab, const TextConfig& text, const ModelConfig& model,
                      std::uint64_t seed)
    : vocab_(vocab), seed_(seed) {
  if (text.width != model.text_width) {
    throw std::invalid_argument("t2i: text encoder width " + std::to_string(text.width) +
                                " differs from backbone text_width " +
                                std::to_string(model.text_width));
  }
  Rng rng(seed);
  Rng text_rng = rng.fork();
  Rng backbone_rng = rng.fork();
  text_ = TextEncoder<T>(params_, "text.", text, vocab_.size(), text_rng);
  backbone_ = Backbone<T>(params_, "backbone.", model, backbone_rng);
}

template <typename T>
TextEmbedding<T> T2IModel<T>::encode_captions(const std::vector<std::string>& captions) const {
  std::vector<std::vector<std::int64_t>> ids;
  for (const auto& c : captions) ids.push_back(tokenize(c));
  return text_.encode(ids);
}

template <typename T>
TextEmbedding<T> T2IModel<T>::null_embedding(int batch) const {
  std::vector<std::vector<std::int64_t>> ids(static_cast<std::size_t>(batch),
                                             vocab_.null_ids(text_config().max_len));
  return text_.encode(ids);
}

template <typename T>
void T2IModel<T>::write_into(Checkpoint& ckpt) const {
  ckpt.manifest["vocabulary"] = vocab_.to_json();
  ckpt.manifest["text"] = text_config().to_json();
  ckpt.manifest["model"] = model_config().to_json();
  ckpt.manifest["model_seed"] = seed_;
  ckpt.put(params_, "t2i.");
}

template <typename T>
T2IModel<T> T2IModel<T>::from_checkpoint(const Checkpoint& ckpt) {
  for (const char* key : {"vocabulary", "text", "model", "model_seed"}) {
    if (!ckpt.manifest.contains(key)) {
      throw CheckpointError(CheckpointErrorKind::kind,
                            std::string("checkpoint has no '") + key + "' section");
    }
  }
  T2IModel model(Vocabulary::from_json(ckpt.manifest["vocabulary"]),
                 TextConfig::from_json(ckpt.manifest["text"]),
                 ModelConfig::from_json(ckpt.manifest["model"]),
                 ckpt.manifest["model_seed"].get<std::uint64_t>());
  ckpt.get(model.params_, "t2i.");
  return model;
}

template class T2IModel<float>;
template class T2IModel<double>;

}  // namespace mim
