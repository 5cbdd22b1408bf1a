#include "mim/artifacts.h"

namespace mim {

Checkpoint make_generator_checkpoint(const T2IModel<float>& model, const VqTokenizer& tokenizer) {
  Checkpoint ckpt;
  ckpt.manifest["kind"] = "t2i";
  ckpt.manifest["vq"] = tokenizer.config().to_json();
  tokenizer.write_into(ckpt, "tokenizer.");
  model.write_into(ckpt);
  return ckpt;
}

Generator load_generator(const Checkpoint& ckpt) {
  ckpt.expect_kind("t2i");
  auto tokenizer = VqTokenizer::from_checkpoint(ckpt, "tokenizer.");
  auto model = T2IModel<float>::from_checkpoint(ckpt);
  if (model.model_config().codebook_K != tokenizer.config().codebook_K) {
    throw CheckpointError(CheckpointErrorKind::shape, "model and tokenizer codebook sizes differ");
  }
  return {std::move(model), std::move(tokenizer)};
}

}  // namespace mim
