#pragma once

#include "mim/checkpoint.h"
#include "mim/t2i.h"
#include "mim/vq.h"

namespace mim {

/// A generator checkpoint carries its tokenizer, so one file suffices for
/// generate and edit.
struct Generator {
  T2IModel<float> model;
  VqTokenizer tokenizer;
};

/// kind "t2i"; tokenizer tensors under "tokenizer.", model under "t2i.".
Checkpoint make_generator_checkpoint(const T2IModel<float>& model, const VqTokenizer& tokenizer);
Generator load_generator(const Checkpoint& ckpt);

}  // namespace mim
