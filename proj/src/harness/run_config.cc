#include "mim/run_config.h"

#include <charconv>
#include <cmath>
#include <fstream>

#include "mim/checkpoint.h"
#include "mim/datagen.h"
#include "mim/image.h"

namespace mim {

namespace {

using Kind = RunConfig::Kind;

struct Binding {
  RunConfig::Field field;
  void* (*at)(RunConfig&);
};

template <auto Member>
void* top(RunConfig& c) {
  return &(c.*Member);
}

template <auto Section, auto Member>
void* nested(RunConfig& c) {
  return &((c.*Section).*Member);
}

const std::vector<Binding>& bindings() {
  using R = RunConfig;
  static const std::vector<Binding> table{
      {{"seed", Kind::unsigned_integer, "seed for every random stream"}, top<&R::seed>},
      {{"data.n", Kind::integer, "corpus size when no data directory is given"}, top<&R::data_n>},

      {{"vq.image_size", Kind::integer, "image side in pixels"}, nested<&R::vq, &VqConfig::image_size>},
      {{"vq.downsample_f", Kind::integer, "pixels per token side"}, nested<&R::vq, &VqConfig::downsample_f>},
      {{"vq.codebook_K", Kind::integer, "codebook entries"}, nested<&R::vq, &VqConfig::codebook_K>},
      {{"vq.embed_D", Kind::integer, "codebook vector width"}, nested<&R::vq, &VqConfig::embed_D>},
      {{"vq.commitment_beta", Kind::real, "commitment loss weight"}, nested<&R::vq, &VqConfig::commitment_beta>},
      {{"vq.base_channels", Kind::integer, "first conv width"}, nested<&R::vq, &VqConfig::base_channels>},

      {{"vq_train.steps", Kind::integer, "tokenizer optimizer steps"}, nested<&R::vq_train, &VqTrainConfig::steps>},
      {{"vq_train.batch", Kind::integer, "tokenizer batch size"}, nested<&R::vq_train, &VqTrainConfig::batch>},
      {{"vq_train.lr", Kind::real, "tokenizer learning rate"}, nested<&R::vq_train, &VqTrainConfig::lr>},
      {{"vq_train.grad_clip", Kind::real, "tokenizer gradient clip norm"}, nested<&R::vq_train, &VqTrainConfig::grad_clip>},
      {{"vq_train.data_init", Kind::boolean, "seed the codebook from the first batch"}, nested<&R::vq_train, &VqTrainConfig::data_init>},
      {{"vq_train.log_every", Kind::integer, "tokenizer log interval"}, nested<&R::vq_train, &VqTrainConfig::log_every>},

      {{"text.max_len", Kind::integer, "caption length in tokens"}, nested<&R::text, &TextConfig::max_len>},
      {{"text.width", Kind::integer, "text encoder width"}, nested<&R::text, &TextConfig::width>},
      {{"text.heads", Kind::integer, "text encoder heads"}, nested<&R::text, &TextConfig::heads>},
      {{"text.layers", Kind::integer, "text encoder layers"}, nested<&R::text, &TextConfig::layers>},
      {{"text.mlp_ratio", Kind::integer, "text MLP expansion"}, nested<&R::text, &TextConfig::mlp_ratio>},

      {{"model.width", Kind::integer, "backbone width"}, nested<&R::model, &ModelConfig::width>},
      {{"model.heads", Kind::integer, "attention heads"}, nested<&R::model, &ModelConfig::heads>},
      {{"model.mm_depth", Kind::integer, "multi-modal blocks"}, nested<&R::model, &ModelConfig::mm_depth>},
      {{"model.sm_depth", Kind::integer, "single-modal blocks"}, nested<&R::model, &ModelConfig::sm_depth>},
      {{"model.rope_base", Kind::real, "rotary base"}, nested<&R::model, &ModelConfig::rope_base>},
      {{"model.cond_width", Kind::integer, "condition vector width"}, nested<&R::model, &ModelConfig::cond_width>},
      {{"model.mlp_ratio", Kind::integer, "MLP expansion"}, nested<&R::model, &ModelConfig::mlp_ratio>},
      {{"model.sin_dim", Kind::integer, "sinusoidal width per condition channel"}, nested<&R::model, &ModelConfig::sin_dim>},
      {{"model.compression_enabled", Kind::boolean, "2x feature compression on large grids"}, nested<&R::model, &ModelConfig::compression_enabled>},
      {{"model.compression_threshold", Kind::integer, "smallest grid side that compresses"}, nested<&R::model, &ModelConfig::compression_threshold>},

      {{"train.batch", Kind::integer, "pairs per step"}, nested<&R::train, &TrainConfig::batch>},
      {{"train.steps", Kind::integer, "optimizer steps"}, nested<&R::train, &TrainConfig::steps>},
      {{"train.lr", Kind::real, "learning rate"}, nested<&R::train, &TrainConfig::lr>},
      {{"train.cond_dropout_p", Kind::real, "caption dropout probability"}, nested<&R::train, &TrainConfig::cond_dropout_p>},
      {{"train.grad_clip_norm", Kind::real, "global gradient clip norm"}, nested<&R::train, &TrainConfig::grad_clip_norm>},
      {{"train.log_every", Kind::integer, "metrics interval"}, top<&R::train_log_every>},
      {{"train.sample_every", Kind::integer, "sample interval (0 = end only)"}, top<&R::train_sample_every>},

      {{"sampler.steps", Kind::integer, "decoding steps"}, nested<&R::sampler, &SamplerConfig::steps>},
      {{"sampler.cfg_scale", Kind::real, "guidance scale"}, nested<&R::sampler, &SamplerConfig::cfg_scale>},
      {{"sampler.temperature", Kind::real, "sampling temperature (0 = greedy)"}, nested<&R::sampler, &SamplerConfig::temperature>},
  };
  return table;
}

const Binding& find(const std::string& key) {
  for (const auto& b : bindings())
    if (b.field.key == key) return b;
  throw ConfigError("unknown config key '" + key + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": cannot parse '" + text + "'");
  return v;
}

}  // namespace

const std::vector<RunConfig::Field>& RunConfig::fields() {
  static const std::vector<Field> out = [] {
    std::vector<Field> f;
    for (const auto& b : bindings()) f.push_back(b.field);
    return f;
  }();
  return out;
}

std::vector<RunConfig::Field> RunConfig::fields_in(const std::vector<std::string>& sections) {
  std::vector<Field> out;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const auto section = dot == std::string::npos ? std::string() : f.key.substr(0, dot);
    for (const auto& s : sections)
      if (s == section) out.push_back(f);
  }
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& b = find(key);
  void* p = b.at(*this);
  switch (b.field.kind) {
    case Kind::integer:
      *static_cast<int*>(p) = parse_number<int>(key, value);
      break;
    case Kind::unsigned_integer:
      *static_cast<std::uint64_t*>(p) = parse_number<std::uint64_t>(key, value);
      break;
    case Kind::real: {
      double v = 0;
      try {
        v = parse_real(value);
      } catch (const std::exception&) {
        throw ConfigError(key + ": cannot parse '" + value + "'");
      }
      if (!std::isfinite(v)) throw ConfigError(key + ": must be finite");
      *static_cast<double*>(p) = v;
      break;
    }
    case Kind::boolean:
      if (value == "true" || value == "1") *static_cast<bool*>(p) = true;
      else if (value == "false" || value == "0") *static_cast<bool*>(p) = false;
      else throw ConfigError(key + ": expected true or false, got '" + value + "'");
      break;
  }
}

void RunConfig::set_json(const std::string& key, const nlohmann::json& value) {
  const auto& b = find(key);
  if (value.is_string()) return set(key, value.get<std::string>());
  if (value.is_boolean()) {
    if (b.field.kind != Kind::boolean) throw ConfigError(key + ": expected a number");
    return set(key, std::string(value.get<bool>() ? "true" : "false"));
  }
  if (value.is_number_integer() || value.is_number_unsigned()) return set(key, value.dump());
  if (value.is_number_float()) {
    if (b.field.kind != Kind::real) throw ConfigError(key + ": expected an integer");
    return set(key, format_real(value.get<double>()));
  }
  throw ConfigError(key + ": expected a scalar value");
}

std::string RunConfig::get(const std::string& key) const {
  const auto& b = find(key);
  void* p = b.at(const_cast<RunConfig&>(*this));
  switch (b.field.kind) {
    case Kind::integer:
      return std::to_string(*static_cast<int*>(p));
    case Kind::unsigned_integer:
      return std::to_string(*static_cast<std::uint64_t*>(p));
    case Kind::real:
      return format_real(*static_cast<double*>(p));
    case Kind::boolean:
      return *static_cast<bool*>(p) ? "true" : "false";
  }
  return {};
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  merge_json(j);
}

void RunConfig::merge_json(const nlohmann::json& flat) {
  if (!flat.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : flat.items()) set_json(key, value);
}

void RunConfig::resolve() {
  vq_train.seed = seed;
  train.seed = seed;
  sampler.seed = seed;
  model.text_width = text.width;
  model.codebook_K = vq.codebook_K;
}

void RunConfig::check() const {
  auto wrap = [](auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  };
  if (data_n < 1 || data_n > kLatticeSize) {
    throw ConfigError("data.n must be in [1, " + std::to_string(kLatticeSize) + "]");
  }
  wrap([&] { vq.check(); });
  if (vq_train.steps < 0 || vq_train.batch < 1 || vq_train.log_every < 1) {
    throw ConfigError("vq_train: steps >= 0, batch >= 1 and log_every >= 1 required");
  }
  if (!(vq_train.lr >= 0) || !(vq_train.grad_clip > 0)) {
    throw ConfigError("vq_train: lr >= 0 and grad_clip > 0 required");
  }
  wrap([&] { text.check(); });
  wrap([&] { model.check(); });
  wrap([&] { train.check(); });
  if (train_log_every < 1 || train_sample_every < 0) {
    throw ConfigError("train: log_every >= 1 and sample_every >= 0 required");
  }
  wrap([&] { sampler.check(); });
}

nlohmann::json RunConfig::to_manifest() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& b : bindings()) {
    const auto text = get(b.field.key);
    switch (b.field.kind) {
      case Kind::integer:
        j[b.field.key] = std::stoll(text);
        break;
      case Kind::unsigned_integer:
        j[b.field.key] = std::stoull(text);
        break;
      case Kind::boolean:
        j[b.field.key] = text == "true";
        break;
      case Kind::real:
        j[b.field.key] = text;
        break;
    }
  }
  return j;
}

}  // namespace mim
