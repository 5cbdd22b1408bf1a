#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mim/backbone.h"
#include "mim/sampler.h"
#include "mim/text.h"
#include "mim/trainer.h"
#include "mim/vq.h"

namespace mim {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Every tunable of the CLI, addressed by dotted keys such as "train.lr".
/// One seed feeds every random stream.
struct RunConfig {
  std::uint64_t seed = 0;
  int data_n = 256;
  VqConfig vq;
  VqTrainConfig vq_train;
  TextConfig text;
  ModelConfig model;
  TrainConfig train;
  int train_log_every = 100;
  int train_sample_every = 0;  // 0 = only at the end
  SamplerConfig sampler;

  enum class Kind { integer, unsigned_integer, real, boolean };
  struct Field {
    std::string key;
    Kind kind;
    std::string help;
  };
  static const std::vector<Field>& fields();
  /// Keys whose dotted prefix is one of sections ("" matches the bare seed).
  static std::vector<Field> fields_in(const std::vector<std::string>& sections);

  /// Parses text as the field's type; unknown keys and malformed values throw
  /// ConfigError.
  void set(const std::string& key, const std::string& value);
  void set_json(const std::string& key, const nlohmann::json& value);
  std::string get(const std::string& key) const;

  /// Flat JSON object of dotted keys. Nested objects are rejected.
  void merge_file(const std::filesystem::path& path);
  void merge_json(const nlohmann::json& flat);

  /// Copies the seed into every section and wires derived fields.
  void resolve();
  /// Validates every section; throws ConfigError.
  void check() const;

  /// Manifest-safe flat view: integers, booleans, reals as decimal strings.
  nlohmann::json to_manifest() const;
};

}  // namespace mim
