#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mim/nn.h"

namespace mim {

enum class CheckpointErrorKind { io, version, truncated, shape, checksum, kind, manifest };

const char* to_string(CheckpointErrorKind kind);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  Shape shape;
  std::vector<float> data;
  bool operator==(const StoredTensor&) const = default;
};

/// Manifest plus named float32 tensors. The manifest holds only strings,
/// integers, booleans, arrays and objects so that its canonical dump (sorted
/// keys) is byte-stable.
struct Checkpoint {
  nlohmann::json manifest = nlohmann::json::object();
  std::map<std::string, StoredTensor> tensors;

  std::string kind() const;
  /// Throws CheckpointError(kind) unless manifest["kind"] == expected.
  void expect_kind(const std::string& expected) const;

  /// Copies tensors whose names start with prefix from / into a store.
  template <typename T>
  void put(const ParamStore<T>& store, const std::string& prefix = "");
  template <typename T>
  void get(ParamStore<T>& store, const std::string& prefix = "") const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Rejects floating-point numbers anywhere in a manifest.
void check_manifest(const nlohmann::json& manifest);

/// Round-trippable decimal text for a float hyperparameter.
std::string format_real(double v);
double parse_real(const std::string& s);

}  // namespace mim
