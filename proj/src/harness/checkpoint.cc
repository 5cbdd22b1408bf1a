#include "mim/checkpoint.h"

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mim/image.h"

namespace mim {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written in host order");

namespace {

constexpr char kMagic[8] = {'M', 'I', 'M', 'C', 'K', 'P', 'T', '\0'};

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    need(n);
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(CheckpointErrorKind::truncated,
                            "file ends at byte " + std::to_string(bytes_.size()) +
                                ", needed " + std::to_string(pos_ + n));
    }
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t checksum(const void* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace

const char* to_string(CheckpointErrorKind kind) {
  switch (kind) {
    case CheckpointErrorKind::io: return "io";
    case CheckpointErrorKind::version: return "version";
    case CheckpointErrorKind::truncated: return "truncated";
    case CheckpointErrorKind::shape: return "shape";
    case CheckpointErrorKind::checksum: return "checksum";
    case CheckpointErrorKind::kind: return "kind";
    case CheckpointErrorKind::manifest: return "manifest";
  }
  return "?";
}

std::string Checkpoint::kind() const {
  return manifest.contains("kind") && manifest["kind"].is_string()
             ? manifest["kind"].get<std::string>()
             : "";
}

void Checkpoint::expect_kind(const std::string& expected) const {
  if (kind() != expected) {
    throw CheckpointError(CheckpointErrorKind::kind,
                          "expected a '" + expected + "' checkpoint, found '" + kind() + "'");
  }
}

template <typename T>
void Checkpoint::put(const ParamStore<T>& store, const std::string& prefix) {
  for (const auto& [name, t] : store.items()) {
    tensors[prefix + name] = {t.shape(), std::vector<float>(t.data().begin(), t.data().end())};
  }
}

template <typename T>
void Checkpoint::get(ParamStore<T>& store, const std::string& prefix) const {
  for (const auto& [name, t] : store.items()) {
    auto it = tensors.find(prefix + name);
    if (it == tensors.end()) {
      throw CheckpointError(CheckpointErrorKind::shape, "missing tensor " + prefix + name);
    }
    if (it->second.shape != t.shape()) {
      throw CheckpointError(CheckpointErrorKind::shape,
                            prefix + name + ": stored " + shape_str(it->second.shape) +
                                ", model expects " + shape_str(t.shape()));
    }
    auto dst = BasicTensor<T>(t).mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second.data[i]);
  }
}

template void Checkpoint::put<float>(const ParamStore<float>&, const std::string&);
template void Checkpoint::put<double>(const ParamStore<double>&, const std::string&);
template void Checkpoint::get<float>(ParamStore<float>&, const std::string&) const;
template void Checkpoint::get<double>(ParamStore<double>&, const std::string&) const;

void check_manifest(const nlohmann::json& manifest) {
  if (manifest.is_number_float()) {
    throw CheckpointError(CheckpointErrorKind::manifest,
                          "floating-point value in manifest: " + manifest.dump());
  }
  if (manifest.is_structured()) {
    for (const auto& v : manifest) check_manifest(v);
  }
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  check_manifest(ckpt.manifest);
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    if (static_cast<std::int64_t>(t.data.size()) != shape_numel(t.shape)) {
      throw CheckpointError(CheckpointErrorKind::shape, name + ": data does not match shape");
    }
    index.push_back({{"name", name},
                     {"shape", t.shape},
                     {"offset", offset},
                     {"crc32", checksum(t.data.data(), t.data.size() * sizeof(float))}});
    offset += t.data.size() * sizeof(float);
  }
  const std::string manifest = ckpt.manifest.dump();
  const std::string index_text = index.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, manifest.size());
  out.insert(out.end(), manifest.begin(), manifest.end());
  put<std::uint64_t>(out, index_text.size());
  out.insert(out.end(), index_text.begin(), index_text.end());
  put<std::uint64_t>(out, offset);
  for (const auto& [name, t] : ckpt.tensors) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data.data());
    out.insert(out.end(), p, p + t.data.size() * sizeof(float));
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  const auto* magic = in.take(8);
  if (std::memcmp(magic, kMagic, 8) != 0) {
    throw CheckpointError(CheckpointErrorKind::kind, "not a checkpoint file");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrorKind::version,
                          "file version " + std::to_string(version) + ", reader supports " +
                              std::to_string(kCheckpointVersion));
  }
  Checkpoint ckpt;
  const auto mlen = in.get<std::uint64_t>();
  const auto* mtext = in.take(mlen);
  const auto ilen = in.get<std::uint64_t>();
  const auto* itext = in.take(ilen);
  nlohmann::json index;
  try {
    ckpt.manifest = nlohmann::json::parse(mtext, mtext + mlen);
    index = nlohmann::json::parse(itext, itext + ilen);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointErrorKind::manifest, e.what());
  }
  check_manifest(ckpt.manifest);
  const auto blob_bytes = in.get<std::uint64_t>();
  const auto* blob = in.take(blob_bytes);
  if (in.remaining() != 0) {
    throw CheckpointError(CheckpointErrorKind::truncated, "trailing bytes after tensor data");
  }
  for (const auto& entry : index) {
    const auto name = entry.at("name").get<std::string>();
    StoredTensor t;
    t.shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto n = static_cast<std::uint64_t>(shape_numel(t.shape));
    if (offset + n * sizeof(float) > blob_bytes) {
      throw CheckpointError(CheckpointErrorKind::truncated, name + " extends past the data");
    }
    t.data.resize(n);
    std::memcpy(t.data.data(), blob + offset, n * sizeof(float));
    if (checksum(t.data.data(), n * sizeof(float)) != entry.at("crc32").get<std::uint32_t>()) {
      throw CheckpointError(CheckpointErrorKind::checksum, "tensor " + name + " is corrupted");
    }
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(CheckpointErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrorKind::io, "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorKind::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

std::string format_real(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

double parse_real(const std::string& s) {
  double v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw std::invalid_argument("not a number: '" + s + "'");
  }
  return v;
}

}  // namespace mim
