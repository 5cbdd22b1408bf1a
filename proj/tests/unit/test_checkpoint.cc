#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mim/checkpoint.h"

using namespace mim;
namespace fs = std::filesystem;

namespace {

Checkpoint sample() {
  Checkpoint c;
  c.manifest["kind"] = "t2i";
  c.manifest["seed"] = 42;
  c.manifest["lr"] = format_real(1e-4);
  c.manifest["vocab"] = {{"a", 3}, {"red", 4}};
  Rng rng(1);
  for (const char* name : {"w", "b", "empty"}) {
    StoredTensor t;
    t.shape = std::string(name) == "empty" ? Shape{0, 3} : Shape{3, 5};
    for (std::int64_t i = 0; i < shape_numel(t.shape); ++i) {
      t.data.push_back(static_cast<float>(rng.normal()));
    }
    c.tensors[name] = t;
  }
  c.tensors["w"].data[2] = -0.0f;
  return c;
}

CheckpointErrorKind kind_of(const std::vector<std::uint8_t>& bytes) {
  try {
    deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  FAIL("expected a checkpoint error");
  return CheckpointErrorKind::io;
}

}  // namespace

TEST_CASE("save then load is bit-exact") {
  auto dir = fs::temp_directory_path() / "mim_test_ckpt";
  fs::create_directories(dir);
  auto c = sample();
  save_checkpoint(dir / "c.ckpt", c);
  auto back = load_checkpoint(dir / "c.ckpt");
  CHECK(back.manifest == c.manifest);
  REQUIRE(back.tensors.size() == c.tensors.size());
  for (const auto& [name, t] : c.tensors) {
    const auto& u = back.tensors.at(name);
    CHECK(u.shape == t.shape);
    CHECK(std::memcmp(u.data.data(), t.data.data(), t.data.size() * sizeof(float)) == 0);
  }
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(c));
  CHECK(parse_real(back.manifest["lr"].get<std::string>()) == 1e-4);
}

TEST_CASE("distinct failure kinds") {
  const auto bytes = serialize_checkpoint(sample());
  auto corrupted = bytes;
  corrupted[corrupted.size() - 5] ^= 0x40;
  CHECK(kind_of(corrupted) == CheckpointErrorKind::checksum);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK(kind_of(truncated) == CheckpointErrorKind::truncated);

  auto versioned = bytes;
  versioned[8] = 99;
  CHECK(kind_of(versioned) == CheckpointErrorKind::version);

  auto c = sample();
  c.expect_kind("t2i");
  try {
    c.expect_kind("tokenizer");
    FAIL("expected kind error");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointErrorKind::kind);
  }

  ParamStore<float> store;
  store.add_zeros("w", {5, 3});
  try {
    c.get(store);
    FAIL("expected shape error");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointErrorKind::shape);
  }
}

TEST_CASE("manifest rejects floats and is canonical") {
  auto c = sample();
  c.manifest["bad"] = 0.5;
  CHECK_THROWS_AS(serialize_checkpoint(c), CheckpointError);
  Checkpoint a, b;
  a.manifest["z"] = 1;
  a.manifest["a"] = 2;
  b.manifest["a"] = 2;
  b.manifest["z"] = 1;
  CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));
}

TEST_CASE("store put/get round trip converts precision") {
  ParamStore<double> src;
  Rng rng(3);
  src.add_normal("x.weight", {4, 2}, 1.0, rng);
  Checkpoint c;
  c.put(src, "m.");
  ParamStore<float> dst;
  dst.add_zeros("x.weight", {4, 2});
  c.get(dst, "m.");
  for (int i = 0; i < 8; ++i) {
    CHECK(dst.get("x.weight").data()[i] == static_cast<float>(src.get("x.weight").data()[i]));
  }
}
