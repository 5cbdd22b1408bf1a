#include "doctest.h"
#include "mim/run_config.h"

using namespace mim;

TEST_CASE("dotted keys set and get every field") {
  RunConfig c;
  for (const auto& f : RunConfig::fields()) {
    const auto before = c.get(f.key);
    c.set(f.key, before);
    CHECK(c.get(f.key) == before);
  }
  c.set("train.lr", "0.001");
  CHECK(c.train.lr == 1e-3);
  c.set("model.compression_enabled", "false");
  CHECK(!c.model.compression_enabled);
  c.set("seed", "18446744073709551615");
  CHECK(c.seed == 18446744073709551615ULL);
  CHECK(c.get("sampler.cfg_scale") == "9");
}

TEST_CASE("bad keys and values are rejected") {
  RunConfig c;
  CHECK_THROWS_AS(c.set("train.momentum", "1"), ConfigError);
  CHECK_THROWS_AS(c.set("train.steps", "1.5"), ConfigError);
  CHECK_THROWS_AS(c.set("train.steps", "ten"), ConfigError);
  CHECK_THROWS_AS(c.set("train.lr", "nan"), ConfigError);
  CHECK_THROWS_AS(c.set("model.compression_enabled", "yes"), ConfigError);
  CHECK_THROWS_AS(c.set("seed", "-1"), ConfigError);
  CHECK_THROWS_AS(c.set_json("train.steps", nlohmann::json(2.5)), ConfigError);
  CHECK_THROWS_AS(c.set_json("train.steps", nlohmann::json::array()), ConfigError);
  CHECK_THROWS_AS(c.merge_json(nlohmann::json::array()), ConfigError);
  CHECK_THROWS_AS(c.merge_json({{"train", {{"steps", 3}}}}), ConfigError);
}

TEST_CASE("json merge accepts numbers, strings and booleans") {
  RunConfig c;
  c.merge_json({{"train.steps", 7}, {"train.lr", "3e-4"}, {"sampler.temperature", 0.5},
                {"vq_train.data_init", false}});
  CHECK(c.train.steps == 7);
  CHECK(c.train.lr == 3e-4);
  CHECK(c.sampler.temperature == 0.5);
  CHECK(!c.vq_train.data_init);
}

TEST_CASE("validation covers every section") {
  RunConfig ok;
  ok.resolve();
  CHECK_NOTHROW(ok.check());
  auto expect_bad = [](const std::string& key, const std::string& value) {
    RunConfig c;
    c.set(key, value);
    c.resolve();
    CHECK_THROWS_AS(c.check(), ConfigError);
  };
  expect_bad("data.n", "0");
  expect_bad("vq.image_size", "30");
  expect_bad("vq_train.batch", "0");
  expect_bad("text.max_len", "0");
  expect_bad("model.heads", "3");
  expect_bad("train.cond_dropout_p", "1.5");
  expect_bad("train.log_every", "0");
  expect_bad("sampler.steps", "0");
}

TEST_CASE("resolve threads the seed and derived widths") {
  RunConfig c;
  c.set("seed", "42");
  c.set("text.width", "48");
  c.set("vq.codebook_K", "64");
  c.resolve();
  CHECK(c.train.seed == 42);
  CHECK(c.sampler.seed == 42);
  CHECK(c.vq_train.seed == 42);
  CHECK(c.model.text_width == 48);
  CHECK(c.model.codebook_K == 64);
}

TEST_CASE("manifest view is float free and round trips") {
  RunConfig c;
  c.set("train.lr", "0.00025");
  const auto m = c.to_manifest();
  CHECK_NOTHROW(check_manifest(m));
  RunConfig back;
  back.merge_json(m);
  for (const auto& f : RunConfig::fields()) CHECK(back.get(f.key) == c.get(f.key));
  CHECK(RunConfig::fields_in({""}).size() == 1);
  CHECK(RunConfig::fields_in({"sampler"}).size() == 3);
}
