#include <cmath>

#include "doctest.h"
#include "mim/editor.h"
#include "tiny.h"

using namespace mim;

namespace {

class HashDenoiser : public Denoiser {
 public:
  explicit HashDenoiser(int k) : k_(k) {}
  int codebook_size() const override { return k_; }
  std::vector<float> logits(const TokenGrid& grid, bool conditional, const MaskRate& rate) override {
    ++calls_;
    std::vector<float> out(static_cast<std::size_t>(grid.size()) * k_);
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint64_t h = (i + 1) * 0x9E3779B97F4A7C15ULL ^ (conditional ? 0xABCDULL : 0) ^
                        static_cast<std::uint64_t>(rate.level) * 0x100000001B3ULL;
      h ^= h >> 29;
      h *= 0xBF58476D1CE4E5B9ULL;
      h ^= h >> 32;
      out[i] = static_cast<float>(h % 1000) / 100.0f;
    }
    return out;
  }

 private:
  int k_;
};

Mask2D brute_force(const Mask2D& px, int f) {
  Mask2D out(px.height / f, px.width / f);
  for (int ty = 0; ty < out.height; ++ty)
    for (int tx = 0; tx < out.width; ++tx) {
      bool any = false;
      for (int dy = 0; dy < f; ++dy)
        for (int dx = 0; dx < f; ++dx) any = any || px.at(ty * f + dy, tx * f + dx);
      out.cells[ty * out.width + tx] = any;
    }
  return out;
}

Mask2D random_mask(int h, int w, double density, Rng& rng) {
  Mask2D m(h, w);
  for (std::size_t i = 0; i < m.cells.size(); ++i) m.cells[i] = rng.uniform() < density;
  return m;
}

TokenGrid random_grid(int side, int k, Rng& rng) {
  TokenGrid g(side, side, k);
  for (auto& v : g.indices) v = static_cast<std::int64_t>(rng.below(k));
  return g;
}

}  // namespace

TEST_CASE("project_mask examples") {
  Mask2D one(32, 32);
  one.cells[13 * 32 + 22] = true;
  const auto t = project_mask(one, 4);
  CHECK(t.count() == 1);
  CHECK(t.at(3, 5));

  CHECK(project_mask(Mask2D(32, 32, true), 4).count() == 64);

  Mask2D checker(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) checker.cells[y * 32 + x] = (x + y) % 2 == 0;
  const auto ct = project_mask(checker, 4);
  CHECK(ct.cells == brute_force(checker, 4).cells);
  CHECK(ct.count() == 64);

  CHECK_THROWS(project_mask(Mask2D(32, 32), 4));
  CHECK(project_mask(Mask2D(32, 32), 4, true).count() == 0);
  CHECK_THROWS(project_mask(Mask2D(30, 32, true), 4));
}

TEST_CASE("project_mask matches the patch scan and is monotone") {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const int f = 1 << rng.below(3);
    const int h = f * static_cast<int>(1 + rng.below(8));
    const int w = f * static_cast<int>(1 + rng.below(8));
    const double density = std::pow(rng.uniform(), 4);
    auto m = random_mask(h, w, density, rng);
    const auto got = project_mask(m, f, true);
    CHECK(got.cells == brute_force(m, f).cells);
    auto bigger = m;
    for (std::size_t i = 0; i < bigger.cells.size(); ++i) bigger.cells[i] = bigger.cells[i] || rng.uniform() < 0.05;
    const auto gb = project_mask(bigger, f, true);
    for (std::size_t i = 0; i < got.cells.size(); ++i)
      if (got.cells[i]) CHECK(gb.cells[i]);
  }
}

TEST_CASE("edits preserve tokens outside the region") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 16;
    const auto source = random_grid(8, k, rng);
    const auto pixels = random_mask(32, 32, 0.002 + 0.02 * rng.uniform(), rng);
    const auto region = project_mask(pixels, 4, true);
    HashDenoiser den(k);
    SamplerConfig cfg;
    cfg.steps = static_cast<int>(1 + rng.below(12));
    cfg.seed = rng.next_u64();
    cfg.temperature = trial % 2 ? 1.0 : 0.0;
    const auto out = edit_tokens(source, region, den, cfg);
    CHECK(out.tokens.masked_count() == 0);
    for (std::size_t i = 0; i < region.cells.size(); ++i)
      if (!region.cells[i]) CHECK(out.tokens.indices[i] == source.indices[i]);
    const auto steps = std::min<std::int64_t>(cfg.steps, region.count());
    CHECK(den.calls() == 2 * steps);
    CHECK(out.trace.forward_passes == 2 * steps);
  }
}

TEST_CASE("empty region leaves the grid unchanged, full region is generation") {
  Rng rng(4);
  const auto source = random_grid(8, 16, rng);
  HashDenoiser den(16);
  SamplerConfig cfg;
  cfg.steps = 8;
  auto none = edit_tokens(source, Mask2D(8, 8), den, cfg);
  CHECK(none.tokens == source);
  CHECK(den.calls() == 0);

  auto full = edit_tokens(source, Mask2D(8, 8, true), den, cfg);
  DecodeTrace trace;
  HashDenoiser fresh(16);
  CHECK(full.tokens == decode_grid(TokenGrid::fully_masked(8, 8, 16), fresh, cfg, trace));

  CHECK_THROWS(apply_token_mask(source, Mask2D(4, 4, true)));
}

TEST_CASE("confidence mask selects the least likely source tokens") {
  Rng rng(5);
  const auto source = random_grid(4, 8, rng);
  HashDenoiser den(8);
  const auto mask = confidence_mask(source, den, 0.3, 9.0);
  CHECK(mask.count() == 5);  // ceil(0.3 * 16)
  CHECK(den.calls() == 2);

  HashDenoiser ref(8);
  const auto g = cfg_mix(ref.logits(source, true, make_rate(0)), ref.logits(source, false, make_rate(0)), 9.0);
  std::vector<double> conf;
  for (int i = 0; i < 16; ++i) {
    const float* row = g.data() + i * 8;
    double z = 0, mx = *std::max_element(row, row + 8);
    for (int j = 0; j < 8; ++j) z += std::exp(row[j] - mx);
    conf.push_back(std::exp(row[source.indices[i]] - mx) / z);
  }
  double worst_kept = 1, best_masked = 0;
  for (int i = 0; i < 16; ++i) {
    if (mask.cells[i]) best_masked = std::max(best_masked, conf[i]);
    else worst_kept = std::min(worst_kept, conf[i]);
  }
  CHECK(best_masked <= worst_kept);
  CHECK(confidence_mask(source, den, 1.0, 9.0).count() == 16);
  CHECK_THROWS(confidence_mask(source, den, 0.0, 9.0));
}

TEST_CASE("edit with a model and tokenizer") {
  VqConfig vc;
  vc.image_size = 16;
  vc.codebook_K = 16;
  vc.embed_D = 8;
  vc.base_channels = 8;
  VqTokenizer tok(vc, 1);
  T2IModel<float> model(Vocabulary::captions(), test::tiny_text(), test::tiny_model(16), 2);
  const auto corpus = make_corpus(2, 3, 16);
  EditRequest req;
  req.source = corpus[0].image;
  req.region = Mask2D(16, 16);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 6; ++x) req.region.cells[y * 16 + x] = true;
  req.caption = corpus[1].caption;
  req.sampler.steps = 3;
  const auto out = edit(req, model, tok);
  const auto region = project_mask(req.region, 4);
  CHECK(region.count() == 4);
  for (std::size_t i = 0; i < region.cells.size(); ++i)
    if (!region.cells[i]) CHECK(out.tokens.indices[i] == out.source_tokens.indices[i]);
  CHECK(out.image.height == 16);
  CHECK(out.trace.forward_passes == 6);

  const auto free = edit_mask_free(req.source, req.caption, 0.25, req.sampler, model, tok);
  CHECK(free.trace.forward_passes == 6);
  int changed_or_kept = 0;
  for (std::size_t i = 0; i < 16; ++i) changed_or_kept += free.tokens.indices[i] != free.source_tokens.indices[i];
  CHECK(changed_or_kept <= 4);

  req.region = Mask2D(8, 8, true);
  CHECK_THROWS_AS(edit(req, model, tok), ShapeError);
}

TEST_CASE("mask image conversion") {
  Image img(4, 4, 1);
  img.pixels[5] = 7;
  const auto m = Mask2D::from_image(img);
  CHECK(m.count() == 1);
  CHECK(m.at(1, 1));
  CHECK(Mask2D::from_image(m.to_image()).cells == m.cells);
}
