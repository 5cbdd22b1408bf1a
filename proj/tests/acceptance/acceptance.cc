// Runs the twelve acceptance criteria and prints one PASS/FAIL line each,
// followed by the individual checks behind it.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "mim/artifacts.h"
#include "mim/datagen.h"
#include "mim/suites.h"
#include "mim/trainer.h"

namespace fs = std::filesystem;
using namespace mim;
using Clock = std::chrono::steady_clock;

namespace {

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void add(Report& r, const std::string& name, bool passed, double value, double threshold,
         const std::string& relation, const std::string& detail = "", double seconds = 0) {
  r.checks.push_back({name, passed, value, threshold, relation, detail, seconds});
}

struct Options {
  fs::path scratch;
  int tokenizer_steps = 1500;
  int memorization_max_steps = 20000;
  double memorization_budget_s = 1800;
  int compression_steps = 500;
  bool verbose = false;
};

std::vector<TrainItem> encode_items(const VqTokenizer& tok, const T2IModel<float>& model,
                                    const std::vector<CorpusItem>& items) {
  std::vector<TrainItem> out;
  for (std::size_t i = 0; i < items.size(); i += 64) {
    std::vector<Image> chunk;
    for (std::size_t j = i; j < std::min(items.size(), i + 64); ++j) chunk.push_back(items[j].image);
    const auto grids = tok.encode(images_to_tensor(chunk));
    for (std::size_t j = 0; j < grids.size(); ++j)
      out.push_back({grids[j], model.tokenize(items[i + j].caption), tok.config().image_size});
  }
  return out;
}

/// Shared state: criterion 5 trains the tokenizer, 6 the overfit model that
/// 7, 8, 9 and 12 reuse.
struct Context {
  Options opt;
  std::vector<CorpusItem> tokenizer_train, tokenizer_held;
  std::unique_ptr<VqTokenizer> tokenizer;
  std::vector<CorpusItem> pairs;
  std::unique_ptr<T2IModel<float>> model;

  VqTokenizer& need_tokenizer();
  T2IModel<float>& need_model();
};

Report criterion_tokenizer(Context& ctx) {
  Report r;
  const auto corpus = make_corpus(512, 0);
  ctx.tokenizer_train.assign(corpus.begin(), corpus.begin() + 256);
  ctx.tokenizer_held.assign(corpus.begin() + 256, corpus.end());
  std::vector<Image> train, held;
  for (const auto& c : ctx.tokenizer_train) train.push_back(c.image);
  for (const auto& c : ctx.tokenizer_held) held.push_back(c.image);

  ctx.tokenizer = std::make_unique<VqTokenizer>(VqConfig{}, 1);
  VqTrainConfig cfg;
  cfg.steps = ctx.opt.tokenizer_steps;
  cfg.log_every = 100;
  std::ofstream log(ctx.opt.scratch / "tokenizer_run.log");
  const auto t0 = Clock::now();
  train_tokenizer(*ctx.tokenizer, train, cfg, [&](const std::string& line) {
    log << line << " t=" << since(t0) << "\n";
    if (ctx.opt.verbose) std::cerr << "tokenizer " << line << "\n";
  });
  const double secs = since(t0);
  const double mse = reconstruction_mse(*ctx.tokenizer, held);
  const auto usage = codebook_usage(*ctx.tokenizer, train);
  const double used = static_cast<double>(std::count_if(usage.begin(), usage.end(), [](auto c) { return c > 0; })) /
                      static_cast<double>(usage.size());
  log << "held_out_mse " << mse << " codebook_used " << used << "\n";
  add(r, "tokenizer.held_out_mse", mse < 0.02, mse, 0.02, "<", "256 held-out images");
  add(r, "tokenizer.codebook_used", used >= 0.25, used, 0.25, ">=",
      "fraction of " + std::to_string(usage.size()) + " codes hit by the training set");
  add(r, "tokenizer.runtime_s", secs <= 600, secs, 600, "<=", std::to_string(cfg.steps) + " steps", secs);
  return r;
}

VqTokenizer& Context::need_tokenizer() {
  if (!tokenizer) criterion_tokenizer(*this);
  return *tokenizer;
}

/// Greedy decoding at T=8 against the memorized grids; returns per-pair
/// agreement.
std::vector<double> agreement(const T2IModel<float>& model, const VqTokenizer& tok,
                              const std::vector<CorpusItem>& pairs, const std::vector<TrainItem>& data) {
  std::vector<double> out;
  SamplerConfig sc;
  sc.temperature = 0;
  sc.steps = 8;
  MicroConditions micro;
  micro.original_h = micro.original_w = tok.config().image_size;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto g = generate(model, tok, pairs[i].caption, sc, micro);
    std::int64_t same = 0;
    for (std::int64_t j = 0; j < g.tokens.size(); ++j) same += g.tokens.indices[j] == data[i].tokens.indices[j];
    out.push_back(static_cast<double>(same) / static_cast<double>(g.tokens.size()));
  }
  return out;
}

Report criterion_memorization(Context& ctx) {
  Report r;
  auto& tok = ctx.need_tokenizer();
  ctx.pairs = make_corpus(16, 7);
  ctx.model = std::make_unique<T2IModel<float>>(Vocabulary::captions(), TextConfig{}, ModelConfig{}, 3);
  auto& model = *ctx.model;
  const auto data = encode_items(tok, model, ctx.pairs);

  TrainConfig cfg;
  cfg.steps = ctx.opt.memorization_max_steps;
  cfg.lr = 1e-3;
  cfg.seed = 11;
  double ce = INFINITY;
  std::vector<double> agree;
  bool done = false;
  int steps_run = 0;
  std::ofstream log(ctx.opt.scratch / "memorization.csv");
  log << "step,loss,grad_norm\n";
  const auto t0 = Clock::now();
  TrainHooks hooks;
  hooks.on_step = [&](int step, const StepResult& s) {
    steps_run = step + 1;
    if (step % 50 == 0) log << metrics_line(step, s) << "\n";
  };
  hooks.stop = [&](int step) {
    if ((step + 1) % 250 != 0) return since(t0) > ctx.opt.memorization_budget_s;
    ce = evaluate_masked_ce(model, data, 4, 99);
    if (ctx.opt.verbose) std::cerr << "memorization step " << step + 1 << " ce " << ce << "\n";
    if (ce < 0.05) {
      agree = agreement(model, tok, ctx.pairs, data);
      const double mean = std::accumulate(agree.begin(), agree.end(), 0.0) / agree.size();
      done = *std::min_element(agree.begin(), agree.end()) >= 0.95 && mean >= 0.99;
    }
    return done || since(t0) > ctx.opt.memorization_budget_s;
  };
  train_t2i(model, data, cfg, hooks);
  const double secs = since(t0);
  if (!done) {
    ce = evaluate_masked_ce(model, data, 4, 99);
    agree = agreement(model, tok, ctx.pairs, data);
  }
  const double mean = std::accumulate(agree.begin(), agree.end(), 0.0) / agree.size();
  const double worst = *std::min_element(agree.begin(), agree.end());
  add(r, "memorization.masked_ce", ce < 0.05, ce, 0.05, "<", std::to_string(steps_run) + " steps at lr 1e-3");
  add(r, "memorization.train_steps", steps_run <= 20000, steps_run, 20000, "<=");
  add(r, "memorization.runtime_s", secs <= 1800, secs, 1800, "<=", "", secs);
  add(r, "memorization.agreement_min", worst >= 0.95, worst, 0.95, ">=", "greedy, T=8, cfg 9, 16 pairs");
  add(r, "memorization.agreement_mean", mean >= 0.99, mean, 0.99, ">=");
  save_checkpoint(ctx.opt.scratch / "overfit.ckpt", make_generator_checkpoint(model, tok));
  return r;
}

T2IModel<float>& Context::need_model() {
  if (!model) criterion_memorization(*this);
  return *model;
}

Report criterion_sampler(Context& ctx) {
  Report r;
  auto& model = ctx.need_model();
  SamplerSuiteOptions opt;
  opt.captions = {ctx.pairs[0].caption, ctx.pairs[5].caption};
  opt.seed = 5;
  check_sampler(r, model, ctx.tokenizer->config().grid_side(), opt, ctx.tokenizer.get());
  return r;
}

Report criterion_condition(Context& ctx) {
  Report r;
  auto& model = ctx.need_model();
  check_condition(r, model, ctx.tokenizer->config().grid_side(), ctx.pairs[0].caption);
  return r;
}

Report criterion_edit(Context& ctx) {
  Report r;
  auto& model = ctx.need_model();
  check_edit(r, model, *ctx.tokenizer, ctx.pairs, 100, 1000, 8);
  return r;
}

Report criterion_compression(Context& ctx) {
  Report r;
  VqConfig vc;
  vc.image_size = 64;
  VqTokenizer tok(vc, 21);
  const auto corpus = make_corpus(32, 21, vc.image_size);
  std::vector<Image> images;
  for (const auto& c : corpus) images.push_back(c.image);
  Rng rng(21);
  tok.init_codebook_from(images_to_tensor(images), rng);

  ModelConfig mc;
  add(r, "compression.active", mc.compresses(vc.grid_side()), vc.grid_side(), mc.compression_threshold, ">=",
      "grid side");
  T2IModel<float> model(Vocabulary::captions(), TextConfig{}, mc, 22);
  const auto data = encode_items(tok, model, corpus);
  TrainConfig cfg;
  cfg.steps = ctx.opt.compression_steps;
  cfg.batch = 8;
  cfg.seed = 23;
  const auto t0 = Clock::now();
  const auto result = train_t2i(model, data, cfg);
  const double secs = since(t0);
  const auto& l = result.losses;
  const bool finite = std::all_of(l.begin(), l.end(), [](double v) { return std::isfinite(v); });
  add(r, "compression.finite_loss", finite && static_cast<int>(l.size()) == cfg.steps, finite ? 1 : 0, 1, "==",
      std::to_string(l.size()) + " steps", secs);
  const std::size_t w = std::min<std::size_t>(50, l.size() / 2);
  const double head = std::accumulate(l.begin(), l.begin() + w, 0.0) / w;
  const double tail = std::accumulate(l.end() - w, l.end(), 0.0) / w;
  add(r, "compression.loss_decrease", tail < head, tail - head, 0, "<",
      "mean of last 50 minus first 50 (" + std::to_string(head) + " -> " + std::to_string(tail) + ")");

  SamplerSuiteOptions opt;
  opt.captions = {corpus[0].caption, corpus[1].caption};
  opt.prefix = "compression.sampler";
  check_sampler(r, model, vc.grid_side(), opt, &tok);
  return r;
}

Report criterion_persistence(Context& ctx) {
  Report r;
  auto& model = ctx.need_model();
  const auto dir = ctx.opt.scratch / "persistence";
  fs::create_directories(dir);
  check_persistence(r, dir, model, *ctx.tokenizer);
  const auto g = load_generator(load_checkpoint(ctx.opt.scratch / "overfit.ckpt"));
  bool same = true;
  for (const auto& [name, t] : model.params().items()) {
    const auto u = g.model.params().get(name);
    same = same && std::equal(t.data().begin(), t.data().end(), u.data().begin(), u.data().end());
  }
  add(r, "persistence.generator_checkpoint", same, same ? 0 : 1, 0, "==", "overfit model reloaded bit-exact");
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-12"};
  Options opt;
  std::string scratch;
  std::vector<int> only;
  app.add_option("--scratch", scratch, "working directory for logs and checkpoints");
  app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
  app.add_option("--tokenizer-steps", opt.tokenizer_steps, "tokenizer training steps");
  app.add_option("--compression-steps", opt.compression_steps, "training steps for the compression config");
  app.add_flag("-v,--verbose", opt.verbose, "progress on stderr");
  CLI11_PARSE(app, argc, argv);

  opt.scratch = scratch.empty() ? fs::temp_directory_path() / "mim_acceptance" : fs::path(scratch);
  fs::create_directories(opt.scratch);
  Context ctx{opt, {}, {}, {}, {}, {}};

  struct Criterion {
    int id;
    std::string name;
    std::function<Report()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "masking-density fidelity", [] { Report r; check_mask_rate(r); return r; }},
      {2, "gradient correctness", [] { Report r; check_gradients(r); return r; }},
      {3, "token-count arithmetic", [] { Report r; check_token_count(r); return r; }},
      {4, "schedule validity", [] { Report r; check_schedules(r); return r; }},
      {5, "tokenizer reconstruction", [&] { return criterion_tokenizer(ctx); }},
      {6, "memorization end-to-end", [&] { return criterion_memorization(ctx); }},
      {7, "sampler invariants on the overfit checkpoint", [&] { return criterion_sampler(ctx); }},
      {8, "masking-rate condition sensitivity", [&] { return criterion_condition(ctx); }},
      {9, "editing preservation", [&] { return criterion_edit(ctx); }},
      {10, "rope relative position and qk-norm invariance", [] { Report r; check_rope(r, 1000); return r; }},
      {11, "compression path", [&] { return criterion_compression(ctx); }},
      {12, "persistence", [&] { return criterion_persistence(ctx); }},
  };

  const std::set<int> selected(only.begin(), only.end());
  bool all = true;
  std::string summary;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = Clock::now();
    Report r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      add(r, "criterion" + std::to_string(c.id) + ".error", false, 1, 0, "==", e.what());
    }
    const bool ok = r.passed() && !r.checks.empty();
    all = all && ok;
    std::ostringstream line;
    line << "criterion " << c.id << " " << (ok ? "PASS" : "FAIL") << " " << c.name << " (" << std::fixed
         << std::setprecision(1) << since(t0) << "s)\n";
    std::cout << line.str();
    std::istringstream details(r.to_text());
    for (std::string d; std::getline(details, d);) std::cout << "    " << d << "\n";
    std::cout.flush();
    summary += line.str();
  }
  std::cout << "\n" << summary << (all ? "ALL PASS" : "SOME FAILED") << "\n";
  return all ? 0 : 1;
}
