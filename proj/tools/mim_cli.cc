#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "mim/artifacts.h"
#include "mim/datagen.h"
#include "mim/editor.h"
#include "mim/run_config.h"
#include "mim/schedule.h"
#include "mim/suites.h"
#include "mim/trainer.h"

namespace fs = std::filesystem;
using namespace mim;

namespace {

enum ExitCode { kPass = 0, kCheckFailure = 1, kUsage = 2, kIo = 3 };

/// Config file plus one flag per dotted key of the given sections.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void attach(CLI::App* app, const std::vector<std::string>& sections) {
    app->add_option("--config", file, "flat JSON file of dotted keys");
    for (const auto& f : RunConfig::fields_in(sections)) {
      auto* opt = app->add_option("--" + f.key, values[f.key], f.help)->group("Config");
      options.emplace_back(f.key, opt);
    }
  }

  /// defaults <- file <- flags, then shorthands, which count as flags.
  RunConfig build(const std::vector<std::pair<std::string, std::optional<std::string>>>& shorthands = {}) const {
    RunConfig cfg;
    if (!file.empty()) cfg.merge_file(file);
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) cfg.set(key, values.at(key));
    for (const auto& [key, v] : shorthands)
      if (v) cfg.set(key, *v);
    return cfg;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out || !(out << text) || !out.flush()) throw IoError("cannot write " + path.string());
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string());
  }
}

std::vector<CaptionedImage> load_pairs(const std::string& dir, const RunConfig& cfg) {
  std::vector<CaptionedImage> pairs;
  if (dir.empty()) {
    for (auto& item : make_corpus(cfg.data_n, cfg.seed, cfg.vq.image_size))
      pairs.push_back({std::move(item.image), item.caption});
  } else {
    pairs = read_dataset_dir(dir);
  }
  for (const auto& p : pairs) {
    if (p.image.height != cfg.vq.image_size || p.image.width != cfg.vq.image_size || p.image.channels != 3) {
      throw ConfigError("dataset images must be " + std::to_string(cfg.vq.image_size) + "x" +
                        std::to_string(cfg.vq.image_size) + " RGB");
    }
  }
  return pairs;
}

MicroConditions micro_for(const VqTokenizer& tok) {
  MicroConditions m;
  m.original_h = m.original_w = tok.config().image_size;
  return m;
}

Generator load_generator_file(const std::string& path) {
  return load_generator(load_checkpoint(path));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked image token generation on synthetic scenes.\n"
               "Exit status: 0 pass, 1 check failure, 2 usage error, 3 I/O error."};
  app.require_subcommand(1);

  // datagen
  auto* datagen = app.add_subcommand("datagen", "render captioned scenes to {i}.ppm and captions.txt");
  ConfigFlags datagen_cfg;
  datagen_cfg.attach(datagen, {"", "data"});
  std::optional<std::string> datagen_n, datagen_size;
  std::string datagen_out;
  datagen->add_option("--n", datagen_n, "number of scenes (data.n)");
  datagen->add_option("--size", datagen_size, "image side in pixels (vq.image_size)");
  datagen->add_option("--out", datagen_out, "output directory")->required();

  // train-tokenizer
  auto* train_tok = app.add_subcommand("train-tokenizer", "train the VQ tokenizer");
  ConfigFlags tok_cfg;
  tok_cfg.attach(train_tok, {"", "data", "vq", "vq_train"});
  std::string tok_data, tok_out, tok_log;
  train_tok->add_option("--data", tok_data, "dataset directory (default: data.n generated scenes)");
  train_tok->add_option("--out", tok_out, "tokenizer checkpoint")->required();
  train_tok->add_option("--log", tok_log, "training log (default: <out>.log)");

  // train-t2i
  auto* train_t2i_cmd = app.add_subcommand("train-t2i", "train the text-to-image transformer");
  ConfigFlags t2i_cfg;
  t2i_cfg.attach(train_t2i_cmd, {"", "data", "text", "model", "train", "sampler"});
  std::string t2i_tok, t2i_data, t2i_out, t2i_log, t2i_samples;
  train_t2i_cmd->add_option("--tokenizer", t2i_tok, "tokenizer checkpoint")->required();
  train_t2i_cmd->add_option("--data", t2i_data, "dataset directory (default: data.n generated scenes)");
  train_t2i_cmd->add_option("--out", t2i_out, "generator checkpoint (embeds the tokenizer)")->required();
  train_t2i_cmd->add_option("--log", t2i_log, "metrics CSV step,loss,grad_norm (default: <out>.metrics.csv)");
  train_t2i_cmd->add_option("--samples", t2i_samples, "directory for periodic sample images");

  // generate
  auto* gen = app.add_subcommand("generate", "decode an image for a caption");
  ConfigFlags gen_cfg;
  gen_cfg.attach(gen, {"", "sampler"});
  std::string gen_ckpt, gen_caption, gen_out, gen_trace, gen_tokens;
  std::optional<std::string> gen_steps, gen_scale, gen_temp;
  gen->add_option("--checkpoint", gen_ckpt, "generator checkpoint")->required();
  gen->add_option("--caption", gen_caption, "caption text")->required();
  gen->add_option("--steps", gen_steps, "decoding steps (sampler.steps, default 48)");
  gen->add_option("--cfg", gen_scale, "guidance scale (sampler.cfg_scale, default 9)");
  gen->add_option("--temperature", gen_temp, "sampling temperature (sampler.temperature)");
  gen->add_option("--out", gen_out, "output image (.ppm or .png)")->required();
  gen->add_option("--trace", gen_trace, "per-step CSV step,masked_before,committed,min_confidence");
  gen->add_option("--tokens", gen_tokens, "token grid file");

  // edit
  auto* edit_cmd = app.add_subcommand("edit", "regenerate a region of an image under a caption");
  ConfigFlags edit_cfg;
  edit_cfg.attach(edit_cmd, {"", "sampler"});
  std::string edit_ckpt, edit_image, edit_mask, edit_caption, edit_out, edit_trace;
  std::optional<std::string> edit_steps, edit_scale, edit_temp;
  double edit_strength = 0.3;
  edit_cmd->add_option("--checkpoint", edit_ckpt, "generator checkpoint")->required();
  edit_cmd->add_option("--image", edit_image, "source image (.ppm or .png)")->required();
  auto* mask_opt = edit_cmd->add_option("--mask", edit_mask, "binary PGM, nonzero = edit region");
  edit_cmd->add_option("--strength", edit_strength,
                       "without --mask: fraction of least likely tokens to redraw")
      ->excludes(mask_opt);
  edit_cmd->add_option("--caption", edit_caption, "target caption")->required();
  edit_cmd->add_option("--steps", edit_steps, "decoding steps (sampler.steps)");
  edit_cmd->add_option("--cfg", edit_scale, "guidance scale (sampler.cfg_scale)");
  edit_cmd->add_option("--temperature", edit_temp, "sampling temperature (sampler.temperature)");
  edit_cmd->add_option("--out", edit_out, "output image")->required();
  edit_cmd->add_option("--trace", edit_trace, "per-step CSV");

  // verify
  auto* verify = app.add_subcommand("verify", "run verification suites and print one line per check");
  std::vector<std::string> suites;
  std::string verify_ckpt, verify_report, verify_scratch;
  bool verify_time = false;
  std::optional<int> schedule_steps, schedule_tokens;
  std::string suite_help = "suite to run (repeatable; default all):";
  for (const auto& s : pretraining_suite_names()) suite_help += " " + s;
  suite_help += "; with --checkpoint also condition";
  verify->add_option("--suite", suites, suite_help);
  verify->add_option("--checkpoint", verify_ckpt,
                     "trained generator for the sampler, condition, edit and persistence suites");
  verify->add_option("--report", verify_report, "also write the report as JSON");
  verify->add_option("--scratch", verify_scratch, "directory for round-trip files (default: a temp dir)");
  verify->add_flag("--time", verify_time, "add wall-clock seconds to each line");
  verify->add_option("--schedule-steps", schedule_steps, "print the (t, m_t) table for T steps and exit");
  verify->add_option("--schedule-tokens", schedule_tokens, "token count N for --schedule-steps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kUsage;
  }

  try {
    if (datagen->parsed()) {
      auto cfg = datagen_cfg.build({{"data.n", datagen_n}, {"vq.image_size", datagen_size}});
      cfg.resolve();
      cfg.check();
      write_dataset_dir(datagen_out, make_corpus(cfg.data_n, cfg.seed, cfg.vq.image_size));
      std::cout << "wrote " << cfg.data_n << " scenes to " << datagen_out << "\n";
      return kPass;
    }

    if (train_tok->parsed()) {
      auto cfg = tok_cfg.build();
      cfg.resolve();
      cfg.check();
      const auto pairs = load_pairs(tok_data, cfg);
      if (tok_log.empty()) tok_log = tok_out + ".log";
      ensure_parent(tok_out);
      ensure_parent(tok_log);
      std::ofstream log(tok_log);
      if (!log) throw IoError("cannot write " + tok_log);
      std::vector<Image> images;
      for (const auto& p : pairs) images.push_back(p.image);
      VqTokenizer tok(cfg.vq, cfg.seed);
      const auto start = std::chrono::steady_clock::now();
      train_tokenizer(tok, images, cfg.vq_train, [&](const std::string& line) {
        log << line << "\n";
        log.flush();
      });
      const auto usage = codebook_usage(tok, images);
      const auto used = std::count_if(usage.begin(), usage.end(), [](auto c) { return c > 0; });
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log << "final recon_mse " << format_real(reconstruction_mse(tok, images)) << " codes_used "
          << used << "/" << cfg.vq.codebook_K << " seconds " << format_real(secs) << "\n";
      auto ckpt = tok.to_checkpoint();
      ckpt.manifest["run"] = cfg.to_manifest();
      save_checkpoint(tok_out, ckpt);
      std::cout << "tokenizer: " << used << "/" << cfg.vq.codebook_K << " codes used, checkpoint "
                << tok_out << "\n";
      return kPass;
    }

    if (train_t2i_cmd->parsed()) {
      auto cfg = t2i_cfg.build();
      const auto tok_ckpt = load_checkpoint(t2i_tok);
      tok_ckpt.expect_kind("tokenizer");
      const auto tok = VqTokenizer::from_checkpoint(tok_ckpt);
      cfg.vq = tok.config();
      cfg.resolve();
      cfg.check();
      const auto pairs = load_pairs(t2i_data, cfg);
      if (t2i_log.empty()) t2i_log = t2i_out + ".metrics.csv";
      ensure_parent(t2i_out);
      ensure_parent(t2i_log);
      if (!t2i_samples.empty()) fs::create_directories(t2i_samples);

      T2IModel<float> model(Vocabulary::captions(), cfg.text, cfg.model, cfg.seed);
      std::vector<TrainItem> dataset;
      for (std::size_t i = 0; i < pairs.size(); i += 64) {
        std::vector<Image> chunk;
        for (std::size_t j = i; j < std::min(pairs.size(), i + 64); ++j) chunk.push_back(pairs[j].image);
        const auto grids = tok.encode(images_to_tensor(chunk));
        for (std::size_t j = 0; j < grids.size(); ++j)
          dataset.push_back({grids[j], model.tokenize(pairs[i + j].caption), cfg.vq.image_size});
      }

      std::ofstream log(t2i_log);
      if (!log) throw IoError("cannot write " + t2i_log);
      log << "step,loss,grad_norm\n";
      auto write_samples = [&](const std::string& tag) {
        if (t2i_samples.empty()) return;
        for (std::size_t i = 0; i < std::min<std::size_t>(4, pairs.size()); ++i) {
          const auto g = generate(model, tok, pairs[i].caption, cfg.sampler, micro_for(tok));
          write_ppm(fs::path(t2i_samples) / (tag + "_" + std::to_string(i) + ".ppm"), g.image);
        }
      };
      TrainHooks hooks;
      hooks.failed_batch_path = t2i_out + ".failed_batch.json";
      hooks.on_step = [&](int step, const StepResult& r) {
        if (step % cfg.train_log_every == 0 || step + 1 == cfg.train.steps) {
          log << metrics_line(step, r) << "\n";
          log.flush();
        }
        if (cfg.train_sample_every > 0 && (step + 1) % cfg.train_sample_every == 0) {
          write_samples("step" + std::to_string(step + 1));
        }
      };
      const auto result = train_t2i(model, dataset, cfg.train, hooks);
      write_samples("final");

      auto ckpt = make_generator_checkpoint(model, tok);
      ckpt.manifest["run"] = cfg.to_manifest();
      if (tok_ckpt.manifest.contains("run")) ckpt.manifest["tokenizer_run"] = tok_ckpt.manifest["run"];
      save_checkpoint(t2i_out, ckpt);
      std::cout << "trained " << cfg.train.steps << " steps on " << dataset.size() << " pairs";
      if (!result.losses.empty()) std::cout << ", final loss " << format_real(result.losses.back());
      std::cout << ", checkpoint " << t2i_out << "\n";
      return kPass;
    }

    if (gen->parsed()) {
      auto cfg = gen_cfg.build(
          {{"sampler.steps", gen_steps}, {"sampler.cfg_scale", gen_scale}, {"sampler.temperature", gen_temp}});
      cfg.resolve();
      cfg.check();
      const auto g = load_generator_file(gen_ckpt);
      const auto out = generate(g.model, g.tokenizer, gen_caption, cfg.sampler, micro_for(g.tokenizer));
      ensure_parent(gen_out);
      write_image(gen_out, out.image);
      if (!gen_trace.empty()) write_text(gen_trace, out.trace.to_csv());
      if (!gen_tokens.empty()) write_token_grid(gen_tokens, out.tokens);
      std::cout << "wrote " << gen_out << " (" << out.trace.forward_passes << " forward passes)\n";
      return kPass;
    }

    if (edit_cmd->parsed()) {
      auto cfg = edit_cfg.build(
          {{"sampler.steps", edit_steps}, {"sampler.cfg_scale", edit_scale}, {"sampler.temperature", edit_temp}});
      cfg.resolve();
      cfg.check();
      if (!(edit_strength > 0 && edit_strength <= 1)) throw ConfigError("--strength must be in (0, 1]");
      const auto g = load_generator_file(edit_ckpt);
      const auto source = read_image(edit_image);
      const int side = g.tokenizer.config().image_size;
      if (source.height != side || source.width != side || source.channels != 3) {
        throw ConfigError("source image must be " + std::to_string(side) + "x" + std::to_string(side) + " RGB");
      }
      EditResult out;
      if (!edit_mask.empty()) {
        EditRequest req;
        req.source = source;
        req.region = Mask2D::from_image(read_pnm(edit_mask));
        if (req.region.height != side || req.region.width != side) {
          throw ConfigError("mask must be " + std::to_string(side) + "x" + std::to_string(side));
        }
        req.caption = edit_caption;
        req.sampler = cfg.sampler;
        out = edit(req, g.model, g.tokenizer);
      } else {
        out = edit_mask_free(source, edit_caption, edit_strength, cfg.sampler, g.model, g.tokenizer);
      }
      ensure_parent(edit_out);
      write_image(edit_out, out.image);
      if (!edit_trace.empty()) write_text(edit_trace, out.trace.to_csv());
      std::int64_t changed = 0;
      for (std::int64_t i = 0; i < out.tokens.size(); ++i)
        changed += out.tokens.indices[i] != out.source_tokens.indices[i];
      std::cout << "wrote " << edit_out << " (" << changed << " of " << out.tokens.size()
                << " tokens changed)\n";
      return kPass;
    }

    if (verify->parsed()) {
      if (schedule_steps || schedule_tokens) {
        if (!schedule_steps || !schedule_tokens) {
          throw ConfigError("--schedule-steps and --schedule-tokens go together");
        }
        const auto s = cosine_schedule(*schedule_steps, *schedule_tokens);
        std::cout << "t m_t\n";
        for (std::size_t t = 0; t < s.masked.size(); ++t) std::cout << t << " " << s.masked[t] << "\n";
        return kPass;
      }
      fs::path scratch = verify_scratch;
      const bool own_scratch = scratch.empty();
      if (own_scratch) {
        scratch = fs::temp_directory_path() /
                  ("mim_verify_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
      }
      fs::create_directories(scratch);
      Report report;
      if (verify_ckpt.empty()) {
        report = run_pretraining_suites(suites, scratch);
      } else {
        const auto g = load_generator_file(verify_ckpt);
        const auto on_ckpt = checkpoint_suite_names();
        const auto all = pretraining_suite_names();
        std::vector<std::string> fresh, trained;
        for (const auto& s : suites) {
          const bool c = std::find(on_ckpt.begin(), on_ckpt.end(), s) != on_ckpt.end();
          if (!c && std::find(all.begin(), all.end(), s) == all.end()) {
            throw ConfigError("unknown suite '" + s + "'");
          }
          (c ? trained : fresh).push_back(s);
        }
        if (suites.empty()) {
          for (const auto& s : all)
            if (std::find(on_ckpt.begin(), on_ckpt.end(), s) == on_ckpt.end()) fresh.push_back(s);
        }
        if (!fresh.empty()) report = run_pretraining_suites(fresh, scratch);
        if (suites.empty() || !trained.empty()) {
          const auto r = run_checkpoint_suites(trained, g.model, g.tokenizer, scratch);
          report.checks.insert(report.checks.end(), r.checks.begin(), r.checks.end());
        }
      }
      if (own_scratch) fs::remove_all(scratch);
      std::cout << report.to_text(verify_time);
      if (!verify_report.empty()) write_text(verify_report, report.to_json().dump(2) + "\n");
      return report.passed() ? kPass : kCheckFailure;
    }
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailure;
  }
  return kUsage;
}
