#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mim/datagen.h"
#include "mim/editor.h"
#include "mim/grad_check.h"
#include "mim/op_cases.h"
#include "mim/sampler.h"
#include "mim/t2i.h"
#include "mim/vq.h"

namespace mim {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0;
  double threshold = 0;
  std::string relation;  // how value compares with threshold when passing
  std::string detail;
  double seconds = 0;
};

struct Report {
  std::vector<CheckResult> checks;

  bool passed() const;
  /// `name status value threshold`, one line per check, with an optional
  /// wall-clock column.
  std::string to_text(bool with_time = false) const;
  nlohmann::json to_json() const;
};

/// Rope, attention, modulation and head reshapes wrapped for grad_check.
std::vector<OpCase> model_op_cases();

TextConfig toy_text_config();
/// 2×2 grids, tiny widths; every block kind present.
ModelConfig toy_model_config();

/// Fills every all-zero parameter (gates, modulation, biases) with
/// N(0, stddev²) so that no pathway is switched off.
template <typename T>
void perturb_zero_params(ParamStore<T>& store, Rng& rng, double stddev);

/// grad_check of a masked-CE loss of the whole text encoder + backbone at
/// float64 on the toy config.
GradCheckReport backbone_grad_check(std::uint64_t seed, double tol = 1e-3);

void check_mask_rate(Report& report, int draws = 100000);
void check_schedules(Report& report);
void check_token_count(Report& report);
void check_gradients(Report& report);
void check_rope(Report& report, int trials = 1000);

struct SamplerSuiteOptions {
  std::vector<std::string> captions;
  std::vector<int> steps{1, 4, 8, 16, 48};
  std::uint64_t seed = 0;
  std::string prefix = "sampler";
};

/// Trajectory, commitment, termination, determinism, guidance identities and
/// pass counts of the decode loop on a real model. The tokenizer, when given,
/// adds the image-level determinism check.
void check_sampler(Report& report, const T2IModel<float>& model, int grid_side,
                   const SamplerSuiteOptions& options, const VqTokenizer* tokenizer = nullptr);

/// Logits at a fixed half-masked input under rate levels 0 and 999.
double condition_sensitivity(const T2IModel<float>& model, int grid_side,
                             const std::string& caption);
void check_condition(Report& report, const T2IModel<float>& model, int grid_side,
                     const std::string& caption);

/// Random (image, region, seed) edits must keep every token outside the
/// region; project_mask must agree with a patch scan.
void check_edit(Report& report, const T2IModel<float>& model, const VqTokenizer& tokenizer,
                const std::vector<CorpusItem>& images, int edits = 100, int masks = 1000,
                int steps = 8);

/// Checkpoint, token-file and image-file round trips under dir.
void check_persistence(Report& report, const std::filesystem::path& dir,
                       const T2IModel<float>& model, const VqTokenizer& tokenizer);

/// Suites that need no trained weights, on freshly initialized tiny models.
Report run_pretraining_suites(const std::vector<std::string>& selected,
                              const std::filesystem::path& scratch);
std::vector<std::string> pretraining_suite_names();

/// Sampler, condition, edit and persistence suites on a trained generator.
/// Captions and edit sources come from a small synthetic corpus.
Report run_checkpoint_suites(const std::vector<std::string>& selected, const T2IModel<float>& model,
                             const VqTokenizer& tokenizer, const std::filesystem::path& scratch);
std::vector<std::string> checkpoint_suite_names();

}  // namespace mim
