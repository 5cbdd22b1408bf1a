#include "mim/sampler.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mim/checkpoint.h"

namespace mim {

void SamplerConfig::check() const {
  if (steps < 1) throw std::invalid_argument("sampler: steps must be >= 1");
  if (!(cfg_scale >= 0) || !std::isfinite(cfg_scale)) {
    throw std::invalid_argument("sampler: cfg scale must be finite and >= 0");
  }
  if (!(temperature >= 0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("sampler: temperature must be finite and >= 0");
  }
}

nlohmann::json SamplerConfig::to_json() const {
  return {{"steps", steps},
          {"cfg_scale", format_real(cfg_scale)},
          {"temperature", format_real(temperature)},
          {"seed", seed}};
}

SamplerConfig SamplerConfig::from_json(const nlohmann::json& j) {
  SamplerConfig c;
  c.steps = j.at("steps").get<int>();
  c.cfg_scale = parse_real(j.at("cfg_scale").get<std::string>());
  c.temperature = parse_real(j.at("temperature").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.check();
  return c;
}

std::vector<float> cfg_mix(const std::vector<float>& cond, const std::vector<float>& uncond,
                           double s) {
  if (cond.size() != uncond.size()) {
    throw ShapeError("cfg_mix: " + std::to_string(cond.size()) + " vs " +
                     std::to_string(uncond.size()) + " logits");
  }
  if (s == 0.0) return uncond;
  if (s == 1.0) return cond;
  std::vector<float> g(cond.size());
  const auto sf = static_cast<float>(s);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = uncond[i] + sf * (cond[i] - uncond[i]);
  return g;
}

ModelDenoiser::ModelDenoiser(const T2IModel<float>& model, const std::string& caption,
                             const MicroConditions& micro)
    : model_(model), micro_(micro) {
  NoGradGuard guard;
  cond_ = model.encode_captions({caption});
  uncond_ = model.null_embedding(1);
}

std::vector<float> ModelDenoiser::logits(const TokenGrid& grid, bool conditional,
                                         const MaskRate& rate) {
  NoGradGuard guard;
  ++calls_;
  const ConditionBundle bundle{micro_, rate};
  const auto out = model_.logits({grid}, conditional ? cond_ : uncond_, {bundle});
  return {out.data().begin(), out.data().end()};
}

std::string DecodeTrace::to_csv() const {
  std::ostringstream out;
  out << "step,masked_before,committed,min_confidence\n";
  for (const auto& s : steps) {
    out << s.step << "," << s.masked_before << "," << s.committed.size() << ","
        << format_real(s.min_confidence) << "\n";
  }
  return out.str();
}

TokenGrid decode_step(const TokenGrid& grid, Denoiser& denoiser, const InferenceSchedule& schedule,
                      int t, Rng& rng, const SamplerConfig& config, DecodeTrace& trace) {
  if (t < 1 || t > schedule.steps) {
    throw std::out_of_range("decode_step: step " + std::to_string(t) + " outside schedule of " +
                            std::to_string(schedule.steps));
  }
  const std::int64_t masked = grid.masked_count();
  if (masked != schedule.masked[t - 1]) {
    throw std::logic_error("decode_step: grid has " + std::to_string(masked) +
                           " masked cells, schedule expects " +
                           std::to_string(schedule.masked[t - 1]));
  }
  const int k = denoiser.codebook_size();
  if (k != grid.codebook_size) throw ShapeError("decode_step: codebook size mismatch");
  const std::int64_t n = grid.size();
  const MaskRate rate = make_rate(static_cast<double>(masked) / static_cast<double>(n));

  const auto uncond = denoiser.logits(grid, false, rate);
  const auto cond = denoiser.logits(grid, true, rate);
  trace.forward_passes += 2;
  if (static_cast<std::int64_t>(cond.size()) != n * k) {
    throw ShapeError("decode_step: denoiser returned " + std::to_string(cond.size()) + " logits");
  }
  const auto g = cfg_mix(cond, uncond, config.cfg_scale);

  struct Candidate {
    std::int64_t pos;
    std::int64_t token;
    double confidence;
  };
  std::vector<Candidate> candidates;
  std::vector<double> p(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < n; ++i) {
    if (!grid.masked(i)) continue;
    const float* row = g.data() + i * k;
    double mx = -INFINITY;
    for (int j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    if (!std::isfinite(mx)) throw NumericError("decode_step: non-finite logits");
    double z = 0;
    for (int j = 0; j < k; ++j) z += (p[j] = std::exp(row[j] - mx));
    std::int64_t choice = 0;
    if (config.temperature == 0) {
      for (int j = 1; j < k; ++j)
        if (row[j] > row[choice]) choice = j;
    } else {
      std::vector<double> q(static_cast<std::size_t>(k));
      double zq = 0;
      for (int j = 0; j < k; ++j) zq += (q[j] = std::exp((row[j] - mx) / config.temperature));
      double u = rng.uniform() * zq;
      choice = k - 1;
      for (int j = 0; j < k; ++j) {
        u -= q[j];
        if (u < 0) {
          choice = j;
          break;
        }
      }
    }
    candidates.push_back({i, choice, p[choice] / z});
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    return a.confidence > b.confidence;
  });

  const std::int64_t commit = schedule.unmask[t - 1];
  TokenGrid next = grid;
  StepRecord record;
  record.step = t;
  record.masked_before = masked;
  record.rate_level = rate.level;
  record.min_confidence = 1.0;
  for (std::int64_t c = 0; c < commit; ++c) {
    next.indices[candidates[c].pos] = candidates[c].token;
    record.committed.push_back(candidates[c].pos);
    record.min_confidence = std::min(record.min_confidence, candidates[c].confidence);
  }
  std::sort(record.committed.begin(), record.committed.end());
  trace.steps.push_back(std::move(record));
  return next;
}

TokenGrid decode_grid(const TokenGrid& start, Denoiser& denoiser, const SamplerConfig& config,
                      DecodeTrace& trace) {
  config.check();
  start.check();
  const std::int64_t masked = start.masked_count();
  if (masked == 0) return start;
  const int steps = static_cast<int>(std::min<std::int64_t>(config.steps, masked));
  const auto schedule = cosine_schedule(steps, masked);
  Rng rng(config.seed);
  TokenGrid grid = start;
  for (int t = 1; t <= steps; ++t) grid = decode_step(grid, denoiser, schedule, t, rng, config, trace);
  return grid;
}

Generation generate(const T2IModel<float>& model, const VqTokenizer& tokenizer,
                    const std::string& caption, const SamplerConfig& config,
                    const MicroConditions& micro) {
  const auto& vq = tokenizer.config();
  if (vq.codebook_K != model.model_config().codebook_K) {
    throw ShapeError("generate: tokenizer has " + std::to_string(vq.codebook_K) +
                     " codes, model predicts " + std::to_string(model.model_config().codebook_K));
  }
  ModelDenoiser denoiser(model, caption, micro);
  Generation out;
  const int side = vq.grid_side();
  out.tokens = decode_grid(TokenGrid::fully_masked(side, side, vq.codebook_K), denoiser, config,
                           out.trace);
  NoGradGuard guard;
  out.image = tensor_to_images(tokenizer.decode({out.tokens})).at(0);
  return out;
}

}  // namespace mim
