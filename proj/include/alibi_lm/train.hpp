#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "alibi_lm/data.hpp"
#include "alibi_lm/model.hpp"

namespace alibi_lm {

enum class Schedule { inverse_sqrt, cosine, constant };

std::string schedule_name(Schedule schedule);
Schedule parse_schedule(const std::string& name);

struct TrainConfig {
  int L = 64;
  int batch_size = 32;
  int steps = 2000;
  double lr_peak = 3e-4;
  int warmup_steps = 100;
  Schedule schedule = Schedule::inverse_sqrt;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double grad_clip = 1.0;  // <= 0 disables clipping
  std::uint64_t seed = 1;
  int eval_every = 500;  // 0 disables periodic validation
  // Cap on validation tokens scored at each periodic evaluation; 0 = all.
  std::size_t eval_tokens = 16384;

  void validate() const;
};

// Linear warmup from 0 to lr_peak over warmup_steps, then the decay.
double lr_at(int step, const TrainConfig& config);

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::int64_t step = 0;
};

AdamState make_adam_state(std::span<const NamedParameter> params);

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping. Throws DivergenceError naming the first
// parameter with a non-finite gradient.
double clip_grad_norm(std::span<const NamedParameter> params, double max_norm);

// One bias-corrected Adam update (gradients clipped to config.grad_clip
// first). Returns the pre-clip global gradient norm.
double adam_step(std::span<const NamedParameter> params, AdamState& state, double lr, const TrainConfig& config);

struct TrainStep {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double elapsed_s = 0.0;
};

struct ValidationPoint {
  int step = 0;
  double perplexity = 0.0;
};

struct TrainLog {
  std::vector<TrainStep> steps;
  std::vector<ValidationPoint> validation;
};

inline constexpr const char* kTrainLogCsvHeader = "step,loss,lr,elapsed_s";
inline constexpr const char* kValidationCsvHeader = "step,L_valid,ppl";

void write_train_log_csv(std::ostream& out, const TrainLog& log);
void write_validation_csv(std::ostream& out, const TrainLog& log, int L_valid);

using StepCallback = std::function<void(const TrainStep&)>;

// Runs exactly config.steps optimizer steps on corpus.train(), validating on
// corpus.valid() every eval_every steps. Deterministic given config.seed.
TrainLog train(Model& model, const Corpus& corpus, const TrainConfig& config, const StepCallback& on_step = {});

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (all integers little-endian):
//   8 bytes  magic "ALIBILM\0"
//   u32      format version
//   u32      header length H
//   H bytes  model config as "key=value\n" lines
//   u64      number of parameter scalars P
//   P × f64  parameters, little-endian IEEE-754, in declaration order

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
// Throws ConfigMismatchError unless the stored config equals `expected`.
Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

std::string serialize_model_config(const ModelConfig& config);
ModelConfig parse_model_config(const std::string& text);

}  // namespace alibi_lm
