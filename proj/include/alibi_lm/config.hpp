#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "alibi_lm/eval.hpp"
#include "alibi_lm/model.hpp"
#include "alibi_lm/train.hpp"

namespace alibi_lm {

// Everything a CLI run needs. Every field has a default; see
// config_reference() for the key list.
struct RunConfig {
  // model
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int d_ffn = 256;
  std::string position_method = "alibi";
  double rotary_base = 10000.0;
  T5Bias t5;
  double dropout = 0.0;

  // training (train.seed is the master seed and also seeds the model init)
  TrainConfig train;

  // data
  std::filesystem::path corpus = "data/sotu.txt";
  std::array<double, 3> split{0.9, 0.05, 0.05};

  // evaluation
  std::vector<int> eval_lengths{64, 128, 256};
  EvalMode eval_mode = EvalMode::nonoverlapping;
  int eval_stride = 1;               // sliding mode only
  std::string eval_split = "valid";  // train | valid | test | all
  std::size_t eval_max_tokens = 0;   // 0 = the whole split

  std::vector<std::string> compare_methods{"sinusoidal", "alibi"};

  // When false the wall-clock CSV columns (seconds, elapsed_s) are written
  // as 0 so that reruns produce byte-identical files.
  bool record_timing = true;

  std::filesystem::path out_dir = "runs/default";
  // Empty means <out_dir>/model.ckpt.
  std::filesystem::path checkpoint;

  // Non-fatal findings from parsing, e.g. a corpus path that does not exist.
  std::vector<std::string> warnings;

  ModelConfig model_config() const { return model_config_for(position_method); }
  ModelConfig model_config_for(const std::string& method) const;
  std::filesystem::path checkpoint_path() const;
};

// Parses a flat `key = value` document. Values are integers, floats,
// true/false, strings ("quoted" or bare words) and [comma, separated] lists;
// `#` starts a comment. Unknown keys, type mismatches and invariant
// violations raise ConfigError naming the key and line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Fully resolved document; parse_config(serialize_config(c)) reproduces c.
std::string serialize_config(const RunConfig& config);

// Cross-field invariants; line numbers are 0 when a key was defaulted.
void validate_config(const RunConfig& config);

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* description;
};
const std::vector<ConfigKey>& config_reference();

}  // namespace alibi_lm
