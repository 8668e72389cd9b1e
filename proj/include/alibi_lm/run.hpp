#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "alibi_lm/config.hpp"

namespace alibi_lm {

// Artifacts a command wrote, relative paths resolved against out_dir.
struct RunResult {
  std::vector<std::filesystem::path> artifacts;
  std::vector<EvalRecord> records;
};

// Applies ALIBI_LM_SEED when set. Throws ConfigError on a malformed value.
void apply_env_overrides(RunConfig& config);

// Tokens evaluated by eval/sweep/compare: the configured split of the
// corpus, truncated to eval_max_tokens when that is non-zero.
std::vector<Token> eval_tokens(const RunConfig& config);

// Each command writes <out_dir>/config.resolved first.
//   train   -> model.ckpt, train_log.csv, valid_log.csv
//   eval    -> eval.csv (one record at eval_lengths[0])
//   sweep   -> sweep.csv (one record per eval length)
//   compare -> <method>/{model.ckpt,train_log.csv,valid_log.csv} per method
//              and compare.csv holding every method's sweep
RunResult run_train(const RunConfig& config, std::ostream& log);
RunResult run_eval(const RunConfig& config, std::ostream& log);
RunResult run_sweep(const RunConfig& config, std::ostream& log);
RunResult run_compare(const RunConfig& config, std::ostream& log);

// Dispatches on "train" | "eval" | "sweep" | "compare".
RunResult run(const std::string& command, const RunConfig& config, std::ostream& log);

}  // namespace alibi_lm
