#include "alibi_lm/run.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

namespace alibi_lm {

namespace {

namespace fs = std::filesystem;

std::vector<EvalRecord> strip_timing(const RunConfig& config, std::vector<EvalRecord> records) {
  if (!config.record_timing) {
    for (EvalRecord& r : records) r.wall_seconds = 0.0;
  }
  return records;
}

void write_file(const fs::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << contents;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

fs::path prepare_out_dir(const RunConfig& config, RunResult& result) {
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + config.out_dir.string() + "': " + ec.message());
  const fs::path resolved = config.out_dir / "config.resolved";
  write_file(resolved, serialize_config(config));
  result.artifacts.push_back(resolved);
  return config.out_dir;
}

Corpus load_split_corpus(const RunConfig& config) { return split(load_corpus(config.corpus), config.split); }

// Trains one model into `dir` and returns it.
Model train_into(const RunConfig& config, const ModelConfig& model_config, const fs::path& dir, RunResult& result,
                 std::ostream& log) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  const Corpus corpus = load_split_corpus(config);
  Model model(model_config);
  const std::string method = method_name(model_config.position);
  log << "[" << method << "] training " << model.param_count() << " parameters for " << config.train.steps
      << " steps\n";
  const int report_every = std::max(1, config.train.steps / 10);
  TrainLog train_log = train(model, corpus, config.train, [&](const TrainStep& s) {
    if (s.step % report_every == 0) {
      log << "[" << method << "] step " << s.step << " loss " << format_double(s.loss) << " lr " << format_double(s.lr)
          << " (" << static_cast<int>(s.elapsed_s) << "s)" << std::endl;
    }
  });
  if (!config.record_timing) {
    for (TrainStep& s : train_log.steps) s.elapsed_s = 0.0;
  }

  const fs::path ckpt = dir / "model.ckpt";
  save_checkpoint(model, ckpt);
  std::ostringstream steps_csv, valid_csv;
  write_train_log_csv(steps_csv, train_log);
  write_validation_csv(valid_csv, train_log, config.train.L);
  write_file(dir / "train_log.csv", steps_csv.str());
  write_file(dir / "valid_log.csv", valid_csv.str());
  result.artifacts.insert(result.artifacts.end(), {ckpt, dir / "train_log.csv", dir / "valid_log.csv"});
  return model;
}

}  // namespace

void apply_env_overrides(RunConfig& config) {
  const char* seed = std::getenv("ALIBI_LM_SEED");
  if (seed == nullptr || *seed == '\0') return;
  const std::string text(seed);
  std::uint64_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("seed", 0, "ALIBI_LM_SEED='" + text + "' is not a non-negative integer");
  }
  config.train.seed = value;
}

std::vector<Token> eval_tokens(const RunConfig& config) {
  const Corpus corpus = config.eval_split == "all" ? load_corpus(config.corpus) : load_split_corpus(config);
  std::span<const Token> tokens = corpus.tokens;
  if (config.eval_split == "train") tokens = corpus.train();
  if (config.eval_split == "valid") tokens = corpus.valid();
  if (config.eval_split == "test") tokens = corpus.test();
  if (config.eval_max_tokens > 0 && tokens.size() > config.eval_max_tokens) {
    tokens = tokens.subspan(0, config.eval_max_tokens);
  }
  return {tokens.begin(), tokens.end()};
}

RunResult run_train(const RunConfig& config, std::ostream& log) {
  RunResult result;
  const fs::path dir = prepare_out_dir(config, result);
  train_into(config, config.model_config(), dir, result, log);
  return result;
}

RunResult run_eval(const RunConfig& config, std::ostream& log) {
  RunResult result;
  const fs::path dir = prepare_out_dir(config, result);
  const Model model = load_checkpoint(config.checkpoint_path());
  const std::vector<Token> tokens = eval_tokens(config);
  const int length = config.eval_lengths.front();
  result.records = strip_timing(config, {config.eval_mode == EvalMode::sliding
                                             ? ppl_sliding(model, tokens, length, config.eval_stride)
                                             : ppl_nonoverlapping(model, tokens, length)});
  const EvalRecord& record = result.records.front();
  std::ostringstream csv;
  write_eval_csv(csv, method_name(model.config().position), config.train.L, result.records);
  write_file(dir / "eval.csv", csv.str());
  result.artifacts.push_back(dir / "eval.csv");
  log << eval_csv_row(method_name(model.config().position), config.train.L, record) << '\n';
  return result;
}

RunResult run_sweep(const RunConfig& config, std::ostream& log) {
  RunResult result;
  const fs::path dir = prepare_out_dir(config, result);
  const Model model = load_checkpoint(config.checkpoint_path());
  const std::vector<Token> tokens = eval_tokens(config);
  result.records =
      strip_timing(config, extrapolation_sweep(model, tokens, config.eval_lengths, config.eval_mode, config.eval_stride));
  const std::string method = method_name(model.config().position);
  std::ostringstream csv;
  write_eval_csv(csv, method, config.train.L, result.records);
  write_file(dir / "sweep.csv", csv.str());
  result.artifacts.push_back(dir / "sweep.csv");
  for (const EvalRecord& r : result.records) log << eval_csv_row(method, config.train.L, r) << '\n';
  return result;
}

RunResult run_compare(const RunConfig& config, std::ostream& log) {
  RunResult result;
  const fs::path dir = prepare_out_dir(config, result);
  const std::vector<Token> tokens = eval_tokens(config);
  std::ostringstream csv;
  csv << kEvalCsvHeader << '\n';
  for (const std::string& method : config.compare_methods) {
    const Model model = train_into(config, config.model_config_for(method), dir / method, result, log);
    const std::vector<EvalRecord> records = strip_timing(
        config, extrapolation_sweep(model, tokens, config.eval_lengths, config.eval_mode, config.eval_stride));
    write_eval_csv(csv, method, config.train.L, records, false);
    for (const EvalRecord& r : records) log << eval_csv_row(method, config.train.L, r) << std::endl;
    result.records.insert(result.records.end(), records.begin(), records.end());
  }
  write_file(dir / "compare.csv", csv.str());
  result.artifacts.push_back(dir / "compare.csv");
  return result;
}

RunResult run(const std::string& command, const RunConfig& config, std::ostream& log) {
  if (command == "train") return run_train(config, log);
  if (command == "eval") return run_eval(config, log);
  if (command == "sweep") return run_sweep(config, log);
  if (command == "compare") return run_compare(config, log);
  throw ArgumentError("unknown command '" + command + "' (expected train|eval|sweep|compare)");
}

}  // namespace alibi_lm
