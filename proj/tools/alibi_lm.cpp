// alibi-lm: train, evaluate and compare position methods from a config file.
//
//   alibi-lm train   --config run.conf --out runs/alibi
//   alibi-lm sweep   --config run.conf --checkpoint runs/alibi/model.ckpt --lengths 64,128,256
//   alibi-lm eval    --config run.conf --mode sliding --stride 1
//   alibi-lm compare --config run.conf --out runs/compare
//
// On failure a single line `error kind=<kind> message="<text>"` goes to
// stderr and the exit status is 1.

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <sstream>

#include "alibi_lm/run.hpp"

namespace {

std::string one_line(std::string text) {
  std::replace(text.begin(), text.end(), '\n', ' ');
  std::replace(text.begin(), text.end(), '"', '\'');
  return text;
}

int report(const char* kind, const std::string& message) {
  std::cerr << "error kind=" << kind << " message=\"" << one_line(message) << "\"\n";
  return 1;
}

std::vector<int> parse_lengths(const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw alibi_lm::ConfigError("eval_lengths", 0, "--lengths entry '" + item + "' is not an integer");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and evaluate byte-level transformer LMs with different position methods"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, lengths, mode;
  int stride = 0;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Config file (flat key = value)");
    cmd->add_option("--out", out_dir, "Output directory (overrides out_dir)");
  };
  auto add_eval = [&](CLI::App* cmd) {
    cmd->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate (overrides checkpoint)");
    cmd->add_option("--lengths", lengths, "Comma-separated L_valid list, e.g. 64,128,256");
    cmd->add_option("--mode", mode, "nonoverlapping | sliding");
    cmd->add_option("--stride", stride, "Sliding-window stride S");
  };
  CLI::App* train_cmd = app.add_subcommand("train", "Train one model; writes model.ckpt and train_log.csv");
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint at one L_valid; writes eval.csv");
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Evaluate a checkpoint across L_valid values; writes sweep.csv");
  CLI::App* compare_cmd = app.add_subcommand("compare", "Train one model per method and sweep each; writes compare.csv");
  for (CLI::App* cmd : {train_cmd, eval_cmd, sweep_cmd, compare_cmd}) add_common(cmd);
  for (CLI::App* cmd : {eval_cmd, sweep_cmd, compare_cmd}) add_eval(cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage", e.what());
  }

  try {
    alibi_lm::RunConfig config = config_path.empty() ? alibi_lm::parse_config("") : alibi_lm::load_config(config_path);
    alibi_lm::apply_env_overrides(config);
    if (!out_dir.empty()) config.out_dir = out_dir;
    if (!checkpoint.empty()) config.checkpoint = checkpoint;
    if (!lengths.empty()) config.eval_lengths = parse_lengths(lengths);
    if (!mode.empty()) config.eval_mode = alibi_lm::parse_mode(mode);
    if (stride > 0) config.eval_stride = stride;
    alibi_lm::validate_config(config);
    for (const std::string& warning : config.warnings) std::cerr << "warning: " << warning << '\n';

    const std::string command = app.get_subcommands().front()->get_name();
    const alibi_lm::RunResult result = alibi_lm::run(command, config, std::cout);
    for (const auto& path : result.artifacts) std::cout << "wrote " << path.string() << '\n';
    return 0;
  } catch (const alibi_lm::Error& e) {
    return report(e.kind(), e.what());
  } catch (const std::exception& e) {
    return report("internal", e.what());
  }
}
