#include "alibi_lm/eval.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <ostream>

#include "alibi_lm/data.hpp"

namespace alibi_lm {

namespace {

using Clock = std::chrono::steady_clock;

void check_length(int L_valid) {
  if (L_valid < 2) throw ArgumentError("L_valid must be >= 2, got " + std::to_string(L_valid));
}

void check_stream(std::span<const Token> tokens) {
  if (tokens.size() < 2) throw ArgumentError("evaluation needs at least 2 tokens, got " + std::to_string(tokens.size()));
}

// Model inputs aligned with the stream: input i is the token before target i.
std::vector<Token> shifted_inputs(std::span<const Token> tokens) {
  std::vector<Token> inputs(tokens.size());
  inputs[0] = kBoundaryToken;
  std::copy(tokens.begin(), tokens.end() - 1, inputs.begin() + 1);
  return inputs;
}

double mean_left_to_right(const std::vector<double>& values) {
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(values.size());
}

EvalRecord make_record(const ScoredStream& scored, int L_valid, EvalMode mode, int stride, Clock::time_point start) {
  EvalRecord record;
  record.L_valid = L_valid;
  record.mode = mode;
  record.stride = stride;
  record.perplexity = std::exp(mean_left_to_right(scored.nll));
  record.tokens_scored = scored.nll.size();
  record.passes = scored.passes;
  record.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return record;
}

}  // namespace

std::string mode_name(EvalMode mode) { return mode == EvalMode::sliding ? "sliding" : "nonoverlapping"; }

EvalMode parse_mode(const std::string& name) {
  if (name == "nonoverlapping") return EvalMode::nonoverlapping;
  if (name == "sliding") return EvalMode::sliding;
  throw ArgumentError("unknown evaluation mode '" + name + "' (expected nonoverlapping|sliding)");
}

std::vector<double> ModelScorer::score(std::span<const Token> inputs, std::span<const Token> targets) const {
  NoGradGuard no_grad;
  return row_nll(model_.forward(inputs), targets);
}

ScoredStream score_nonoverlapping(const TokenScorer& scorer, std::span<const Token> tokens, int L_valid) {
  check_length(L_valid);
  check_stream(tokens);
  const std::vector<Token> inputs = shifted_inputs(tokens);
  const auto L = static_cast<std::size_t>(L_valid);
  ScoredStream out;
  out.nll.reserve(tokens.size());
  for (std::size_t start = 0; start < tokens.size(); start += L) {
    const std::size_t n = std::min(L, tokens.size() - start);
    const std::vector<double> nll = scorer.score(std::span(inputs).subspan(start, n), tokens.subspan(start, n));
    out.nll.insert(out.nll.end(), nll.begin(), nll.end());
    ++out.passes;
  }
  return out;
}

ScoredStream score_sliding(const TokenScorer& scorer, std::span<const Token> tokens, int L_valid, int stride) {
  check_length(L_valid);
  check_stream(tokens);
  if (stride < 1 || stride > L_valid) {
    throw ArgumentError("stride must be in [1, " + std::to_string(L_valid) + "], got " + std::to_string(stride));
  }
  const std::vector<Token> inputs = shifted_inputs(tokens);
  const auto L = static_cast<std::size_t>(L_valid);
  const auto S = static_cast<std::size_t>(stride);
  const std::size_t N = tokens.size();
  ScoredStream out;
  out.nll.reserve(N);

  // first window: every prediction is new
  std::size_t scored_end = std::min(L, N);
  {
    const std::vector<double> nll = scorer.score(std::span(inputs).subspan(0, scored_end), tokens.subspan(0, scored_end));
    out.nll.insert(out.nll.end(), nll.begin(), nll.end());
    ++out.passes;
  }
  while (scored_end < N) {
    const std::size_t first = scored_end;
    const std::size_t window_begin = first + S - L;
    const std::size_t end = std::min(first + S, N);
    const std::size_t width = end - window_begin;
    const std::vector<double> nll =
        scorer.score(std::span(inputs).subspan(window_begin, width), tokens.subspan(window_begin, width));
    out.nll.insert(out.nll.end(), nll.end() - static_cast<std::ptrdiff_t>(end - first), nll.end());
    ++out.passes;
    scored_end = end;
  }
  return out;
}

EvalRecord ppl_nonoverlapping(const TokenScorer& scorer, std::span<const Token> tokens, int L_valid) {
  const auto start = Clock::now();
  return make_record(score_nonoverlapping(scorer, tokens, L_valid), L_valid, EvalMode::nonoverlapping, L_valid, start);
}

EvalRecord ppl_sliding(const TokenScorer& scorer, std::span<const Token> tokens, int L_valid, int stride) {
  const auto start = Clock::now();
  return make_record(score_sliding(scorer, tokens, L_valid, stride), L_valid, EvalMode::sliding, stride, start);
}

EvalRecord ppl_nonoverlapping(const Model& model, std::span<const Token> tokens, int L_valid) {
  return ppl_nonoverlapping(ModelScorer(model), tokens, L_valid);
}

EvalRecord ppl_sliding(const Model& model, std::span<const Token> tokens, int L_valid, int stride) {
  return ppl_sliding(ModelScorer(model), tokens, L_valid, stride);
}

std::vector<EvalRecord> extrapolation_sweep(const TokenScorer& scorer, std::span<const Token> tokens,
                                            std::span<const int> lengths, EvalMode mode, int stride) {
  if (lengths.empty()) throw ArgumentError("extrapolation sweep needs at least one length");
  for (std::size_t i = 1; i < lengths.size(); ++i) {
    if (lengths[i] <= lengths[i - 1]) throw ArgumentError("sweep lengths must be strictly ascending");
  }
  std::vector<EvalRecord> records;
  for (int length : lengths) {
    try {
      records.push_back(mode == EvalMode::sliding ? ppl_sliding(scorer, tokens, length, stride)
                                                  : ppl_nonoverlapping(scorer, tokens, length));
    } catch (const ArgumentError& e) {
      throw ArgumentError("L_valid=" + std::to_string(length) + ": " + e.what());
    }
  }
  return records;
}

std::vector<EvalRecord> extrapolation_sweep(const Model& model, std::span<const Token> tokens,
                                            std::span<const int> lengths, EvalMode mode, int stride) {
  return extrapolation_sweep(ModelScorer(model), tokens, lengths, mode, stride);
}

std::vector<double> loss_by_position(const TokenScorer& scorer, std::span<const Token> tokens, int L_valid) {
  check_length(L_valid);
  const auto L = static_cast<std::size_t>(L_valid);
  const std::size_t windows = tokens.size() / L;
  if (windows == 0) {
    throw ArgumentError("loss_by_position needs one full window of " + std::to_string(L) + " tokens, got " +
                        std::to_string(tokens.size()));
  }
  const ScoredStream scored = score_nonoverlapping(scorer, tokens.subspan(0, windows * L), L_valid);
  std::vector<double> totals(L, 0.0);
  for (std::size_t w = 0; w < windows; ++w)
    for (std::size_t p = 0; p < L; ++p) totals[p] += scored.nll[w * L + p];
  for (double& t : totals) t /= static_cast<double>(windows);
  return totals;
}

std::vector<double> loss_by_position(const Model& model, std::span<const Token> tokens, int L_valid) {
  return loss_by_position(ModelScorer(model), tokens, L_valid);
}

std::string format_double(double value) {
  char buf[64];
  const auto result = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, result.ptr);
}

std::string eval_csv_row(const std::string& method, int L_train, const EvalRecord& r) {
  return method + "," + std::to_string(L_train) + "," + std::to_string(r.L_valid) + "," + mode_name(r.mode) + "," +
         std::to_string(r.stride) + "," + format_double(r.perplexity) + "," + std::to_string(r.tokens_scored) + "," +
         std::to_string(r.passes) + "," + format_double(r.wall_seconds);
}

void write_eval_csv(std::ostream& out, const std::string& method, int L_train, std::span<const EvalRecord> records,
                    bool header) {
  if (header) out << kEvalCsvHeader << '\n';
  for (const EvalRecord& r : records) out << eval_csv_row(method, L_train, r) << '\n';
}

}  // namespace alibi_lm
