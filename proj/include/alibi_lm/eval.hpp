#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "alibi_lm/model.hpp"

namespace alibi_lm {

enum class EvalMode { nonoverlapping, sliding };

std::string mode_name(EvalMode mode);
EvalMode parse_mode(const std::string& name);

struct EvalRecord {
  int L_valid = 0;
  EvalMode mode = EvalMode::nonoverlapping;
  int stride = 0;  // equals L_valid for nonoverlapping
  double perplexity = 0.0;
  std::size_t tokens_scored = 0;
  std::size_t passes = 0;
  double wall_seconds = 0.0;
};

// Anything that assigns next-token probabilities to a window.
class TokenScorer {
 public:
  virtual ~TokenScorer() = default;
  // Negative log-likelihood (nats) of targets[i] given inputs[0..i], for
  // every i. inputs and targets have equal length.
  virtual std::vector<double> score(std::span<const Token> inputs, std::span<const Token> targets) const = 0;
};

class ModelScorer final : public TokenScorer {
 public:
  explicit ModelScorer(const Model& model) : model_(model) {}
  std::vector<double> score(std::span<const Token> inputs, std::span<const Token> targets) const override;

 private:
  const Model& model_;
};

// Per-token NLLs of a stream in stream order, plus the number of forward
// passes used. Token 0 of the stream is predicted from kBoundaryToken, so a
// stream of N tokens yields N scores.
struct ScoredStream {
  std::vector<double> nll;
  std::size_t passes = 0;
};

// Consecutive windows of L_valid predictions, each scored independently;
// the final window may be shorter.
ScoredStream score_nonoverlapping(const TokenScorer& scorer, std::span<const Token> tokens, int L_valid);

// First window scores all of its predictions; each later window re-encodes
// L_valid - stride old tokens and scores its last `stride` predictions.
ScoredStream score_sliding(const TokenScorer& scorer, std::span<const Token> tokens, int L_valid, int stride);

EvalRecord ppl_nonoverlapping(const TokenScorer& scorer, std::span<const Token> tokens, int L_valid);
EvalRecord ppl_sliding(const TokenScorer& scorer, std::span<const Token> tokens, int L_valid, int stride);
EvalRecord ppl_nonoverlapping(const Model& model, std::span<const Token> tokens, int L_valid);
EvalRecord ppl_sliding(const Model& model, std::span<const Token> tokens, int L_valid, int stride);

// One record per length. For sliding mode `stride` applies to every length.
std::vector<EvalRecord> extrapolation_sweep(const TokenScorer& scorer, std::span<const Token> tokens,
                                            std::span<const int> lengths, EvalMode mode, int stride = 1);
std::vector<EvalRecord> extrapolation_sweep(const Model& model, std::span<const Token> tokens,
                                            std::span<const int> lengths, EvalMode mode, int stride = 1);

// Mean NLL at each window-relative position over the full nonoverlapping
// windows of the stream (a trailing partial window is ignored).
std::vector<double> loss_by_position(const TokenScorer& scorer, std::span<const Token> tokens, int L_valid);
std::vector<double> loss_by_position(const Model& model, std::span<const Token> tokens, int L_valid);

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kEvalCsvHeader = "method,L_train,L_valid,mode,stride,ppl,tokens,passes,seconds";

std::string eval_csv_row(const std::string& method, int L_train, const EvalRecord& record);
void write_eval_csv(std::ostream& out, const std::string& method, int L_train, std::span<const EvalRecord> records,
                    bool header = true);

// Shortest decimal that round-trips to the same double.
std::string format_double(double value);

}  // namespace alibi_lm
