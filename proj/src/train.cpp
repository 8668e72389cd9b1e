#include "alibi_lm/train.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

#include "alibi_lm/eval.hpp"

namespace alibi_lm {

std::string schedule_name(Schedule schedule) {
  switch (schedule) {
    case Schedule::inverse_sqrt: return "inverse_sqrt";
    case Schedule::cosine: return "cosine";
    case Schedule::constant: return "constant";
  }
  return "?";
}

Schedule parse_schedule(const std::string& name) {
  if (name == "inverse_sqrt") return Schedule::inverse_sqrt;
  if (name == "cosine") return Schedule::cosine;
  if (name == "constant") return Schedule::constant;
  throw ArgumentError("unknown schedule '" + name + "' (expected inverse_sqrt|cosine|constant)");
}

void TrainConfig::validate() const {
  if (L < 1) throw ArgumentError("L must be >= 1");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (steps < 0) throw ArgumentError("steps must be >= 0");
  if (!(lr_peak > 0.0)) throw ArgumentError("lr_peak must be > 0");
  if (warmup_steps < 0 || warmup_steps > steps) throw ArgumentError("warmup_steps must be in [0, steps]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ArgumentError("adam betas must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ArgumentError("adam eps must be > 0");
  if (eval_every < 0) throw ArgumentError("eval_every must be >= 0");
}

double lr_at(int step, const TrainConfig& config) {
  if (step < 0) throw ArgumentError("lr_at: step must be >= 0");
  const double peak = config.lr_peak;
  const int warmup = config.warmup_steps;
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  switch (config.schedule) {
    case Schedule::constant:
      return peak;
    case Schedule::inverse_sqrt:
      if (warmup == 0) return peak / std::sqrt(static_cast<double>(step + 1));
      return peak * std::sqrt(static_cast<double>(warmup) / static_cast<double>(step));
    case Schedule::cosine: {
      const int span = config.steps - warmup;
      if (span <= 0) return peak;
      const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
      return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * progress));
    }
  }
  return peak;
}

AdamState make_adam_state(std::span<const NamedParameter> params) {
  AdamState state;
  for (const auto& p : params) {
    state.m.emplace_back(p.tensor.numel(), 0.0);
    state.v.emplace_back(p.tensor.numel(), 0.0);
  }
  return state;
}

double clip_grad_norm(std::span<const NamedParameter> params, double max_norm) {
  double squared = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in parameter '" + p.name + "'");
      squared += g * g;
    }
  }
  const double norm = std::sqrt(squared);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      Tensor t = p.tensor;
      for (double& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

double adam_step(std::span<const NamedParameter> params, AdamState& state, double lr, const TrainConfig& config) {
  if (state.m.size() != params.size()) throw ArgumentError("adam state does not match the parameter list");
  const double norm = clip_grad_norm(params, config.grad_clip);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].tensor.has_grad()) continue;
    Tensor param = params[i].tensor;
    auto values = param.mutable_data();
    auto grads = param.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * grads[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * grads[j] * grads[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      values[j] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
  return norm;
}

void write_train_log_csv(std::ostream& out, const TrainLog& log) {
  out << kTrainLogCsvHeader << '\n';
  for (const TrainStep& s : log.steps) {
    out << s.step << ',' << format_double(s.loss) << ',' << format_double(s.lr) << ',' << format_double(s.elapsed_s)
        << '\n';
  }
}

void write_validation_csv(std::ostream& out, const TrainLog& log, int L_valid) {
  out << kValidationCsvHeader << '\n';
  for (const ValidationPoint& p : log.validation) {
    out << p.step << ',' << L_valid << ',' << format_double(p.perplexity) << '\n';
  }
}

TrainLog train(Model& model, const Corpus& corpus, const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  TrainLog log;
  if (config.steps == 0) return log;

  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  BatchStream stream(corpus.train(), static_cast<std::size_t>(config.L), static_cast<std::size_t>(config.batch_size),
                     config.seed);
  std::mt19937_64 dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::vector<NamedParameter>& params = model.parameters();
  AdamState state = make_adam_state(params);
  const std::span<const Token> valid = corpus.valid();
  const std::span<const Token> valid_slice =
      config.eval_tokens > 0 && valid.size() > config.eval_tokens ? valid.subspan(0, config.eval_tokens) : valid;

  double last_norm = 0.0;  // grad norm of the previous step, for diagnostics
  for (int step = 1; step <= config.steps; ++step) {
    const Batch batch = stream.next();
    const double lr = lr_at(step, config);
    model.zero_grad();
    ForwardOptions options;
    options.training = true;
    options.rng = &dropout_rng;
    const std::string diagnostics = " at step " + std::to_string(step) + " (lr " + format_double(lr) +
                                    ", previous grad norm " + format_double(last_norm) + ")";
    Tensor loss;
    try {
      loss = cross_entropy(model.forward(batch.inputs, batch.batch_size, options), batch.targets);
    } catch (const DegenerateRowError& e) {
      // overflowing activations leave no finite attention score
      throw DivergenceError(std::string(e.what()) + diagnostics);
    }
    if (!std::isfinite(loss.item())) throw DivergenceError("loss became " + format_double(loss.item()) + diagnostics);
    loss.backward();
    double norm = 0.0;
    try {
      norm = adam_step(params, state, lr, config);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(step) + " (lr " + format_double(lr) +
                            ")");
    }
    if (!std::isfinite(norm)) {
      throw DivergenceError("gradient norm " + format_double(norm) + " at step " + std::to_string(step));
    }
    last_norm = norm;

    TrainStep record{step, loss.item(), lr, std::chrono::duration<double>(Clock::now() - start).count()};
    log.steps.push_back(record);
    if (on_step) on_step(record);

    if (config.eval_every > 0 && (step % config.eval_every == 0 || step == config.steps) && valid_slice.size() >= 2) {
      log.validation.push_back({step, ppl_nonoverlapping(model, valid_slice, std::max(config.L, 2)).perplexity});
    }
  }
  return log;
}

}  // namespace alibi_lm
