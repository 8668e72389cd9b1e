#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "alibi_lm/train.hpp"
#include "test_util.hpp"

using namespace alibi_lm;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model(PositionMethod method = Alibi{}) {
  ModelConfig c;
  c.d_model = 32;
  c.n_heads = 4;
  c.n_layers = 1;
  c.d_ffn = 64;
  c.position = method;
  c.seed = 3;
  return c;
}

TrainConfig quick_train(int steps) {
  TrainConfig t;
  t.L = 32;
  t.batch_size = 8;
  t.steps = steps;
  t.warmup_steps = std::min(20, steps);
  t.lr_peak = 3e-3;
  t.eval_every = 0;
  t.seed = 11;
  return t;
}

const Corpus& corpus_100k() {
  static const Corpus corpus = [] {
    Corpus full = load_corpus(fs::path(ALIBI_LM_DATA_DIR) / "sotu.txt");
    full.tokens.resize(100'000);
    return split(std::move(full), {0.9, 0.05, 0.05});
  }();
  return corpus;
}

std::vector<NamedParameter> scalar_param(double value, double grad) {
  Tensor t({1}, {value}, true);
  t.mutable_grad()[0] = grad;
  return {{"w", t}};
}

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "alibi_lm_test_train";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("lr_at") {
  TrainConfig c;
  c.lr_peak = 1e-3;
  c.warmup_steps = 100;
  c.steps = 1000;
  CHECK(lr_at(0, c) == 0.0);
  CHECK(lr_at(50, c) == doctest::Approx(5e-4));
  CHECK(lr_at(100, c) == 1e-3);
  CHECK(lr_at(400, c) == doctest::Approx(c.lr_peak * std::sqrt(100.0 / 400.0)).epsilon(1e-15));
  CHECK(lr_at(400, c) == doctest::Approx(5e-4).epsilon(1e-15));
  c.schedule = Schedule::constant;
  CHECK(lr_at(900, c) == 1e-3);
  c.schedule = Schedule::cosine;
  CHECK(lr_at(1000, c) == doctest::Approx(0.0));
  CHECK(lr_at(550, c) == doctest::Approx(5e-4));
  CHECK_THROWS_AS(lr_at(-1, c), ArgumentError);
}

TEST_CASE("TrainConfig invariants") {
  TrainConfig c;
  c.steps = 10;
  c.warmup_steps = 11;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c.warmup_steps = 10;
  c.lr_peak = 0.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}

TEST_CASE("adam_step") {
  TrainConfig c;
  c.grad_clip = 0.0;
  SUBCASE("zero gradient leaves parameters unchanged") {
    auto params = scalar_param(0.7, 0.0);
    AdamState state = make_adam_state(params);
    adam_step(params, state, 0.1, c);
    CHECK(params[0].tensor.data()[0] == 0.7);
    CHECK(state.step == 1);
  }
  SUBCASE("first step moves by about -lr * sign(g)") {
    for (double g : {3.0, -0.02}) {
      auto params = scalar_param(1.0, g);
      AdamState state = make_adam_state(params);
      adam_step(params, state, 0.01, c);
      // m_hat = g, v_hat = g^2
      const double expected = 1.0 - 0.01 * g / (std::abs(g) + c.eps);
      CHECK(params[0].tensor.data()[0] == doctest::Approx(expected).epsilon(1e-15));
      CHECK(std::abs(params[0].tensor.data()[0] - (1.0 - 0.01 * (g > 0 ? 1 : -1))) < 1e-7);
    }
  }
  SUBCASE("beta1 = beta2 = 0 gives sign-normalized steps") {
    c.beta1 = 0.0;
    c.beta2 = 0.0;
    auto params = scalar_param(0.0, -5.0);
    AdamState state = make_adam_state(params);
    adam_step(params, state, 0.5, c);
    adam_step(params, state, 0.5, c);
    CHECK(params[0].tensor.data()[0] == doctest::Approx(2 * 0.5 * 5.0 / (5.0 + c.eps)).epsilon(1e-15));
  }
  SUBCASE("non-finite gradient names the parameter") {
    auto params = scalar_param(0.0, std::nan(""));
    AdamState state = make_adam_state(params);
    try {
      adam_step(params, state, 0.1, c);
      FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
      CHECK(std::string(e.what()).find("'w'") != std::string::npos);
    }
  }
}

TEST_CASE("clip_grad_norm") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<NamedParameter> params;
    for (int p = 0; p < 3; ++p) {
      Tensor t = testing::uniform_tensor({5, 4}, rng);
      auto g = t.mutable_grad();
      std::normal_distribution<double> dist(0.0, 1.0 + trial);
      for (double& v : g) v = dist(rng);
      params.push_back({"p" + std::to_string(p), t});
    }
    const double before = clip_grad_norm(params, 1.0);
    double after = 0.0;
    for (const auto& p : params)
      for (double g : p.tensor.grad()) after += g * g;
    CHECK(std::sqrt(after) <= 1.0 + 1e-12);
    if (before <= 1.0) CHECK(std::sqrt(after) == doctest::Approx(before));
  }
}

TEST_CASE("train") {
  SUBCASE("steps = 0 leaves the model untouched") {
    Model model(small_model());
    const Model before = model.clone();
    const TrainLog log = train(model, corpus_100k(), quick_train(0));
    CHECK(log.steps.empty());
    for (std::size_t p = 0; p < model.parameters().size(); ++p) {
      const auto a = model.parameters()[p].tensor.data(), b = before.parameters()[p].tensor.data();
      CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
    }
  }
  SUBCASE("200 steps on 100 KB lower the loss; same seed repeats exactly") {
    auto run = [] {
      Model model(small_model());
      TrainConfig config = quick_train(200);
      config.eval_every = 100;
      config.eval_tokens = 2048;
      TrainLog log = train(model, corpus_100k(), config);
      return std::make_pair(std::move(model), std::move(log));
    };
    const auto [model, log] = run();
    REQUIRE(log.steps.size() == 200);
    CHECK(log.steps.front().step == 1);
    CHECK(log.steps.back().step == 200);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 10; ++i) {
      head += log.steps[i].loss;
      tail += log.steps[190 + i].loss;
    }
    CHECK(tail < head);
    CHECK(log.steps.front().loss == doctest::Approx(std::log(256.0)).epsilon(0.05));
    REQUIRE(log.validation.size() == 2);
    CHECK(log.validation[1].step == 200);
    CHECK(model.param_count() == Model(small_model()).param_count());

    const auto [model2, log2] = run();
    for (std::size_t i = 0; i < log.steps.size(); ++i) {
      CHECK(log.steps[i].loss == log2.steps[i].loss);
      CHECK(log.steps[i].lr == log2.steps[i].lr);
    }
    CHECK(log.validation[1].perplexity == log2.validation[1].perplexity);
    for (std::size_t p = 0; p < model.parameters().size(); ++p) {
      const auto a = model.parameters()[p].tensor.data(), b = model2.parameters()[p].tensor.data();
      CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
    }
  }
  SUBCASE("divergence is reported with step and lr") {
    Model model(small_model());
    TrainConfig config = quick_train(5);
    config.lr_peak = 1e300;
    config.warmup_steps = 0;
    config.grad_clip = 0.0;
    try {
      train(model, corpus_100k(), config);
      FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
      CHECK(std::string(e.what()).find("step") != std::string::npos);
    }
  }
}

TEST_CASE("train log CSV") {
  TrainLog log;
  log.steps = {{1, 5.5, 1e-4, 0.25}, {2, 5.25, 2e-4, 0.5}};
  log.validation = {{2, 180.5}};
  std::ostringstream steps, valid;
  write_train_log_csv(steps, log);
  write_validation_csv(valid, log, 64);
  CHECK(steps.str() == "step,loss,lr,elapsed_s\n1,5.5,1e-04,0.25\n2,5.25,2e-04,0.5\n");
  CHECK(valid.str() == "step,L_valid,ppl\n2,64,180.5\n");
}

TEST_CASE("checkpoints") {
  std::mt19937_64 rng(4);
  std::vector<Token> tokens(40);
  for (Token& t : tokens) t = static_cast<Token>(rng() % 256);

  for (const PositionMethod& method : {PositionMethod{Alibi{}}, PositionMethod{T5Bias{16, 64, false}},
                                       PositionMethod{Rotary{500.0}}, PositionMethod{Sinusoidal{}}}) {
    CAPTURE(method_name(method));
    ModelConfig config = small_model(method);
    config.n_layers = 2;
    Model model(config);
    testing::uniform_tensor({1}, rng);  // advance
    for (const auto& p : model.parameters())
      for (double& v : p.tensor.mutable_data()) v += std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
    const fs::path path = temp_path(method_name(method) + ".ckpt");
    save_checkpoint(model, path);

    const Model loaded = load_checkpoint(path);
    CHECK(loaded.config() == model.config());
    const Tensor a = model.forward(tokens), b = loaded.forward(tokens);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin(), b.data().end()));

    const std::uintmax_t size = fs::file_size(path);
    const std::uintmax_t payload = 8 * model.param_count();
    CHECK(size > payload);
    CHECK(size < payload + 1024);
  }

  const fs::path path = temp_path("mismatch.ckpt");
  save_checkpoint(Model(small_model()), path);
  SUBCASE("mismatched config names the differing keys") {
    ModelConfig other = small_model();
    other.d_model = 64;
    other.position = Rotary{};
    try {
      load_checkpoint(path, other);
      FAIL("expected ConfigMismatchError");
    } catch (const ConfigMismatchError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("d_model") != std::string::npos);
      CHECK(msg.find("position") != std::string::npos);
      CHECK(msg.find('\n') == std::string::npos);
    }
    CHECK_NOTHROW(load_checkpoint(path, small_model()));
  }
  SUBCASE("corrupt files are rejected") {
    std::string bytes;
    {
      std::ifstream in(path, std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    const fs::path bad = temp_path("bad.ckpt");
    auto write = [&](const std::string& b) { std::ofstream(bad, std::ios::binary | std::ios::trunc) << b; };

    write(bytes.substr(0, bytes.size() - 8));
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
    std::string wrong_magic = bytes;
    wrong_magic[0] = 'X';
    write(wrong_magic);
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
    std::string wrong_version = bytes;
    wrong_version[8] = static_cast<char>(kCheckpointVersion + 1);
    write(wrong_version);
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(temp_path("missing.ckpt")), IoError);
  }
}

TEST_CASE("model config text round-trips") {
  ModelConfig c = small_model(T5Bias{24, 96, false});
  c.dropout = 0.125;
  CHECK(parse_model_config(serialize_model_config(c)) == c);
  c.position = Rotary{12345.5};
  CHECK(parse_model_config(serialize_model_config(c)) == c);
}
