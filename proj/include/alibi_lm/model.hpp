#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "alibi_lm/position.hpp"
#include "alibi_lm/tensor.hpp"

namespace alibi_lm {

using Token = int;

struct ModelConfig {
  int vocab_size = 256;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int d_ffn = 256;
  PositionMethod position = Alibi{};
  double dropout = 0.0;
  std::uint64_t seed = 1;

  int d_head() const { return d_model / n_heads; }
  // Throws ArgumentError naming the violated invariant.
  void validate() const;
};

bool operator==(const NoPosition&, const NoPosition&);
bool operator==(const Sinusoidal&, const Sinusoidal&);
bool operator==(const Rotary&, const Rotary&);
bool operator==(const T5Bias&, const T5Bias&);
bool operator==(const Alibi&, const Alibi&);
bool operator==(const ModelConfig&, const ModelConfig&);

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

struct ForwardOptions {
  // Enables dropout; requires rng when config.dropout > 0.
  bool training = false;
  std::mt19937_64* rng = nullptr;
  // When set, receives each layer's attention probabilities [(B·H)×T×T].
  std::vector<Tensor>* attention_probs = nullptr;
};

// Scaled dot-product attention:
//   softmax_rows(q·kᵀ/√d_head + bias)·v
// q, k, v are [N×T×d_head]; bias is [H×T×T] with H dividing N (slice n uses
// bias[n % H]). The bias carries the causal mask plus any position bias.
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias, Tensor* probs = nullptr);

// Decoder-only pre-norm transformer LM with tied input/output embeddings.
class Model {
 public:
  // Parameters are drawn from config.seed.
  explicit Model(ModelConfig config);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  // Deep copy with independent parameter storage.
  Model clone() const;

  const ModelConfig& config() const { return config_; }

  // Trainable tensors in their fixed declaration order.
  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::size_t param_count() const;
  void zero_grad();

  // tokens holds `batch` sequences of equal length back to back. Returns
  // logits [(batch·T)×vocab]; row b·T+i predicts the token after position i.
  Tensor forward(std::span<const Token> tokens, std::size_t batch = 1, const ForwardOptions& options = {}) const;

 private:
  struct Layer {
    Tensor ln1_gain, ln1_offset;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gain, ln2_offset;
    Tensor w1, b1, w2, b2;
    T5BiasTable t5;  // per-layer table, only when T5 tables are not shared
  };

  Tensor position_bias(const Layer& layer, int length) const;
  void register_parameters();

  ModelConfig config_;
  Tensor embedding_;
  T5BiasTable shared_t5_;
  std::vector<Layer> layers_;
  Tensor final_gain_, final_offset_;
  std::vector<NamedParameter> params_;
};

std::size_t param_count(const Model& model);

}  // namespace alibi_lm
