#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "alibi_lm/tensor.hpp"

namespace alibi_lm {

// ---------------------------------------------------------------------------
// Position methods

struct NoPosition {};

// Fixed sin/cos vectors added to the token embeddings before the first layer.
struct Sinusoidal {};

// Queries and keys rotated pairwise by a position-dependent angle in every layer.
struct Rotary {
  double base = 10000.0;
};

// Learned scalar per (distance bucket, head) added to the attention scores.
struct T5Bias {
  int num_buckets = 32;
  int max_distance = 128;
  // One table for all layers when true, one table per layer otherwise.
  bool shared = true;
};

// Fixed, head-specific linear distance penalty added to the attention scores.
struct Alibi {};

using PositionMethod = std::variant<NoPosition, Sinusoidal, Rotary, T5Bias, Alibi>;

// "none", "sinusoidal", "rotary", "t5", "alibi".
std::string method_name(const PositionMethod& method);
// Inverse of method_name; per-method parameters take their defaults.
PositionMethod parse_method(const std::string& name);

// ---------------------------------------------------------------------------
// ALiBi

struct AlibiSlopes {
  int n_heads = 0;
  std::vector<double> slopes;
};

// Geometric sequence whose start and ratio are both 2^(-8/n_heads).
AlibiSlopes alibi_slopes(int n_heads);

// Additive attention mask [n_heads × L × L]: -m_h·(i-j) on and below the
// diagonal, -inf above it.
struct BiasMask {
  int n_heads = 0;
  int length = 0;
  std::vector<double> values;

  double at(int head, int i, int j) const {
    return values[(static_cast<std::size_t>(head) * length + i) * length + j];
  }
  Tensor tensor() const;
};

BiasMask alibi_mask(int n_heads, int length);
// Same bias with explicit slopes (a subset of heads, for instance).
BiasMask alibi_mask(const AlibiSlopes& slopes, int length);

// [L×L]: 0 on and below the diagonal, -inf above.
Tensor causal_mask(int length);

// ---------------------------------------------------------------------------
// Sinusoidal and rotary

// [n_positions × d_model]; (pos, 2i) = sin(pos / 10000^(2i/d)), (pos, 2i+1) = cos(...).
Tensor sinusoidal_table(int n_positions, int d_model);

// Rotates x [T × d_head], row p being position p. Not traced.
Tensor rotary_rotate(const Tensor& x, double base = 10000.0);

// Traced rotation of every row of a batch [N × T × d_head]; row t of each
// slice is at position t.
Tensor rotary(const Tensor& x, double base = 10000.0);

// ---------------------------------------------------------------------------
// T5 relative bias

// Bucket for a non-negative query-key distance (causal, unidirectional).
int t5_bucket(int relative_distance, int num_buckets, int max_distance);

struct T5BiasTable {
  int num_buckets = 32;
  int max_distance = 128;
  int heads = 0;
  Tensor table;  // [num_buckets × heads]
};

T5BiasTable make_t5_table(const T5Bias& method, int heads, bool requires_grad = true);

// [heads × L × L]: table[bucket(i-j), h] on and below the diagonal, -inf above.
// Traced through the table.
Tensor t5_bias_matrix(const T5BiasTable& table, int length);

}  // namespace alibi_lm
