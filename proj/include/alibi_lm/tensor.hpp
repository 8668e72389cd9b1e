#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "alibi_lm/error.hpp"

namespace alibi_lm {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class Tensor;

// Called during backward with the op's output; the op accumulates into the
// gradients of whichever inputs require them.
using BackwardFn = std::function<void(const Tensor& out)>;

// Dense row-major tensor of doubles with optional reverse-mode tracing.
//
// A Tensor is a shared handle: copies alias the same storage and graph node.
// Ops record a node only when grad mode is enabled and at least one input
// requires grad; otherwise the result is a plain constant.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  // Builds the result of a traced op. `parents` are the op's inputs.
  static Tensor from_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                        BackwardFn backward);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data() const;
  double item() const;
  double at(std::size_t i, std::size_t j) const;
  double at(std::size_t i, std::size_t j, std::size_t k) const;

  bool requires_grad() const;
  // Marks a leaf as trainable. Has no effect on op results.
  void set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  // Gradient buffer, allocated (zero-filled) on first use.
  std::span<double> mutable_grad() const;
  void zero_grad() const;

  // Populates gradients of every reachable leaf that requires grad. Leaf
  // gradients accumulate across calls; interior gradients are recomputed.
  void backward() const;

  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

 private:
  struct Node;
  std::shared_ptr<Node> node_;
};

// Grad mode is per-thread; graphs built on different threads never share state.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---------------------------------------------------------------------------
// Ops. 2-D operands are matrices; 3-D operands are batches of matrices.

// [m×k]·[k×n] or batched [b×m×k]·[b×k×n].
Tensor matmul(const Tensor& a, const Tensor& b);
// a·bᵀ: [m×k]·[n×k]ᵀ or batched [b×m×k]·[b×n×k]ᵀ.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// x + bias, with bias [n] broadcast over every row of x [..×n].
Tensor add_bias(const Tensor& x, const Tensor& bias);
// scores [N×T×S] + bias [H×T×S], where slice n receives bias[n % H].
Tensor add_head_bias(const Tensor& scores, const Tensor& bias);
Tensor sum(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor gelu(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps = 1e-5);

// Row-wise softmax over the last axis. Entries equal to -inf map to exactly 0.
// Throws DegenerateRowError if a row has no finite entry.
Tensor softmax_rows(const Tensor& x);

// Mean negative log-likelihood (nats) of `targets` under row-wise softmax of
// logits [T×V].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);
// Per-row negative log-likelihood, no tracing.
std::vector<double> row_nll(const Tensor& logits, std::span<const int> targets);

// Gathers rows of table [V×d] for each id.
Tensor embedding(const Tensor& table, std::span<const int> ids);

// x [(batch·T)×(heads·d_head)] -> [(batch·heads)×T×d_head].
Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t heads);
// Inverse of split_heads.
Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads);

// Inverted dropout with keep-probability 1-p; identity when p == 0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace alibi_lm
