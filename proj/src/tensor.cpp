#include "alibi_lm/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace alibi_lm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool tls_grad_enabled = true;

ConstMap cmap(std::span<const double> s, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return ConstMap(s.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap mmap(std::span<double> s, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MutMap(s.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_string(t.shape()));
  }
}

// Splits a rank-2 or rank-3 operand into (batch, rows, cols).
struct MatDims {
  std::size_t batch, rows, cols;
};

MatDims mat_dims(const Tensor& t) {
  if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  throw DimensionError("matmul: operands must be rank 2 or 3, got " + shape_string(t.shape()));
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------

struct Tensor::Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<Tensor> parents;
  BackwardFn backward;
};

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_string(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " + std::to_string(values.size()));
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  std::vector<double> values(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::from_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  bool traced = std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
  if (!traced) return out;
  out.node_->requires_grad = true;
  out.node_->leaf = false;
  out.node_->parents = std::move(parents);
  out.node_->backward = std::move(backward);
  return out;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }
std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() const { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) throw RankError("item() on non-scalar tensor " + shape_string(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  const Shape& s = node_->shape;
  if (s.size() != 2 || i >= s[0] || j >= s[1]) throw IndexError("at(i, j) out of range for " + shape_string(s));
  return node_->data[i * s[1] + j];
}

double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
  const Shape& s = node_->shape;
  if (s.size() != 3 || i >= s[0] || j >= s[1] || k >= s[2]) {
    throw IndexError("at(i, j, k) out of range for " + shape_string(s));
  }
  return node_->data[(i * s[1] + j) * s[2] + k];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!node_->leaf) throw ArgumentError("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = value;
}

bool Tensor::is_leaf() const { return node_->leaf; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ArgumentError("tensor has no gradient");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() const {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  if (numel() != 1) throw RankError("backward() needs a scalar loss, got shape " + shape_string(shape()));
  if (!requires_grad()) throw ArgumentError("backward() on a tensor that is not traced");

  // Iterative post-order DFS; reversing it gives a topological order with
  // every node appearing once.
  std::vector<Tensor> order;
  std::unordered_set<const Node*> visited{node_.get()};
  std::vector<std::pair<Tensor, std::size_t>> stack{{*this, 0}};
  while (!stack.empty()) {
    std::size_t top = stack.size() - 1;
    Node& node = *stack[top].first.node_;
    if (stack[top].second < node.parents.size()) {
      const Tensor& parent = node.parents[stack[top].second++];
      if (parent.requires_grad() && visited.insert(parent.node_.get()).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(std::move(stack[top].first));
      stack.pop_back();
    }
  }

  for (Tensor& t : order) {
    if (!t.node_->leaf) t.node_->grad.assign(t.numel(), 0.0);
  }
  const_cast<Tensor*>(this)->mutable_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!it->node_->leaf && it->node_->backward) it->node_->backward(*it);
  }
}

bool grad_enabled() { return tls_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(tls_grad_enabled) { tls_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tls_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Matrix products

namespace {

Tensor matmul_impl(const Tensor& a, const Tensor& b, bool transpose_b) {
  const MatDims da = mat_dims(a);
  const MatDims db = mat_dims(b);
  const std::size_t b_inner = transpose_b ? db.cols : db.rows;
  const std::size_t n = transpose_b ? db.rows : db.cols;
  if (a.rank() != b.rank() || da.batch != db.batch || da.cols != b_inner) {
    throw DimensionError(std::string(transpose_b ? "matmul_nt" : "matmul") + ": incompatible shapes " +
                         shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const std::size_t batch = da.batch, m = da.rows, k = da.cols;
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    auto A = cmap(a.data(), m, k, i * m * k);
    auto B = cmap(b.data(), db.rows, db.cols, i * db.rows * db.cols);
    auto C = mmap(out, m, n, i * m * n);
    if (transpose_b) {
      C.noalias() = A * B.transpose();
    } else {
      C.noalias() = A * B;
    }
  }
  Shape shape = a.rank() == 2 ? Shape{m, n} : Shape{batch, m, n};
  return Tensor::from_op(std::move(shape), std::move(out), {a, b},
                         [a, b, batch, m, k, n, transpose_b, db](const Tensor& res) mutable {
                           auto g = res.grad();
                           for (std::size_t i = 0; i < batch; ++i) {
                             auto G = cmap(g, m, n, i * m * n);
                             auto B = cmap(b.data(), db.rows, db.cols, i * db.rows * db.cols);
                             if (a.requires_grad()) {
                               auto GA = mmap(a.mutable_grad(), m, k, i * m * k);
                               if (transpose_b) {
                                 GA.noalias() += G * B;
                               } else {
                                 GA.noalias() += G * B.transpose();
                               }
                             }
                             if (b.requires_grad()) {
                               auto A = cmap(a.data(), m, k, i * m * k);
                               auto GB = mmap(b.mutable_grad(), db.rows, db.cols, i * db.rows * db.cols);
                               if (transpose_b) {
                                 GB.noalias() += G.transpose() * A;
                               } else {
                                 GB.noalias() += A.transpose() * G;
                               }
                             }
                           }
                         });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, false); }
Tensor matmul_nt(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, true); }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [a, b](const Tensor& res) mutable {
    auto g = res.grad();
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto gt = t->mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [a, b](const Tensor& res) mutable {
    auto g = res.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      auto y = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      auto x = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return Tensor::from_op(a.shape(), std::move(out), {a}, [a, factor](const Tensor& res) mutable {
    auto g = res.grad();
    auto ga = a.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.shape().back();
  if (bias.rank() != 1 || bias.dim(0) != n) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match rows of " +
                         shape_string(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  auto b = bias.data();
  for (std::size_t r = 0; r < out.size(); r += n)
    for (std::size_t j = 0; j < n; ++j) out[r + j] += b[j];
  return Tensor::from_op(x.shape(), std::move(out), {x, bias}, [x, bias, n](const Tensor& res) mutable {
    auto g = res.grad();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto gb = bias.mutable_grad();
      for (std::size_t r = 0; r < g.size(); r += n)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[r + j];
    }
  });
}

Tensor add_head_bias(const Tensor& scores, const Tensor& bias) {
  require_rank(scores, 3, "add_head_bias");
  require_rank(bias, 3, "add_head_bias");
  const std::size_t heads = bias.dim(0);
  const std::size_t plane = bias.dim(1) * bias.dim(2);
  if (scores.dim(1) != bias.dim(1) || scores.dim(2) != bias.dim(2) || scores.dim(0) % heads != 0) {
    throw DimensionError("add_head_bias: scores " + shape_string(scores.shape()) + " vs bias " +
                         shape_string(bias.shape()));
  }
  const std::size_t n = scores.dim(0);
  std::vector<double> out(scores.data().begin(), scores.data().end());
  auto b = bias.data();
  for (std::size_t s = 0; s < n; ++s) {
    const double* src = b.data() + (s % heads) * plane;
    double* dst = out.data() + s * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
  }
  return Tensor::from_op(scores.shape(), std::move(out), {scores, bias},
                         [scores, bias, heads, plane, n](const Tensor& res) mutable {
                           auto g = res.grad();
                           if (scores.requires_grad()) {
                             auto gs = scores.mutable_grad();
                             for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
                           }
                           if (bias.requires_grad()) {
                             auto gb = bias.mutable_grad();
                             for (std::size_t s = 0; s < n; ++s) {
                               double* dst = gb.data() + (s % heads) * plane;
                               const double* src = g.data() + s * plane;
                               for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
                             }
                           }
                         });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return Tensor::from_op({1}, {total}, {a}, [a](const Tensor& res) mutable {
    const double g = res.grad()[0];
    for (double& v : a.mutable_grad()) v += g;
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::from_op(std::move(shape), std::move(out), {a}, [a](const Tensor& res) mutable {
    auto g = res.grad();
    auto ga = a.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  std::vector<double> out(x.numel());
  auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * v[i] * (1.0 + std::erf(v[i] * inv_sqrt2));
  return Tensor::from_op(x.shape(), std::move(out), {x}, [x](const Tensor& res) mutable {
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    auto g = res.grad();
    auto v = x.data();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(v[i] * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v[i] * v[i]);
      gx[i] += g[i] * (cdf + v[i] * pdf);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps) {
  const std::size_t n = x.shape().back();
  if (gain.numel() != n || offset.numel() != n) {
    throw DimensionError("layer_norm: gain/offset must have " + std::to_string(n) + " entries");
  }
  const std::size_t rows = x.numel() / n;
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  auto v = x.data(), gm = gain.data(), bt = offset.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mean) * is;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = h * gm[j] + bt[j];
    }
  }
  return Tensor::from_op(
      x.shape(), std::move(out), {x, gain, offset},
      [x, gain, offset, xhat, inv_std, n, rows](const Tensor& res) mutable {
        auto g = res.grad();
        auto gm = gain.data();
        const auto& h = *xhat;
        if (gain.requires_grad()) {
          auto gg = gain.mutable_grad();
          for (std::size_t r = 0; r < g.size(); r += n)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g[r + j] * h[r + j];
        }
        if (offset.requires_grad()) {
          auto gb = offset.mutable_grad();
          for (std::size_t r = 0; r < g.size(); r += n)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g[r + j];
        }
        if (x.requires_grad()) {
          auto gx = x.mutable_grad();
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = g[r * n + j] * gm[j];
              mean_dh += dh;
              mean_dh_h += dh * h[r * n + j];
            }
            mean_dh *= inv_n;
            mean_dh_h *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = g[r * n + j] * gm[j];
              gx[r * n + j] += (*inv_std)[r] * (dh - mean_dh - h[r * n + j] * mean_dh_h);
            }
          }
        }
      });
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  auto v = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * n;
    double* dst = out.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    if (!std::isfinite(mx)) {
      throw DegenerateRowError("softmax_rows: row " + std::to_string(r) + " has no finite entry");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dst[j] = std::exp(row[j] - mx);
      total += dst[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < n; ++j) dst[j] *= inv;
  }
  return Tensor::from_op(x.shape(), std::move(out), {x}, [x, n, rows](const Tensor& res) mutable {
    auto g = res.grad();
    auto y = res.data();
    auto gx = x.mutable_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[base + j] * y[base + j];
      for (std::size_t j = 0; j < n; ++j) gx[base + j] += y[base + j] * (g[base + j] - dot);
    }
  });
}

namespace {

void check_targets(const Tensor& logits, std::span<const int> targets, const char* op) {
  require_rank(logits, 2, op);
  if (targets.size() != logits.dim(0)) {
    throw DimensionError(std::string(op) + ": " + std::to_string(targets.size()) + " targets for logits " +
                         shape_string(logits.shape()));
  }
  const auto vocab = static_cast<long>(logits.dim(1));
  for (int t : targets) {
    if (t < 0 || t >= vocab) {
      throw IndexError(std::string(op) + ": target " + std::to_string(t) + " outside [0, " + std::to_string(vocab) +
                       ")");
    }
  }
}

// log-sum-exp of one row.
double row_lse(const double* row, std::size_t n) {
  const double mx = *std::max_element(row, row + n);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) total += std::exp(row[j] - mx);
  return mx + std::log(total);
}

}  // namespace

std::vector<double> row_nll(const Tensor& logits, std::span<const int> targets) {
  check_targets(logits, targets, "row_nll");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  std::vector<double> nll(rows);
  auto v = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * vocab;
    nll[r] = row_lse(row, vocab) - row[targets[r]];
  }
  return nll;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  check_targets(logits, targets, "cross_entropy");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  auto lse = std::make_shared<std::vector<double>>(rows);
  auto v = logits.data();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * vocab;
    (*lse)[r] = row_lse(row, vocab);
    total += (*lse)[r] - row[targets[r]];
  }
  std::vector<int> tg(targets.begin(), targets.end());
  return Tensor::from_op({1}, {total / static_cast<double>(rows)}, {logits},
                         [logits, lse, tg = std::move(tg), rows, vocab](const Tensor& res) mutable {
                           const double g = res.grad()[0] / static_cast<double>(rows);
                           auto gx = logits.mutable_grad();
                           auto v = logits.data();
                           for (std::size_t r = 0; r < rows; ++r) {
                             const std::size_t base = r * vocab;
                             for (std::size_t j = 0; j < vocab; ++j) gx[base + j] += g * std::exp(v[base + j] - (*lse)[r]);
                             gx[base + tg[r]] -= g;
                           }
                         });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("embedding: token id " + std::to_string(id) + " outside [0, " + std::to_string(vocab) + ")");
    }
  }
  std::vector<double> out(ids.size() * d);
  auto t = table.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::copy_n(t.data() + static_cast<std::size_t>(ids[r]) * d, d, out.data() + r * d);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return Tensor::from_op({ids.size(), d}, std::move(out), {table},
                         [table, idv = std::move(idv), d](const Tensor& res) mutable {
                           auto g = res.grad();
                           auto gt = table.mutable_grad();
                           for (std::size_t r = 0; r < idv.size(); ++r) {
                             double* dst = gt.data() + static_cast<std::size_t>(idv[r]) * d;
                             for (std::size_t j = 0; j < d; ++j) dst[j] += g[r * d + j];
                           }
                         });
}

namespace {

// Index of element (b, t, h, j) in the merged layout and in the split layout.
template <typename F>
void for_each_head_element(std::size_t batch, std::size_t steps, std::size_t heads, std::size_t d_head, F&& f) {
  const std::size_t width = heads * d_head;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t merged = (b * steps + t) * width + h * d_head;
        const std::size_t split = ((b * heads + h) * steps + t) * d_head;
        f(merged, split, d_head);
      }
}

}  // namespace

Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  require_rank(x, 2, "split_heads");
  if (batch == 0 || heads == 0 || x.dim(0) % batch != 0 || x.dim(1) % heads != 0) {
    throw DimensionError("split_heads: cannot split " + shape_string(x.shape()) + " into " + std::to_string(batch) +
                         " sequences of " + std::to_string(heads) + " heads");
  }
  const std::size_t steps = x.dim(0) / batch, d_head = x.dim(1) / heads;
  std::vector<double> out(x.numel());
  auto v = x.data();
  for_each_head_element(batch, steps, heads, d_head, [&](std::size_t m, std::size_t s, std::size_t n) {
    std::copy_n(v.data() + m, n, out.data() + s);
  });
  return Tensor::from_op({batch * heads, steps, d_head}, std::move(out), {x},
                         [x, batch, steps, heads, d_head](const Tensor& res) mutable {
                           auto g = res.grad();
                           auto gx = x.mutable_grad();
                           for_each_head_element(batch, steps, heads, d_head,
                                                 [&](std::size_t m, std::size_t s, std::size_t n) {
                                                   for (std::size_t j = 0; j < n; ++j) gx[m + j] += g[s + j];
                                                 });
                         });
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  require_rank(x, 3, "merge_heads");
  if (batch == 0 || heads == 0 || x.dim(0) != batch * heads) {
    throw DimensionError("merge_heads: " + shape_string(x.shape()) + " is not " + std::to_string(batch) + "x" +
                         std::to_string(heads) + " heads");
  }
  const std::size_t steps = x.dim(1), d_head = x.dim(2);
  std::vector<double> out(x.numel());
  auto v = x.data();
  for_each_head_element(batch, steps, heads, d_head, [&](std::size_t m, std::size_t s, std::size_t n) {
    std::copy_n(v.data() + s, n, out.data() + m);
  });
  return Tensor::from_op({batch * steps, heads * d_head}, std::move(out), {x},
                         [x, batch, steps, heads, d_head](const Tensor& res) mutable {
                           auto g = res.grad();
                           auto gx = x.mutable_grad();
                           for_each_head_element(batch, steps, heads, d_head,
                                                 [&](std::size_t m, std::size_t s, std::size_t n) {
                                                   for (std::size_t j = 0; j < n; ++j) gx[s + j] += g[m + j];
                                                 });
                         });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ArgumentError("dropout probability must be in [0, 1)");
  if (p == 0.0) return x;
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  std::bernoulli_distribution keep(1.0 - p);
  const double inv_keep = 1.0 / (1.0 - p);
  std::vector<double> out(x.numel());
  auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = keep(rng) ? inv_keep : 0.0;
    out[i] = v[i] * (*mask)[i];
  }
  return Tensor::from_op(x.shape(), std::move(out), {x}, [x, mask](const Tensor& res) mutable {
    auto g = res.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  });
}

}  // namespace alibi_lm
