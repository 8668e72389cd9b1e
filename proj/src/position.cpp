#include "alibi_lm/position.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace alibi_lm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require_positive(int value, const char* what) {
  if (value < 1) throw ArgumentError(std::string(what) + " must be >= 1, got " + std::to_string(value));
}

// cos/sin of p·base^(-2j/d) for p < steps, j < d/2.
struct RotationTable {
  std::vector<double> cos, sin;
};

RotationTable rotation_table(std::size_t steps, std::size_t d_head, double base) {
  const std::size_t pairs = d_head / 2;
  RotationTable table{std::vector<double>(steps * pairs), std::vector<double>(steps * pairs)};
  for (std::size_t j = 0; j < pairs; ++j) {
    const double freq = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(d_head));
    for (std::size_t p = 0; p < steps; ++p) {
      const double angle = static_cast<double>(p) * freq;
      table.cos[p * pairs + j] = std::cos(angle);
      table.sin[p * pairs + j] = std::sin(angle);
    }
  }
  return table;
}

// Rotates rows in place; direction -1 applies the inverse rotation.
void rotate_rows(std::span<double> values, std::size_t slices, std::size_t steps, std::size_t d_head,
                 const RotationTable& table, double direction) {
  const std::size_t pairs = d_head / 2;
  for (std::size_t s = 0; s < slices; ++s) {
    for (std::size_t p = 0; p < steps; ++p) {
      double* row = values.data() + (s * steps + p) * d_head;
      for (std::size_t j = 0; j < pairs; ++j) {
        const double c = table.cos[p * pairs + j];
        const double sn = direction * table.sin[p * pairs + j];
        const double x0 = row[2 * j], x1 = row[2 * j + 1];
        row[2 * j] = x0 * c - x1 * sn;
        row[2 * j + 1] = x0 * sn + x1 * c;
      }
    }
  }
}

}  // namespace

std::string method_name(const PositionMethod& method) {
  return std::visit(Overloaded{
                        [](const NoPosition&) { return std::string("none"); },
                        [](const Sinusoidal&) { return std::string("sinusoidal"); },
                        [](const Rotary&) { return std::string("rotary"); },
                        [](const T5Bias&) { return std::string("t5"); },
                        [](const Alibi&) { return std::string("alibi"); },
                    },
                    method);
}

PositionMethod parse_method(const std::string& name) {
  if (name == "none") return NoPosition{};
  if (name == "sinusoidal") return Sinusoidal{};
  if (name == "rotary") return Rotary{};
  if (name == "t5") return T5Bias{};
  if (name == "alibi") return Alibi{};
  throw ArgumentError("unknown position method '" + name + "' (expected none|sinusoidal|rotary|t5|alibi)");
}

AlibiSlopes alibi_slopes(int n_heads) {
  require_positive(n_heads, "n_heads");
  // start = ratio = 2^(-2^(3 - log2 n)) = 2^(-8/n), so slope k is 2^(-8(k+1)/n).
  AlibiSlopes out{n_heads, std::vector<double>(static_cast<std::size_t>(n_heads))};
  for (int k = 0; k < n_heads; ++k) {
    out.slopes[static_cast<std::size_t>(k)] = std::exp2(-8.0 * static_cast<double>(k + 1) / n_heads);
  }
  return out;
}

Tensor BiasMask::tensor() const {
  return Tensor({static_cast<std::size_t>(n_heads), static_cast<std::size_t>(length), static_cast<std::size_t>(length)},
                values);
}

BiasMask alibi_mask(int n_heads, int length) { return alibi_mask(alibi_slopes(n_heads), length); }

BiasMask alibi_mask(const AlibiSlopes& slopes, int length) {
  require_positive(length, "length");
  const auto heads = static_cast<int>(slopes.slopes.size());
  require_positive(heads, "n_heads");
  const auto L = static_cast<std::size_t>(length);
  BiasMask mask{heads, length, std::vector<double>(static_cast<std::size_t>(heads) * L * L)};
  for (int h = 0; h < heads; ++h) {
    const double m = slopes.slopes[static_cast<std::size_t>(h)];
    double* plane = mask.values.data() + static_cast<std::size_t>(h) * L * L;
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = 0; j < L; ++j) {
        plane[i * L + j] = j <= i ? -m * static_cast<double>(i - j) : kNegInf;
      }
    }
  }
  return mask;
}

Tensor causal_mask(int length) {
  require_positive(length, "length");
  const auto L = static_cast<std::size_t>(length);
  std::vector<double> values(L * L, 0.0);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = i + 1; j < L; ++j) values[i * L + j] = kNegInf;
  return Tensor({L, L}, std::move(values));
}

Tensor sinusoidal_table(int n_positions, int d_model) {
  require_positive(n_positions, "n_positions");
  require_positive(d_model, "d_model");
  if (d_model % 2 != 0) throw ArgumentError("sinusoidal_table: d_model must be even, got " + std::to_string(d_model));
  const auto rows = static_cast<std::size_t>(n_positions), d = static_cast<std::size_t>(d_model);
  std::vector<double> values(rows * d);
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double wavelength = std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
    for (std::size_t pos = 0; pos < rows; ++pos) {
      const double angle = static_cast<double>(pos) / wavelength;
      values[pos * d + 2 * i] = std::sin(angle);
      values[pos * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor({rows, d}, std::move(values));
}

Tensor rotary_rotate(const Tensor& x, double base) {
  if (x.rank() != 2) throw DimensionError("rotary_rotate expects [T x d_head], got " + shape_string(x.shape()));
  NoGradGuard no_grad;
  const Tensor batched = reshape(x, {1, x.dim(0), x.dim(1)});
  return reshape(rotary(batched, base), x.shape());
}

Tensor rotary(const Tensor& x, double base) {
  if (x.rank() != 3) throw DimensionError("rotary expects [N x T x d_head], got " + shape_string(x.shape()));
  const std::size_t slices = x.dim(0), steps = x.dim(1), d_head = x.dim(2);
  if (d_head % 2 != 0) throw ArgumentError("rotary: d_head must be even, got " + std::to_string(d_head));
  auto table = std::make_shared<RotationTable>(rotation_table(steps, d_head, base));
  std::vector<double> out(x.data().begin(), x.data().end());
  rotate_rows(out, slices, steps, d_head, *table, 1.0);
  return Tensor::from_op(x.shape(), std::move(out), {x},
                         [x, table, slices, steps, d_head](const Tensor& res) mutable {
                           std::vector<double> g(res.grad().begin(), res.grad().end());
                           rotate_rows(g, slices, steps, d_head, *table, -1.0);
                           auto gx = x.mutable_grad();
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                         });
}

int t5_bucket(int relative_distance, int num_buckets, int max_distance) {
  if (relative_distance < 0) {
    throw ArgumentError("t5_bucket: relative distance must be >= 0, got " + std::to_string(relative_distance));
  }
  if (num_buckets < 2) throw ArgumentError("t5_bucket: num_buckets must be >= 2");
  const int max_exact = num_buckets / 2;
  if (max_distance <= max_exact) throw ArgumentError("t5_bucket: max_distance must exceed num_buckets / 2");
  if (relative_distance < max_exact) return relative_distance;
  const double scaled = std::log(static_cast<double>(relative_distance) / max_exact) /
                        std::log(static_cast<double>(max_distance) / max_exact) * (num_buckets - max_exact);
  const int bucket = max_exact + static_cast<int>(scaled);
  return std::min(bucket, num_buckets - 1);
}

T5BiasTable make_t5_table(const T5Bias& method, int heads, bool requires_grad) {
  require_positive(heads, "heads");
  // Validates the bucketing parameters up front.
  t5_bucket(0, method.num_buckets, method.max_distance);
  return {method.num_buckets, method.max_distance, heads,
          Tensor::zeros({static_cast<std::size_t>(method.num_buckets), static_cast<std::size_t>(heads)},
                        requires_grad)};
}

Tensor t5_bias_matrix(const T5BiasTable& table, int length) {
  require_positive(length, "length");
  const auto L = static_cast<std::size_t>(length);
  const auto H = static_cast<std::size_t>(table.heads);
  if (table.table.rank() != 2 || table.table.dim(0) != static_cast<std::size_t>(table.num_buckets) ||
      table.table.dim(1) != H) {
    throw DimensionError("t5_bias_matrix: table shape " + shape_string(table.table.shape()) + " does not match " +
                         std::to_string(table.num_buckets) + " buckets x " + std::to_string(table.heads) + " heads");
  }
  // bucket of each distance 0..L-1
  auto buckets = std::make_shared<std::vector<std::size_t>>(L);
  for (std::size_t d = 0; d < L; ++d) {
    (*buckets)[d] = static_cast<std::size_t>(t5_bucket(static_cast<int>(d), table.num_buckets, table.max_distance));
  }
  auto t = table.table.data();
  std::vector<double> out(H * L * L);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < L; ++j) out[(h * L + i) * L + j] = j <= i ? t[(*buckets)[i - j] * H + h] : kNegInf;
  const Tensor source = table.table;
  return Tensor::from_op({H, L, L}, std::move(out), {source}, [source, buckets, H, L](const Tensor& res) mutable {
    auto g = res.grad();
    auto gt = source.mutable_grad();
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j <= i; ++j) gt[(*buckets)[i - j] * H + h] += g[(h * L + i) * L + j];
  });
}

}  // namespace alibi_lm
