#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "alibi_lm/tensor.hpp"

namespace alibi_lm::testing {

inline Tensor uniform_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0,
                             bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

// sum(t ∘ weights): a scalar whose gradient w.r.t. t is `weights`.
inline Tensor weighted_sum(const Tensor& t, const Tensor& weights) { return sum(mul(t, weights)); }

inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares the gradient of build() w.r.t. every entry of every leaf with a
// central difference of step h. Returns the worst relative error seen.
template <typename Build>
double max_gradient_error(Build&& build, std::vector<Tensor> leaves, double h = 1e-5) {
  for (Tensor& leaf : leaves) leaf.zero_grad();
  build().backward();
  std::vector<std::vector<double>> analytic;
  for (const Tensor& leaf : leaves) {
    analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
  }
  double worst = 0.0;
  NoGradGuard no_grad;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto values = leaves[l].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + h;
      const double plus = build().item();
      values[i] = original - h;
      const double minus = build().item();
      values[i] = original;
      worst = std::max(worst, relative_error(analytic[l][i], (plus - minus) / (2.0 * h)));
    }
  }
  return worst;
}

}  // namespace alibi_lm::testing
