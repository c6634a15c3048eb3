#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pvmlab/tensor.h"

namespace pvmlab {

// Precomputed rotary angles for positions [0, max_positions) and head_dim/2
// frequency pairs. Pairs are split by halves: (i, i + head_dim/2).
class RopeTable {
 public:
  RopeTable() = default;
  RopeTable(std::size_t max_positions, std::size_t head_dim, double base);

  std::size_t max_positions() const { return max_positions_; }
  std::size_t head_dim() const { return 2 * half_; }
  double cos(std::size_t pos, std::size_t i) const { return cos_[pos * half_ + i]; }
  double sin(std::size_t pos, std::size_t i) const { return sin_[pos * half_ + i]; }

 private:
  std::size_t max_positions_ = 0;
  std::size_t half_ = 0;
  std::vector<double> cos_;
  std::vector<double> sin_;
};

namespace ops {

// C = A·B. Rank-1 A is treated as a single row and yields a rank-1 result.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// `factor` is a single-element tensor (e.g. a learnable gate).
Tensor scale_by(const Tensor& factor, const Tensor& a);
Tensor silu(const Tensor& a);

// Row-wise softmax stabilised by subtracting the row max.
Tensor softmax_rows(const Tensor& x);
// Row i only sees columns [0, row_limits[i]); masked entries are exactly 0.
// A limit of 0 yields an all-zero row.
Tensor masked_softmax_rows(const Tensor& x, std::span<const std::size_t> row_limits);
// Causal variant for query rows at absolute positions offset, offset+1, ...
Tensor causal_softmax_rows(const Tensor& x, std::size_t offset);

// y = gamma * x / sqrt(mean(x^2) + eps), applied to every row.
Tensor rmsnorm(const Tensor& x, const Tensor& gamma, double eps = 1e-6);

Tensor embedding(const Tensor& table, std::span<const int> ids);
// Mean negative log-likelihood over rows whose target is >= 0.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
// Multiplies row r by the constant row_mask[r].
Tensor mask_rows(const Tensor& x, std::span<const double> row_mask);

// Rotary embedding for rows at positions start_pos, start_pos+1, ...
Tensor rope(const Tensor& x, std::size_t start_pos, std::size_t n_heads, const RopeTable& table);

Tensor sum(const Tensor& x);
Tensor weighted_sum(const Tensor& x, const Tensor& weights);

}  // namespace ops

// Plain (non-differentiable) helpers over distributions.
std::vector<double> softmax(std::span<const double> logits);

// D_KL(P || Q) in nats. Both must sum to 1 within 1e-9; Q is clamped at 1e-12.
double kl_divergence(std::span<const double> p, std::span<const double> q);

}  // namespace pvmlab
