#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "pvmlab/config.h"
#include "pvmlab/rng.h"
#include "pvmlab/tensor.h"

namespace pvmlab::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, scale);
  return Tensor(std::move(shape), std::move(v));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) { return max_abs_diff(a.data(), b.data()); }

// Small enough for per-test training runs.
inline ModelConfig tiny_model(std::uint64_t seed = 0) {
  ModelConfig c;
  c.n_layers = 4;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ffn = 32;
  c.vocab_size = 24;
  c.max_seq_len = 160;
  c.n_visual = 4;
  c.seed = seed;
  return c;
}

inline PvmConfig tiny_pvm(PvmVariant variant = PvmVariant::kVisual) {
  PvmConfig p;
  p.d_latent = 4;
  p.injection_layers = {1, 2};
  p.variant = variant;
  return p;
}

}  // namespace pvmlab::testing
