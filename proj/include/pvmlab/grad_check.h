#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "pvmlab/tensor.h"

namespace pvmlab {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Compares tape gradients of sum(w * fn(inputs)) (w fixed random weights drawn
// from `seed`) against central differences (f(x+h) - f(x-h)) / 2h for every
// element of every input. Relative error uses max(|analytic|, |numeric|, 1e-8)
// as the denominator.
GradCheckResult grad_check(const TensorFn& fn, std::vector<Tensor> inputs, double h = 1e-5,
                           std::uint64_t seed = 0);

}  // namespace pvmlab
