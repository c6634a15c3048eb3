#include "pvmlab/grad_check.h"

#include <algorithm>
#include <cmath>

#include "pvmlab/error.h"
#include "pvmlab/ops.h"
#include "pvmlab/rng.h"

namespace pvmlab {

GradCheckResult grad_check(const TensorFn& fn, std::vector<Tensor> inputs, double h, std::uint64_t seed) {
  if (!(h > 0.0)) fail("INVALID_ARGUMENT", "grad_check: step must be positive");
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }

  Tensor weights;
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor out = fn(inputs);
    Rng rng(seed);
    std::vector<double> w(out.size());
    for (auto& v : w) v = rng.uniform(-1.0, 1.0);
    weights = Tensor(out.shape(), std::move(w));
    Tensor loss = ops::weighted_sum(out, weights);
    tape.backward(loss);
  }

  auto objective = [&] {
    NoGradScope no_grad;
    return ops::weighted_sum(fn(inputs), weights).item();
  };

  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    auto grad = inputs[k].grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = objective();
      data[i] = saved - h;
      const double down = objective();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grad.empty() ? 0.0 : grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double err = std::abs(analytic - numeric) / denom;
      if (err > result.max_rel_error) result = {err, k, i, analytic, numeric};
    }
  }
  return result;
}

}  // namespace pvmlab
