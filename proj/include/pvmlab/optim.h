#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "pvmlab/params.h"

namespace pvmlab {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

// Cosine decay from `peak` to `floor` over `total` steps with a linear warmup.
double cosine_lr(std::size_t step, std::size_t total, double peak, std::size_t warmup = 0, double floor = 0.0);

// Global L2 norm over the gradients of every trainable parameter in `params`.
double grad_norm(const ParameterStore& params);

// Adam over the trainable (requires_grad) parameters of a store. Frozen
// parameters are never touched, not even their moment buffers.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}

  // Clips, applies one update at learning rate `lr`, then zeroes gradients.
  // Returns the pre-clip gradient norm.
  double step(ParameterStore& params, double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig config_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace pvmlab
