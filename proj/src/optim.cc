#include "pvmlab/optim.h"

#include <cmath>
#include <numbers>

#include "pvmlab/error.h"

namespace pvmlab {

double cosine_lr(std::size_t step, std::size_t total, double peak, std::size_t warmup, double floor) {
  if (total == 0) return peak;
  if (step < warmup) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double span = static_cast<double>(total > warmup ? total - warmup : 1);
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
  return floor + 0.5 * (peak - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

double grad_norm(const ParameterStore& params) {
  double sq = 0.0;
  for (const auto& [name, t] : params.all()) {
    if (!t.requires_grad() || !t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double Adam::step(ParameterStore& params, double lr) {
  const double norm = grad_norm(params);
  if (!std::isfinite(norm)) throw Error(ErrorKind::kNumeric, "NAN_DETECTED", "non-finite gradient norm");
  const double clip = config_.clip_norm > 0 && norm > config_.clip_norm ? config_.clip_norm / norm : 1.0;
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto& [name, t] : params.all()) {
    if (!t.requires_grad()) continue;
    if (!t.has_grad()) continue;
    Moments& mo = state_[name];
    if (mo.m.empty()) {
      mo.m.assign(t.size(), 0.0);
      mo.v.assign(t.size(), 0.0);
    }
    auto w = t.mutable_data();
    auto g = t.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * clip;
      mo.m[i] = config_.beta1 * mo.m[i] + (1.0 - config_.beta1) * gi;
      mo.v[i] = config_.beta2 * mo.v[i] + (1.0 - config_.beta2) * gi * gi;
      w[i] -= lr * (mo.m[i] / c1) / (std::sqrt(mo.v[i] / c2) + config_.eps);
    }
    t.zero_grad();
  }
  return norm;
}

}  // namespace pvmlab
