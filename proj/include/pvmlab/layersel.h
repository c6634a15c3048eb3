#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace pvmlab {

inline constexpr double kOnsetFraction = 0.25;

struct LayerProfile {
  std::vector<double> mean_omega;  // one entry per layer, in [0, 1]
  std::size_t onset = 0;

  // Validates the values and sets onset to the first layer reaching
  // `onset_fraction` of the largest mean.
  static LayerProfile from_means(std::vector<double> mean_omega, double onset_fraction = kOnsetFraction);
  std::size_t n_layers() const { return mean_omega.size(); }
};

struct LayerSelection {
  std::string strategy;
  std::vector<std::size_t> layers;  // ascending
  bool no_decay = false;            // max_decay found no positive drop
};

// k layers with the largest mean omega; lower index wins ties.
LayerSelection select_peak(const LayerProfile& profile, std::size_t k);

// k layers with the largest positive drop mean[l-1] - mean[l] (l >= 1); lower
// index wins ties. When no drop is positive, returns layers 0..k-1 flagged.
LayerSelection select_max_decay(const LayerProfile& profile, std::size_t k);

// {onset + i * stride : i < k}; throws LAYER_OUT_OF_RANGE when the last one
// would fall outside [0, n_layers).
LayerSelection select_strided(std::size_t n_layers, std::size_t onset, std::size_t stride, std::size_t k);

std::string format_layer_list(std::span<const std::size_t> layers);
std::vector<std::size_t> parse_layer_list(const std::string& text);

}  // namespace pvmlab
