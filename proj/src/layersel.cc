#include "pvmlab/layersel.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pvmlab/error.h"

namespace pvmlab {

namespace {

// Indices of the k largest scores, lower index first among equals, returned ascending.
std::vector<std::size_t> top_k(std::span<const double> scores, std::span<const std::size_t> ids, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(ids[order[i]]);
  std::sort(out.begin(), out.end());
  return out;
}

void check_k(std::size_t k, std::size_t available, const char* strategy) {
  if (k == 0 || k > available)
    fail("INVALID_ARGUMENT", std::string(strategy) + ": k=" + std::to_string(k) + " but only " +
                                 std::to_string(available) + " candidate layers");
}

}  // namespace

LayerProfile LayerProfile::from_means(std::vector<double> mean_omega, double onset_fraction) {
  if (mean_omega.empty()) fail("INVALID_ARGUMENT", "empty layer profile");
  for (double v : mean_omega)
    if (!(v >= 0.0 && v <= 1.0)) fail("INVALID_ARGUMENT", "layer profile values must lie in [0, 1]");
  LayerProfile p;
  p.mean_omega = std::move(mean_omega);
  const double peak = *std::max_element(p.mean_omega.begin(), p.mean_omega.end());
  const auto it = std::find_if(p.mean_omega.begin(), p.mean_omega.end(),
                               [&](double v) { return v >= onset_fraction * peak; });
  p.onset = static_cast<std::size_t>(it - p.mean_omega.begin());
  return p;
}

LayerSelection select_peak(const LayerProfile& profile, std::size_t k) {
  check_k(k, profile.n_layers(), "peak");
  std::vector<std::size_t> ids(profile.n_layers());
  std::iota(ids.begin(), ids.end(), 0);
  return {"peak", top_k(profile.mean_omega, ids, k), false};
}

LayerSelection select_max_decay(const LayerProfile& profile, std::size_t k) {
  const std::size_t n = profile.n_layers();
  check_k(k, n == 0 ? 0 : n - 1, "max_decay");
  std::vector<double> drop;
  std::vector<std::size_t> ids;
  for (std::size_t l = 1; l < n; ++l) {
    drop.push_back(profile.mean_omega[l - 1] - profile.mean_omega[l]);
    ids.push_back(l);
  }
  LayerSelection sel{"max_decay", {}, false};
  const auto positive = std::count_if(drop.begin(), drop.end(), [](double d) { return d > 0.0; });
  if (positive == 0) {
    sel.no_decay = true;
    for (std::size_t l = 0; l < k; ++l) sel.layers.push_back(l);
    return sel;
  }
  sel.layers = top_k(drop, ids, k);
  return sel;
}

LayerSelection select_strided(std::size_t n_layers, std::size_t onset, std::size_t stride, std::size_t k) {
  if (k == 0) fail("INVALID_ARGUMENT", "strided: k must be positive");
  if (stride == 0 && k > 1) fail("INVALID_ARGUMENT", "strided: stride must be positive for k > 1");
  const std::size_t last = onset + (k - 1) * stride;
  if (last >= n_layers)
    fail("LAYER_OUT_OF_RANGE", "strided: layer " + std::to_string(last) + " >= n_layers " + std::to_string(n_layers));
  LayerSelection sel{"strided", {}, false};
  for (std::size_t i = 0; i < k; ++i) sel.layers.push_back(onset + i * stride);
  return sel;
}

std::string format_layer_list(std::span<const std::size_t> layers) {
  std::string out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(layers[i]);
  }
  return out;
}

std::vector<std::size_t> parse_layer_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
      fail("INVALID_ARGUMENT", "bad layer index '" + item + "' in '" + text + "'");
    out.push_back(std::stoul(item));
  }
  if (out.empty()) fail("INVALID_ARGUMENT", "empty layer list");
  std::sort(out.begin(), out.end());
  if (std::adjacent_find(out.begin(), out.end()) != out.end()) fail("INVALID_ARGUMENT", "duplicate layer in '" + text + "'");
  return out;
}

}  // namespace pvmlab
