#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace pvmlab::testing {

using Layers = std::vector<std::size_t>;

// Exhaustive search over every k-subset: highest total score, then the
// lexicographically smallest index set among ties.
inline Layers brute_force_top_k(const std::vector<double>& scores, const Layers& ids, std::size_t k) {
  const std::size_t n = scores.size();
  Layers best;
  std::vector<double> best_sorted;
  std::vector<bool> pick(n, false);
  std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(k), true);
  do {
    Layers chosen;
    std::vector<double> vals;
    for (std::size_t i = 0; i < n; ++i)
      if (pick[i]) {
        chosen.push_back(ids[i]);
        vals.push_back(scores[i]);
      }
    std::sort(vals.rbegin(), vals.rend());
    // Top-k is the set whose sorted values dominate elementwise; among equal
    // value multisets the smaller indices win.
    if (best.empty() || vals > best_sorted || (vals == best_sorted && chosen < best)) {
      best = chosen;
      best_sorted = vals;
    }
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return best;
}

}  // namespace pvmlab::testing
