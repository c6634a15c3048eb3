#include "pvmlab/trace.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pvmlab/error.h"

namespace pvmlab {

PartitionSplit decompose_partition(std::span<const double> scores, std::span<const std::size_t> visual_indices) {
  if (visual_indices.empty()) fail("EMPTY_VISUAL_SET", "decompose_partition: visual index set is empty");
  if (scores.empty()) fail("SHAPE_INVALID", "decompose_partition: empty score row");
  std::vector<char> is_visual(scores.size(), 0);
  for (auto k : visual_indices) {
    if (k >= scores.size())
      fail("INDEX_OUT_OF_RANGE", "decompose_partition: visual index " + std::to_string(k) + " outside context of " +
                                     std::to_string(scores.size()));
    is_visual[k] = 1;
  }
  PartitionSplit split;
  split.shift = *std::max_element(scores.begin(), scores.end());
  for (std::size_t k = 0; k < scores.size(); ++k) {
    const double e = std::exp(scores[k] - split.shift);
    (is_visual[k] ? split.z_visual_shifted : split.z_text_shifted) += e;
  }
  const double scale = std::exp(split.shift);
  split.z_visual = split.z_visual_shifted * scale;
  split.z_text = split.z_text_shifted * scale;
  return split;
}

PartitionSplit decompose_partition(std::span<const double> scores, std::size_t n_visual) {
  std::vector<std::size_t> idx(n_visual);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return decompose_partition(scores, idx);
}

AttentionTrace make_trace(std::size_t step, std::size_t layer, std::size_t head, const PartitionSplit& split) {
  return {step, layer, head, split.z_visual, split.z_text, split.omega(), split.tvr()};
}

}  // namespace pvmlab
