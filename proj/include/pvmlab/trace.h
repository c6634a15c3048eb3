#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace pvmlab {

// Visual / textual split of one query's softmax partition function.
// The sums are accumulated after subtracting the row max (`shift`); omega and
// tvr use the shifted sums and are therefore shift-invariant.
struct PartitionSplit {
  double z_visual = 0.0;   // sum over visual keys of exp(s_k)
  double z_text = 0.0;     // sum over text keys of exp(s_k)
  double shift = 0.0;
  double z_visual_shifted = 0.0;
  double z_text_shifted = 0.0;

  double omega() const { return z_visual_shifted / (z_visual_shifted + z_text_shifted); }
  double text_fraction() const { return z_text_shifted / (z_visual_shifted + z_text_shifted); }
  double tvr() const { return z_text_shifted / z_visual_shifted; }
};

// `scores` are pre-softmax, already scaled by 1/sqrt(d_head). Every index not
// listed in `visual_indices` counts as text.
PartitionSplit decompose_partition(std::span<const double> scores, std::span<const std::size_t> visual_indices);
// Convenience for a visual prefix occupying indices [0, n_visual).
PartitionSplit decompose_partition(std::span<const double> scores, std::size_t n_visual);

struct AttentionTrace {
  std::size_t step = 0;   // t, number of text tokens in context including the query
  std::size_t layer = 0;
  std::size_t head = 0;
  double z_v = 0.0;
  double z_t = 0.0;
  double omega = 0.0;
  double tvr = 0.0;
};

AttentionTrace make_trace(std::size_t step, std::size_t layer, std::size_t head, const PartitionSplit& split);

}  // namespace pvmlab
