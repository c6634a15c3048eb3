#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "pvmlab/error.h"
#include "pvmlab/layersel.h"
#include "pvmlab/rng.h"
#include "selection_oracle.h"

using namespace pvmlab;

namespace {

using pvmlab::testing::brute_force_top_k;
using pvmlab::testing::Layers;

LayerProfile profile_of(std::vector<double> v) { return LayerProfile::from_means(std::move(v)); }

}  // namespace

TEST(SelectPeak, HandProfile) {
  EXPECT_EQ(select_peak(profile_of({0.01, 0.05, 0.20, 0.08, 0.07}), 2).layers, (Layers{2, 3}));
}

TEST(SelectPeak, UniformTieBreak) {
  EXPECT_EQ(select_peak(profile_of({0.3, 0.3, 0.3, 0.3}), 2).layers, (Layers{0, 1}));
}

TEST(SelectPeak, MatchesBruteForce) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 9));
    const std::size_t k = static_cast<std::size_t>(rng.uniform_int(1, static_cast<int>(n)));
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform_int(0, 4) / 4.0;  // coarse values force ties
    Layers ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    EXPECT_EQ(select_peak(profile_of(v), k).layers, brute_force_top_k(v, ids, k));
  }
}

TEST(SelectMaxDecay, HandProfile) {
  EXPECT_EQ(select_max_decay(profile_of({0.01, 0.05, 0.20, 0.08, 0.07}), 1).layers, (Layers{3}));
}

TEST(SelectMaxDecay, MonotoneIncreasingIsFlagged) {
  const LayerSelection s = select_max_decay(profile_of({0.1, 0.2, 0.3, 0.4, 0.5}), 3);
  EXPECT_TRUE(s.no_decay);
  EXPECT_EQ(s.layers, (Layers{0, 1, 2}));
}

TEST(SelectMaxDecay, MatchesBruteForce) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(3, 9));
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform_int(0, 5) / 5.0;
    std::vector<double> drops;
    Layers ids;
    for (std::size_t l = 1; l < n; ++l) {
      drops.push_back(v[l - 1] - v[l]);
      ids.push_back(l);
    }
    const std::size_t k = static_cast<std::size_t>(rng.uniform_int(1, static_cast<int>(n - 1)));
    const LayerSelection s = select_max_decay(profile_of(v), k);
    const bool any_positive = std::any_of(drops.begin(), drops.end(), [](double d) { return d > 0.0; });
    EXPECT_EQ(s.no_decay, !any_positive);
    if (any_positive) EXPECT_EQ(s.layers, brute_force_top_k(drops, ids, k));
  }
}

TEST(SelectMaxDecay, KBoundedByLayerCount) {
  EXPECT_THROW(select_max_decay(profile_of({0.5, 0.1}), 2), Error);
  EXPECT_THROW(select_peak(profile_of({0.5, 0.1}), 3), Error);
}

TEST(SelectStrided, PublishedPlacements) {
  EXPECT_EQ(select_strided(36, 8, 8, 3).layers, (Layers{8, 16, 24}));
  EXPECT_EQ(select_strided(36, 5, 6, 3).layers, (Layers{5, 11, 17}));
  EXPECT_EQ(select_strided(8, 2, 2, 3).layers, (Layers{2, 4, 6}));
}

TEST(SelectStrided, OverflowIsAnError) {
  try {
    select_strided(8, 2, 3, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "LAYER_OUT_OF_RANGE");
  }
}

TEST(SelectionInvariant, DistinctValidIndices) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(3, 12));
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform();
    const LayerProfile p = profile_of(v);
    const std::size_t k = static_cast<std::size_t>(rng.uniform_int(1, static_cast<int>(n - 1)));
    for (const auto& s : {select_peak(p, k), select_max_decay(p, k)}) {
      ASSERT_EQ(s.layers.size(), k);
      EXPECT_TRUE(std::is_sorted(s.layers.begin(), s.layers.end()));
      EXPECT_EQ(std::adjacent_find(s.layers.begin(), s.layers.end()), s.layers.end());
      EXPECT_LT(s.layers.back(), n);
    }
  }
}

TEST(Onset, FirstLayerAtQuarterOfPeak) {
  EXPECT_EQ(profile_of({0.01, 0.02, 0.08, 0.3, 0.2}).onset, 2u);
  EXPECT_EQ(profile_of({0.4, 0.1}).onset, 0u);
  EXPECT_EQ(profile_of({0.0, 0.0, 0.0}).onset, 0u);
}

TEST(Onset, RejectsValuesOutsideUnitInterval) {
  EXPECT_THROW(profile_of({0.5, 1.5}), Error);
  EXPECT_THROW(profile_of({}), Error);
}

TEST(LayerList, FormatAndParse) {
  EXPECT_EQ(format_layer_list(Layers{8, 16, 24}), "8,16,24");
  EXPECT_EQ(parse_layer_list("6,2,4"), (Layers{2, 4, 6}));
  EXPECT_THROW(parse_layer_list("2,,4"), Error);
  EXPECT_THROW(parse_layer_list("2,2"), Error);
  EXPECT_THROW(parse_layer_list("x"), Error);
}
