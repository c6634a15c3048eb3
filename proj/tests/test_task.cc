#include <gtest/gtest.h>

#include <cmath>

#include "pvmlab/checkpoint.h"
#include "pvmlab/error.h"
#include "pvmlab/task.h"
#include "support.h"

using namespace pvmlab;
using pvmlab::testing::tiny_model;
using pvmlab::testing::tiny_pvm;

namespace {

template <class F>
std::string error_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

TrainConfig tiny_train(std::size_t steps) {
  TrainConfig t;
  t.steps = steps;
  t.warmup = 5;
  t.adam.lr = 3e-3;
  t.episode.text_length = 24;
  t.episode.rho = 1.0;
  t.seed = 5;
  return t;
}

}  // namespace

TEST(Episode, QueriesAreFollowedByTheirAnswer) {
  const TaskVocab vocab;
  const Codebook cb(vocab.n_slots, vocab.n_values, 64, 1);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    EpisodeSpec spec;
    spec.text_length = 120;
    spec.rho = 3.0;
    spec.seed = seed;
    const Episode ep = gen_episode(spec, vocab, cb);
    ASSERT_EQ(ep.tokens.size(), 120u);
    ASSERT_EQ(ep.symbols.size(), vocab.n_slots);
    ASSERT_EQ(ep.queries.size(), ep.answers.size());
    for (std::size_t s = 0; s < vocab.n_slots; ++s) ASSERT_EQ(cb.slot_of(ep.symbols[s]), s);
    std::size_t qi = 0;
    for (std::size_t i = 0; i < ep.tokens.size(); ++i) {
      const int tok = ep.tokens[i];
      ASSERT_GE(tok, 0);
      ASSERT_LT(tok, static_cast<int>(vocab.vocab_size));
      if (vocab.is_query(tok)) {
        ASSERT_LT(qi, ep.queries.size());
        ASSERT_EQ(ep.queries[qi], i);
        ASSERT_LT(i + 1, ep.tokens.size());
        const std::size_t slot = static_cast<std::size_t>(tok) - vocab.n_values;
        const int value = static_cast<int>(cb.value_of(ep.symbols[slot]));
        ASSERT_EQ(ep.tokens[i + 1], value);
        ASSERT_EQ(ep.answers[qi], value);
        ++qi;
        ++i;
      } else {
        ASSERT_GE(tok, vocab.distractor_base());
      }
    }
    ASSERT_EQ(qi, ep.queries.size());
  }
}

TEST(Episode, DeterministicInSeed) {
  const TaskVocab vocab;
  const Codebook cb(vocab.n_slots, vocab.n_values, 64, 1);
  EpisodeSpec spec;
  spec.seed = 77;
  const Episode a = gen_episode(spec, vocab, cb), b = gen_episode(spec, vocab, cb);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.symbols, b.symbols);
  EXPECT_EQ(a.visual_seed, b.visual_seed);
  spec.seed = 78;
  EXPECT_NE(gen_episode(spec, vocab, cb).tokens, a.tokens);
}

TEST(Episode, ZeroRhoPacksQueriesBackToBack) {
  const TaskVocab vocab;
  const Codebook cb(vocab.n_slots, vocab.n_values, 64, 1);
  EpisodeSpec spec;
  spec.text_length = 40;
  spec.rho = 0.0;
  spec.seed = 3;
  const Episode ep = gen_episode(spec, vocab, cb);
  ASSERT_EQ(ep.queries.size(), 20u);
  for (std::size_t q = 0; q < ep.queries.size(); ++q) EXPECT_EQ(ep.queries[q], 2 * q);
}

TEST(Episode, QueryStartHoldsBackQueries) {
  const TaskVocab vocab;
  const Codebook cb(vocab.n_slots, vocab.n_values, 64, 1);
  EpisodeSpec spec;
  spec.text_length = 64;
  spec.rho = 0.5;
  spec.query_start = 30;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    spec.seed = seed;
    const Episode ep = gen_episode(spec, vocab, cb);
    ASSERT_FALSE(ep.queries.empty());
    EXPECT_GE(ep.queries.front(), 30u);
  }
  spec.query_start = 64;
  EXPECT_EQ(error_code([&] { gen_episode(spec, vocab, cb); }), "INVALID_ARGUMENT");
}

TEST(Episode, TargetsSitAtQueryRows) {
  const TaskVocab vocab;
  const Codebook cb(vocab.n_slots, vocab.n_values, 64, 1);
  EpisodeSpec spec;
  spec.seed = 4;
  const Episode ep = gen_episode(spec, vocab, cb);
  const auto targets = episode_targets(ep, 16);
  ASSERT_EQ(targets.size(), 16 + ep.tokens.size());
  std::size_t labelled = 0;
  for (auto t : targets) labelled += t >= 0;
  EXPECT_EQ(labelled, ep.queries.size());
  for (std::size_t q = 0; q < ep.queries.size(); ++q) EXPECT_EQ(targets[16 + ep.queries[q]], ep.answers[q]);
  const auto dense = episode_targets(ep, 16, true);
  for (std::size_t i = 0; i + 1 < ep.tokens.size(); ++i) EXPECT_EQ(dense[16 + i], ep.tokens[i + 1]);
  EXPECT_EQ(dense.back(), -1);
}

TEST(Vocab, RejectsMissingDistractors) {
  TaskVocab v;
  v.vocab_size = 32;
  EXPECT_EQ(error_code([&] { v.validate(); }), "CONFIG_INVALID");
}

TEST(Codebook, RowsAreUnitNorm) {
  const Codebook cb(16, 16, 64, 9);
  ASSERT_EQ(cb.n_symbols(), 256u);
  auto d = cb.rows().data();
  for (std::size_t r = 0; r < cb.n_symbols(); ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < 64; ++j) sq += d[r * 64 + j] * d[r * 64 + j];
    EXPECT_NEAR(sq, 1.0, 1e-12);
  }
  EXPECT_EQ(cb.symbol(3, 5), 53);
  EXPECT_EQ(cb.slot_of(53), 3u);
  EXPECT_EQ(cb.value_of(53), 5u);
}

TEST(EmbedVisual, ZeroNoiseCopiesRows) {
  const Codebook cb(4, 4, 8, 2);
  const std::vector<int> symbols{0, 5, 10, 15};
  const Tensor v = embed_visual(symbols, cb, 0.0, 123);
  for (std::size_t i = 0; i < symbols.size(); ++i)
    for (std::size_t j = 0; j < 8; ++j)
      EXPECT_EQ(v.at(i, j), cb.rows().at(static_cast<std::size_t>(symbols[i]), j));
}

TEST(EmbedVisual, DeterministicAndNearTheCodebook) {
  const Codebook cb(16, 16, 64, 0);
  const double min_dist = cb.min_pairwise_distance();
  ASSERT_GT(min_dist, 0.0);
  std::vector<int> symbols(cb.n_symbols());
  for (std::size_t i = 0; i < symbols.size(); ++i) symbols[i] = static_cast<int>(i);
  const double noise = 0.01;
  const Tensor a = embed_visual(symbols, cb, noise, 7), b = embed_visual(symbols, cb, noise, 7);
  EXPECT_EQ(pvmlab::testing::max_abs_diff(a, b), 0.0);
  auto da = a.data();
  for (std::size_t x = 0; x < symbols.size(); ++x)
    for (std::size_t y = x + 1; y < symbols.size(); ++y) {
      double sq = 0.0;
      for (std::size_t j = 0; j < 64; ++j) sq += std::pow(da[x * 64 + j] - da[y * 64 + j], 2);
      ASSERT_GE(std::sqrt(sq), min_dist - 6 * noise);
    }
}

TEST(EmbedVisual, UnknownSymbol) {
  const Codebook cb(4, 4, 8, 2);
  const std::vector<int> bad{16};
  EXPECT_EQ(error_code([&] { embed_visual(bad, cb, 0.0, 0); }), "UNKNOWN_SYMBOL");
  const std::vector<int> neg{-1};
  EXPECT_EQ(error_code([&] { embed_visual(neg, cb, 0.0, 0); }), "UNKNOWN_SYMBOL");
}

TEST(Eval, OracleIsPerfectAndSelfGainIsZero) {
  const TaskVocab vocab;
  const Codebook cb(vocab.n_slots, vocab.n_values, 64, 1);
  EpisodeSpec spec;
  spec.text_length = 96;
  const auto episodes = make_episodes(30, spec, vocab, cb, 0, "eval");
  const OracleAnswerer oracle(vocab, cb);
  const std::vector<Variant> variants{{"ref", &oracle}, {"same", &oracle}};
  const RecallReport r = eval_by_length(variants, episodes, 4);
  ASSERT_EQ(r.buckets.size(), 4u);
  std::size_t total = 0;
  for (const auto& e : episodes) total += e.queries.size();
  std::size_t counted = 0;
  for (const auto& b : r.buckets) {
    EXPECT_EQ(b.accuracy[0], 1.0);
    EXPECT_EQ(b.gain[1], 0.0);
    EXPECT_LE(b.lo, b.hi);
    EXPECT_LE(b.count, total / 4 + 1);
    EXPECT_GE(b.count, total / 4);
    counted += b.count;
  }
  EXPECT_EQ(counted, total);
  for (std::size_t i = 1; i < r.buckets.size(); ++i) EXPECT_LE(r.buckets[i - 1].hi, r.buckets[i].lo);
  EXPECT_EQ(r.overall[0], 1.0);
}

TEST(Eval, GainFloor) {
  EXPECT_DOUBLE_EQ(relative_gain(0.6, 0.5), 0.2);
  EXPECT_DOUBLE_EQ(relative_gain(0.1, 0.0), 0.1 / kGainFloor);
}

TEST(Eval, SerialAndParallelAgree) {
  const ModelConfig c = tiny_model(3);
  const Model m(c);
  const TaskVocab vocab = TaskVocab::for_model(c);
  const Codebook cb(vocab.n_slots, vocab.n_values, c.d_model, 3);
  EpisodeSpec spec;
  spec.text_length = 40;
  const auto episodes = make_episodes(12, spec, vocab, cb, 3, "eval");
  const ModelAnswerer ans(m, cb, 0.05);
  const OracleAnswerer oracle(vocab, cb);
  const std::vector<Variant> variants{{"model", &ans}, {"oracle", &oracle}};
  const RecallReport a = eval_by_length(variants, episodes, 3, 1);
  const RecallReport b = eval_by_length(variants, episodes, 3, 4);
  ASSERT_EQ(a.buckets.size(), b.buckets.size());
  for (std::size_t i = 0; i < a.buckets.size(); ++i) {
    EXPECT_EQ(a.buckets[i].accuracy, b.buckets[i].accuracy);
    EXPECT_EQ(a.buckets[i].count, b.buckets[i].count);
  }
}

TEST(Eval, TooFewEpisodes) {
  const TaskVocab vocab;
  const Codebook cb(vocab.n_slots, vocab.n_values, 64, 1);
  const auto episodes = make_episodes(2, EpisodeSpec{}, vocab, cb, 0, "eval");
  const OracleAnswerer oracle(vocab, cb);
  const std::vector<Variant> variants{{"ref", &oracle}};
  EXPECT_EQ(error_code([&] { eval_by_length(variants, episodes, 4); }), "TOO_FEW_EPISODES");
}

TEST(Train, ZeroStepsLeavesParametersAlone) {
  const ModelConfig c = tiny_model(1);
  Model m(c);
  const std::string before = parameter_hash(m.params());
  const TaskVocab vocab = TaskVocab::for_model(c);
  const Codebook cb(vocab.n_slots, vocab.n_values, c.d_model, 1);
  const TrainResult r = pretrain_baseline(m, cb, tiny_train(0));
  EXPECT_TRUE(r.losses.empty());
  EXPECT_EQ(parameter_hash(m.params()), before);
}

TEST(Train, LossDecreasesAndIsDeterministic) {
  const ModelConfig c = tiny_model(1);
  const TaskVocab vocab = TaskVocab::for_model(c);
  const Codebook cb(vocab.n_slots, vocab.n_values, c.d_model, 1);
  TrainConfig t = tiny_train(200);
  t.all_positions = true;
  Model a(c), b(c);
  const TrainResult ra = pretrain_baseline(a, cb, t);
  pretrain_baseline(b, cb, t);
  ASSERT_EQ(ra.losses.size(), 200u);
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    head += ra.losses[i];
    tail += ra.losses[180 + i];
  }
  EXPECT_LT(tail, head);
  EXPECT_EQ(parameter_hash(a.params()), parameter_hash(b.params()));
}

TEST(Train, PretrainRefusesPvm) {
  const ModelConfig c = tiny_model(1);
  Model m(c);
  m.attach_pvm(tiny_pvm(), 2);
  const TaskVocab vocab = TaskVocab::for_model(c);
  const Codebook cb(vocab.n_slots, vocab.n_values, c.d_model, 1);
  EXPECT_EQ(error_code([&] { pretrain_baseline(m, cb, tiny_train(1)); }), "PVM_ATTACHED");
}

TEST(Stage1, BackboneStaysFrozenAndGatesMove) {
  const ModelConfig c = tiny_model(1);
  Model m(c);
  const TaskVocab vocab = TaskVocab::for_model(c);
  const Codebook cb(vocab.n_slots, vocab.n_values, c.d_model, 1);
  EXPECT_EQ(error_code([&] { train_pvm_stage1(m, cb, tiny_train(1)); }), "PVM_NOT_ATTACHED");
  const std::string backbone = backbone_hash(m.params());
  m.attach_pvm(tiny_pvm(), 2);
  EXPECT_EQ(backbone_hash(m.params()), backbone);
  const Stage1Result r = train_pvm_stage1(m, cb, tiny_train(30));
  EXPECT_EQ(r.backbone_hash_before, backbone);
  EXPECT_EQ(r.backbone_hash_after, backbone);
  ASSERT_EQ(r.gates.size(), 2u);
  for (double g : r.gates) EXPECT_NE(g, 0.0);
}
