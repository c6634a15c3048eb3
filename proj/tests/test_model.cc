#include <gtest/gtest.h>

#include <cmath>

#include "pvmlab/error.h"
#include "pvmlab/model.h"
#include "support.h"

using namespace pvmlab;
using namespace pvmlab::testing;

namespace {

std::vector<int> tokens_for(std::size_t n, std::uint64_t seed, int vocab) {
  Rng rng(seed);
  std::vector<int> t(n);
  for (auto& x : t) x = rng.uniform_int(0, vocab - 1);
  return t;
}

void set_gates(Model& m, double value) {
  for (auto l : m.pvm_config()->injection_layers) m.params().get(PvmAdapter::prefix(l) + "gate").mutable_data()[0] = value;
}

}  // namespace

TEST(Model, ForwardShapes) {
  const Model m(tiny_model());
  const auto tokens = tokens_for(10, 1, 24);
  const ForwardOutput out = m.forward(random_tensor({4, 16}, 2), tokens);
  EXPECT_EQ(out.logits.rows(), 14u);
  EXPECT_EQ(out.logits.cols(), 24u);
  EXPECT_EQ(out.hidden.size(), 4u);
  for (const auto& h : out.hidden) EXPECT_EQ(h.shape(), (Shape{14, 16}));
}

TEST(Model, RejectsBadVisualAndOverflow) {
  const Model m(tiny_model());
  const auto tokens = tokens_for(5, 1, 24);
  EXPECT_THROW(m.forward(random_tensor({3, 16}, 2), tokens), Error);
  const auto too_many = tokens_for(157, 1, 24);
  try {
    m.forward(random_tensor({4, 16}, 2), too_many);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "SEQUENCE_OVERFLOW");
  }
}

TEST(Model, InitIsDeterministicInSeed) {
  const Model a(tiny_model(3)), b(tiny_model(3)), c(tiny_model(4));
  const auto& e1 = a.params().get("unembed");
  EXPECT_EQ(max_abs_diff(e1, b.params().get("unembed")), 0.0);
  EXPECT_GT(max_abs_diff(e1, c.params().get("unembed")), 0.0);
}

TEST(Model, CopyIsDeep) {
  Model a(tiny_model());
  Model b = a;
  b.params().get("unembed").mutable_data()[0] += 1.0;
  EXPECT_NE(a.params().get("unembed").at(0), b.params().get("unembed").at(0));
}

TEST(Model, GateZeroLeavesLogitsUnchanged) {
  const Model base(tiny_model());
  const Tensor visual = random_tensor({4, 16}, 5);
  const auto tokens = tokens_for(140, 6, 24);
  const Tensor ref = base.forward(visual, tokens).logits;
  for (PvmVariant v : {PvmVariant::kVisual, PvmVariant::kReflexive, PvmVariant::kIsoMlp}) {
    Model m = base;
    m.attach_pvm(tiny_pvm(v), 9);
    EXPECT_LE(max_abs_diff(m.forward(visual, tokens).logits, ref), 1e-12) << to_string(v);
  }
}

TEST(Model, CachedDecodeMatchesFullForward) {
  for (PvmVariant v : {PvmVariant::kVisual, PvmVariant::kReflexive}) {
    Model m(tiny_model());
    m.attach_pvm(tiny_pvm(v), 2);
    set_gates(m, 0.8);
    const Tensor visual = random_tensor({4, 16}, 7);
    const auto tokens = tokens_for(30, 8, 24);
    const Tensor full = m.forward(visual, tokens).logits;
    SequenceState state = m.begin(visual);
    std::size_t pos = 0;
    for (std::size_t chunk : {1u, 3u, 1u, 7u, 18u}) {
      const ForwardOutput out = m.extend(state, std::span<const int>(tokens).subspan(pos, chunk));
      for (std::size_t i = 0; i < chunk; ++i)
        for (std::size_t c = 0; c < 24; ++c)
          EXPECT_NEAR(out.logits.at(i, c), full.at(4 + pos + i, c), 1e-10) << to_string(v);
      pos += chunk;
    }
  }
}

TEST(Model, CausalityUnderPerturbation) {
  Model m(tiny_model());
  m.attach_pvm(tiny_pvm(PvmVariant::kReflexive), 2);
  set_gates(m, 0.5);
  const Tensor visual = random_tensor({4, 16}, 9);
  auto tokens = tokens_for(20, 10, 24);
  const Tensor before = m.forward(visual, tokens).logits;
  tokens[12] = (tokens[12] + 5) % 24;
  const Tensor after = m.forward(visual, tokens).logits;
  for (std::size_t r = 0; r < 4 + 12; ++r)
    for (std::size_t c = 0; c < 24; ++c) EXPECT_EQ(before.at(r, c), after.at(r, c)) << "row " << r;
  EXPECT_GT(max_abs_diff(before, after), 0.0);
}

TEST(Model, VisualRowsNeverReceiveInjection) {
  const Model base(tiny_model());
  Model m = base;
  m.attach_pvm(tiny_pvm(PvmVariant::kVisual), 4);
  set_gates(m, 1.5);
  const Tensor visual = random_tensor({4, 16}, 11);
  const auto tokens = tokens_for(6, 12, 24);
  const ForwardOutput a = base.forward(visual, tokens), b = m.forward(visual, tokens);
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(a.hidden[l].at(r, c), b.hidden[l].at(r, c));
  EXPECT_GT(max_abs_diff(a.logits, b.logits), 0.0);
}

TEST(Generate, DeterministicAndCached) {
  const Model m(tiny_model());
  const Tensor visual = random_tensor({4, 16}, 13);
  const int prompt[] = {3, 7};
  auto run = [&] {
    SequenceState s = m.begin(visual);
    m.extend(s, prompt);
    return generate(m, s, 12);
  };
  const GenerateResult a = run(), b = run();
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.traces.size(), 12u * 4u * 2u);

  std::vector<int> all{3, 7};
  for (std::size_t i = 0; i < a.tokens.size(); ++i) {
    const auto logits = m.forward(visual, all).logits;
    const auto last = logits.data().subspan((logits.rows() - 1) * 24, 24);
    EXPECT_EQ(static_cast<int>(argmax(last)), a.tokens[i]);
    all.push_back(a.tokens[i]);
  }
}

TEST(Generate, ZeroStepsAndOverflow) {
  const Model m(tiny_model());
  SequenceState s = m.begin(random_tensor({4, 16}, 14));
  const GenerateResult r = generate(m, s, 0);
  EXPECT_TRUE(r.tokens.empty());
  EXPECT_TRUE(r.traces.empty());
  try {
    generate(m, s, 157);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "SEQUENCE_OVERFLOW");
  }
}

TEST(Traces, OnePerTextRowLayerHead) {
  const Model m(tiny_model());
  std::vector<AttentionTrace> traces;
  const auto tokens = tokens_for(9, 15, 24);
  m.forward(random_tensor({4, 16}, 16), tokens, trace_collector(traces, 4));
  ASSERT_EQ(traces.size(), 9u * 4u * 2u);
  for (const auto& t : traces) {
    EXPECT_GE(t.step, 1u);
    EXPECT_LE(t.step, 9u);
    EXPECT_GT(t.omega, 0.0);
    EXPECT_LE(t.omega, 1.0);
  }
}

TEST(Argmax, LowestIndexWinsTies) {
  const std::vector<double> v{1.0, 3.0, 3.0, 2.0};
  EXPECT_EQ(argmax(v), 1u);
}

namespace {

using Vec = std::vector<double>;

Vec row_times(const Vec& x, const Tensor& w) {  // x (d_in) * w (d_in x d_out)
  Vec y(w.cols(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) y[j] += x[i] * w.at(i, j);
  return y;
}

Vec rms(const Vec& x, const Tensor& g) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / double(x.size()) + 1e-6);
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = g.at(i) * x[i] * inv;
  return y;
}

void rotate(Vec& v, std::size_t pos, std::size_t heads, double base) {
  const std::size_t dh = v.size() / heads, half = dh / 2;
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < half; ++i) {
      const double angle = double(pos) * std::pow(base, -2.0 * double(i) / double(dh));
      double& a = v[h * dh + i];
      double& b = v[h * dh + i + half];
      const double a0 = a, b0 = b;
      a = a0 * std::cos(angle) - b0 * std::sin(angle);
      b = a0 * std::sin(angle) + b0 * std::cos(angle);
    }
}

// Position-by-position re-implementation of the decoder without any tensor ops.
std::vector<Vec> reference_logits(const Model& m, const Tensor& visual, const std::vector<int>& tokens) {
  const ModelConfig& c = m.config();
  const auto& P = m.params();
  const std::size_t d = c.d_model, H = c.n_heads, dh = d / H;
  std::vector<Vec> x;
  for (std::size_t r = 0; r < visual.rows(); ++r) x.emplace_back(visual.data().begin() + r * d, visual.data().begin() + (r + 1) * d);
  const Tensor& emb = P.get("embed.tok");
  for (int t : tokens) x.emplace_back(emb.data().begin() + t * d, emb.data().begin() + (t + 1) * d);
  const std::size_t n = x.size();
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    std::vector<Vec> q(n), k(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec a = rms(x[i], P.get(p + "attn_norm"));
      q[i] = row_times(a, P.get(p + "wq"));
      k[i] = row_times(a, P.get(p + "wk"));
      v[i] = row_times(a, P.get(p + "wv"));
      rotate(q[i], i, H, c.rope_base);
      rotate(k[i], i, H, c.rope_base);
    }
    std::vector<Vec> next(n);
    for (std::size_t i = 0; i < n; ++i) {
      Vec joined(d, 0.0);
      for (std::size_t h = 0; h < H; ++h) {
        Vec s(i + 1);
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= i; ++j) {
          double dot = 0.0;
          for (std::size_t e = 0; e < dh; ++e) dot += q[i][h * dh + e] * k[j][h * dh + e];
          s[j] = dot / std::sqrt(double(dh));
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j <= i; ++j)
          for (std::size_t e = 0; e < dh; ++e) joined[h * dh + e] += s[j] / z * v[j][h * dh + e];
      }
      Vec h1 = x[i];
      const Vec o = row_times(joined, P.get(p + "wo"));
      for (std::size_t e = 0; e < d; ++e) h1[e] += o[e];
      Vec u = row_times(rms(h1, P.get(p + "ffn_norm")), P.get(p + "ffn_in"));
      for (auto& e : u) e = e / (1.0 + std::exp(-e));
      const Vec f = row_times(u, P.get(p + "ffn_out"));
      for (std::size_t e = 0; e < d; ++e) h1[e] += f[e];
      next[i] = h1;
    }
    x = next;
  }
  const Tensor& E = P.get("unembed");
  std::vector<Vec> logits;
  for (const auto& row : x) {
    const Vec h = rms(row, P.get("final_norm"));
    Vec out(E.rows(), 0.0);
    for (std::size_t t = 0; t < E.rows(); ++t)
      for (std::size_t e = 0; e < d; ++e) out[t] += h[e] * E.at(t, e);
    logits.push_back(out);
  }
  return logits;
}

}  // namespace

TEST(Model, MatchesReferenceImplementation) {
  ModelConfig c;
  c.seed = 21;
  const Model m(c);
  const Tensor visual = random_tensor({c.n_visual, c.d_model}, 22, 0.3);
  const auto tokens = tokens_for(20, 23, static_cast<int>(c.vocab_size));
  const Tensor logits = m.forward(visual, tokens).logits;
  const auto ref = reference_logits(m, visual, tokens);
  ASSERT_EQ(ref.size(), logits.rows());
  for (std::size_t r = 0; r < ref.size(); ++r)
    for (std::size_t t = 0; t < ref[r].size(); ++t) ASSERT_NEAR(logits.at(r, t), ref[r][t], 1e-10) << r << "," << t;
}

TEST(SelfAttention, HandSetSingleHead) {
  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const AttentionWeights w{eye, eye, eye, eye};
  const RopeTable table(4, 2, 10000.0);
  const Tensor x = Tensor::matrix(2, 2, {1.0, 0.0, 0.5, 2.0});
  const AttentionOutput out = self_attention(x, w, 1, 0, table, nullptr);
  // Position 1 rotates by one radian.
  const double c1 = std::cos(1.0), s1 = std::sin(1.0);
  const double q1a = 0.5 * c1 - 2.0 * s1, q1b = 0.5 * s1 + 2.0 * c1;
  const double s10 = (q1a * 1.0 + q1b * 0.0) / std::sqrt(2.0);
  const double s11 = (q1a * q1a + q1b * q1b) / std::sqrt(2.0);
  const double w10 = std::exp(s10) / (std::exp(s10) + std::exp(s11));
  EXPECT_EQ(out.weights[0].at(0, 0), 1.0);
  EXPECT_EQ(out.weights[0].at(0, 1), 0.0);
  EXPECT_NEAR(out.weights[0].at(1, 0), w10, 1e-12);
  EXPECT_NEAR(out.weights[0].at(1, 1), 1.0 - w10, 1e-12);
  EXPECT_NEAR(out.scores[0].at(1, 1), s11, 1e-12);
}
