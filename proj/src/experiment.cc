#include "pvmlab/experiment.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "pvmlab/error.h"
#include "pvmlab/rng.h"

namespace pvmlab {

Codebook make_codebook(const RunConfig& run) {
  const TaskVocab vocab = TaskVocab::for_model(run.model);
  return Codebook(vocab.n_slots, vocab.n_values, run.model.d_model, run.seed);
}

Model run_pretrain(const RunConfig& run, const Codebook& codebook, TrainResult* result, const StepCallback& on_step) {
  ModelConfig mc = run.model;
  mc.seed = run.seed;
  Model model(mc);
  TrainConfig tc = run.pretrain;
  tc.seed = run.seed;
  TrainResult r = pretrain_baseline(model, codebook, tc, on_step);
  if (result) *result = std::move(r);
  return model;
}

Model with_pvm(const Model& base, const RunConfig& run, const PvmConfig& pvm) {
  Model m = base;
  m.attach_pvm(pvm, Rng::derive_seed(run.seed, "pvm-init"));
  return m;
}

std::vector<Episode> eval_episodes(const RunConfig& run, const Codebook& codebook) {
  return make_episodes(run.eval.episodes, run.eval.episode, TaskVocab::for_model(run.model), codebook, run.seed,
                       "eval");
}

std::vector<std::size_t> analysis_band(const RunConfig& run, std::size_t n_layers) {
  if (!run.profile.band.empty()) return run.profile.band;
  std::vector<std::size_t> band;
  for (std::size_t l = n_layers / 4; l < (3 * n_layers + 3) / 4; ++l) band.push_back(l);
  if (band.empty()) band.push_back(0);
  return band;
}

ProfileRun profile_model(const Model& model, const Codebook& codebook, const RunConfig& run, std::size_t steps,
                         const std::string& mode, std::span<const std::size_t> band) {
  ProfileRun out;
  if (steps == 0) return out;
  const ModelConfig& mc = model.config();
  const TaskVocab vocab = TaskVocab::for_model(mc);
  const std::size_t M = mc.n_visual;
  if (M + steps > mc.max_seq_len)
    fail("SEQUENCE_OVERFLOW", "profile: " + std::to_string(steps) + " steps exceed max_seq_len");

  EpisodeSpec spec = run.eval.episode;
  spec.text_length = std::max<std::size_t>(steps, 2);
  spec.query_start = 0;
  spec.seed = Rng::derive_seed(run.seed, "profile");
  const Episode ep = gen_episode(spec, vocab, codebook);
  const Tensor visual = episode_visual(ep, codebook, spec.noise_scale);

  double s_max = -std::numeric_limits<double>::infinity();
  ScoreSink collect = trace_collector(out.traces, M);
  ScoreSink sink = [&](std::size_t layer, std::size_t head, std::size_t position, std::span<const double> scores) {
    if (position < M) return;
    collect(layer, head, position, scores);
    if (std::find(band.begin(), band.end(), layer) != band.end())
      for (std::size_t k = 0; k < M; ++k) s_max = std::max(s_max, scores[k]);
  };

  if (mode == "stress") {
    SequenceState state = model.begin(visual);
    const int prompt[1] = {vocab.query_token(0)};
    model.extend(state, prompt, sink);
    out.tokens.push_back(prompt[0]);
    for (std::size_t s = 1; s < steps; ++s) {
      const int token[1] = {static_cast<int>(argmax(state.last_logits))};
      model.extend(state, token, sink);
      out.tokens.push_back(token[0]);
    }
  } else if (mode == "task") {
    NoGradScope no_grad;
    out.tokens.assign(ep.tokens.begin(), ep.tokens.begin() + static_cast<std::ptrdiff_t>(steps));
    model.forward(visual, out.tokens, sink);
  } else {
    throw Error(ErrorKind::kConfig, "CONFIG_INVALID", "unknown profile mode '" + mode + "'");
  }
  out.s_max = s_max;
  return out;
}

std::vector<LogitLensTrace> logitlens_on_episodes(const Model& model, const Codebook& codebook,
                                                  std::span<const Episode> episodes, double noise_scale) {
  NoGradScope no_grad;
  const std::size_t M = model.config().n_visual;
  std::vector<LogitLensTrace> total;
  std::size_t used = 0;
  for (const auto& ep : episodes) {
    if (ep.queries.empty()) continue;
    const std::size_t len = ep.queries.back() + 1;
    const std::span<const int> tokens(ep.tokens.data(), len);
    const ForwardOutput out = model.forward(episode_visual(ep, codebook, noise_scale), tokens);
    std::vector<std::size_t> rows;
    for (auto q : ep.queries) rows.push_back(M + q);
    const auto per = logitlens_probe(out.hidden, model.unembedding(), &model.final_norm(), out.logits, rows);
    if (total.empty()) total = per;
    else
      for (std::size_t l = 0; l < per.size(); ++l) total[l].kl += per[l].kl;
    ++used;
  }
  if (used == 0) fail("INVALID_ARGUMENT", "logitlens: no episode has a query");
  for (auto& t : total) t.kl /= static_cast<double>(used);
  return total;
}

BenchInputs bench_inputs(const RunConfig& run, const Codebook& codebook) {
  EpisodeSpec spec = run.eval.episode;
  spec.text_length = std::max<std::size_t>(run.bench.prompt_tokens, 2);
  spec.query_start = 0;
  spec.seed = Rng::derive_seed(run.seed, "bench");
  const Episode ep = gen_episode(spec, TaskVocab::for_model(run.model), codebook);
  return {episode_visual(ep, codebook, spec.noise_scale),
          std::vector<int>(ep.tokens.begin(), ep.tokens.begin() + static_cast<std::ptrdiff_t>(run.bench.prompt_tokens))};
}

SeedStudy run_seed_study(const RunConfig& run, std::span<const PvmVariant> variants, const ProgressLog& log) {
  auto note = [&](const std::string& line) {
    if (log) log(line);
  };
  const Codebook codebook = make_codebook(run);
  note("seed " + std::to_string(run.seed) + ": pretraining baseline");
  SeedStudy study{run.seed, run_pretrain(run, codebook), {}, {}, {}};
  for (PvmVariant v : variants) {
    PvmConfig pc = run.pvm;
    pc.variant = v;
    Model m = with_pvm(study.baseline, run, pc);
    note("seed " + std::to_string(run.seed) + ": stage 1 for " + to_string(v));
    TrainConfig tc = run.stage1;
    tc.seed = Rng::derive_seed(run.seed, "stage1");
    Stage1Result r = train_pvm_stage1(m, codebook, tc);
    study.gates.push_back(r.gates);
    study.variants.emplace_back(to_string(v), std::move(m));
  }
  const std::vector<Episode> episodes = eval_episodes(run, codebook);
  const double noise = run.eval.episode.noise_scale;
  std::vector<ModelAnswerer> answerers;
  answerers.reserve(study.variants.size() + 1);
  answerers.emplace_back(study.baseline, codebook, noise);
  for (const auto& [name, m] : study.variants) answerers.emplace_back(m, codebook, noise);
  std::vector<Variant> vs{{"baseline", &answerers[0]}};
  for (std::size_t i = 0; i < study.variants.size(); ++i) vs.push_back({study.variants[i].first, &answerers[i + 1]});
  note("seed " + std::to_string(run.seed) + ": evaluating");
  study.report = eval_by_length(vs, episodes, run.eval.buckets, run.eval.jobs);
  return study;
}

namespace {

Json mean_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
  return {{"mean", mean}, {"std", sd}};
}

}  // namespace

Json recall_report_json(std::span<const std::pair<std::uint64_t, RecallReport>> per_seed, const std::string& config_hash) {
  if (per_seed.empty()) fail("INVALID_ARGUMENT", "report: no seeds");
  const RecallReport& first = per_seed.front().second;
  Json seeds = Json::array(), runs = Json::array();
  for (const auto& [seed, rep] : per_seed) {
    if (rep.variants != first.variants || rep.buckets.size() != first.buckets.size())
      fail("INVALID_ARGUMENT", "report: seeds disagree on variants or bucket count");
    seeds.push_back(seed);
    Json buckets = Json::array();
    for (const auto& b : rep.buckets)
      buckets.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"accuracy", b.accuracy}, {"gain", b.gain}});
    runs.push_back({{"seed", seed}, {"buckets", buckets}, {"overall", rep.overall}});
  }
  Json variants = Json::object();
  for (std::size_t v = 0; v < first.variants.size(); ++v) {
    Json buckets = Json::array();
    for (std::size_t b = 0; b < first.buckets.size(); ++b) {
      std::vector<double> acc, gain;
      for (const auto& [seed, rep] : per_seed) {
        acc.push_back(rep.buckets[b].accuracy[v]);
        gain.push_back(rep.buckets[b].gain[v]);
      }
      buckets.push_back({{"bucket", b + 1}, {"accuracy", mean_std(acc)}, {"gain", mean_std(gain)}});
    }
    std::vector<double> overall;
    for (const auto& [seed, rep] : per_seed) overall.push_back(rep.overall[v]);
    variants[first.variants[v]] = {{"buckets", buckets}, {"overall", mean_std(overall)}};
  }
  return {{"config_hash", config_hash}, {"seeds", seeds},          {"variants", first.variants},
          {"reference", first.variants.front()}, {"summary", variants}, {"runs", runs}};
}

}  // namespace pvmlab
