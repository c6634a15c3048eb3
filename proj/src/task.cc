#include "pvmlab/task.h"

#include <algorithm>
#include <cmath>
#include <thread>

#include "pvmlab/checkpoint.h"
#include "pvmlab/error.h"
#include "pvmlab/rng.h"

namespace pvmlab {

TaskVocab TaskVocab::for_model(const ModelConfig& config) {
  TaskVocab v;
  v.n_slots = config.n_visual;
  v.n_values = config.n_visual;
  v.vocab_size = config.vocab_size;
  v.validate();
  return v;
}

bool TaskVocab::is_query(int token) const {
  return token >= static_cast<int>(n_values) && token < distractor_base();
}

void TaskVocab::validate() const {
  if (n_slots == 0 || n_values == 0) fail("CONFIG_INVALID", "task needs at least one slot and one value");
  if (vocab_size <= n_values + n_slots)
    fail("CONFIG_INVALID", "vocab_size " + std::to_string(vocab_size) + " leaves no distractor tokens after " +
                               std::to_string(n_values + n_slots) + " value/query tokens");
}

Codebook::Codebook(std::size_t n_slots, std::size_t n_values, std::size_t d_model, std::uint64_t seed)
    : n_values_(n_values) {
  if (n_slots == 0 || n_values == 0 || d_model == 0) fail("CONFIG_INVALID", "empty codebook");
  Rng rng = Rng::stream(seed, "codebook");
  const double sd = 1.0 / std::sqrt(static_cast<double>(d_model));
  std::vector<double> slot_codes(n_slots * d_model), value_codes(n_values * d_model);
  for (auto& x : slot_codes) x = rng.normal(0.0, sd);
  for (auto& x : value_codes) x = rng.normal(0.0, sd);
  std::vector<double> rows(n_slots * n_values * d_model);
  for (std::size_t s = 0; s < n_slots; ++s) {
    for (std::size_t v = 0; v < n_values; ++v) {
      double* row = rows.data() + (s * n_values + v) * d_model;
      double sq = 0.0;
      for (std::size_t j = 0; j < d_model; ++j) {
        row[j] = slot_codes[s * d_model + j] + value_codes[v * d_model + j];
        sq += row[j] * row[j];
      }
      const double inv = 1.0 / std::sqrt(sq);
      for (std::size_t j = 0; j < d_model; ++j) row[j] *= inv;
    }
  }
  rows_ = Tensor({n_slots * n_values, d_model}, std::move(rows));
}

double Codebook::min_pairwise_distance() const {
  const std::size_t n = rows_.rows(), d = rows_.cols();
  auto data = rows_.data();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = data[a * d + j] - data[b * d + j];
        sq += diff * diff;
      }
      best = std::min(best, std::sqrt(sq));
    }
  }
  return best;
}

Tensor embed_visual(std::span<const int> symbols, const Codebook& codebook, double noise_scale, std::uint64_t seed) {
  if (symbols.empty()) fail("INVALID_ARGUMENT", "embed_visual: no symbols");
  if (noise_scale < 0.0) fail("INVALID_ARGUMENT", "embed_visual: negative noise scale");
  const std::size_t d = codebook.d_model();
  Rng rng(seed);
  std::vector<double> out(symbols.size() * d);
  auto rows = codebook.rows().data();
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const int s = symbols[i];
    if (s < 0 || static_cast<std::size_t>(s) >= codebook.n_symbols())
      fail("UNKNOWN_SYMBOL", "symbol id " + std::to_string(s) + " outside codebook of " +
                                 std::to_string(codebook.n_symbols()));
    for (std::size_t j = 0; j < d; ++j) {
      const double noise = noise_scale > 0.0 ? rng.normal(0.0, noise_scale) : 0.0;
      out[i * d + j] = rows[static_cast<std::size_t>(s) * d + j] + noise;
    }
  }
  return Tensor({symbols.size(), d}, std::move(out));
}

Episode gen_episode(const EpisodeSpec& spec, const TaskVocab& vocab, const Codebook& codebook) {
  vocab.validate();
  if (spec.text_length < 2) fail("INVALID_ARGUMENT", "episode text length must be >= 2");
  if (spec.rho < 0.0) fail("INVALID_ARGUMENT", "rho must be non-negative");
  Rng rng(spec.seed);
  Episode ep;
  std::vector<int> values(vocab.n_slots);
  for (std::size_t s = 0; s < vocab.n_slots; ++s) {
    values[s] = rng.uniform_int(0, static_cast<int>(vocab.n_values) - 1);
    ep.symbols.push_back(codebook.symbol(s, static_cast<std::size_t>(values[s])));
  }
  ep.visual_seed = rng.next_u64();
  const double p = 1.0 / (1.0 + spec.rho);
  const int last_distractor = static_cast<int>(vocab.n_distractors()) - 1;
  const std::size_t T = spec.text_length;
  if (spec.query_start >= T) fail("INVALID_ARGUMENT", "query_start must be below the text length");
  while (ep.tokens.size() < spec.query_start)
    ep.tokens.push_back(vocab.distractor_base() + rng.uniform_int(0, last_distractor));
  while (ep.tokens.size() < T) {
    std::size_t run = static_cast<std::size_t>(rng.geometric(p));
    run = std::min(run, T - ep.tokens.size());
    for (std::size_t i = 0; i < run; ++i) ep.tokens.push_back(vocab.distractor_base() + rng.uniform_int(0, last_distractor));
    if (ep.tokens.size() + 2 > T) {
      while (ep.tokens.size() < T) ep.tokens.push_back(vocab.distractor_base() + rng.uniform_int(0, last_distractor));
      break;
    }
    const auto k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(vocab.n_slots) - 1));
    ep.queries.push_back(ep.tokens.size());
    ep.tokens.push_back(vocab.query_token(k));
    ep.answers.push_back(values[k]);
    ep.tokens.push_back(values[k]);
  }
  return ep;
}

Tensor episode_visual(const Episode& episode, const Codebook& codebook, double noise_scale) {
  return embed_visual(episode.symbols, codebook, noise_scale, episode.visual_seed);
}

std::vector<int> episode_targets(const Episode& episode, std::size_t n_visual, bool all_positions) {
  const std::size_t T = episode.tokens.size();
  std::vector<int> targets(n_visual + T, -1);
  if (all_positions)
    for (std::size_t i = 0; i + 1 < T; ++i) targets[n_visual + i] = episode.tokens[i + 1];
  for (std::size_t q = 0; q < episode.queries.size(); ++q) targets[n_visual + episode.queries[q]] = episode.answers[q];
  return targets;
}

namespace {

TrainResult train_loop(Model& model, const Codebook& codebook, const TrainConfig& config,
                       const StepCallback& on_step) {
  const TaskVocab vocab = TaskVocab::for_model(model.config());
  const std::size_t M = model.config().n_visual;
  if (config.episodes_per_step == 0) fail("CONFIG_INVALID", "episodes_per_step must be >= 1");
  if (config.episode.text_length + M > model.config().max_seq_len)
    fail("SEQUENCE_OVERFLOW", "training episodes do not fit max_seq_len");
  Rng data = Rng::stream(config.seed, "data");
  Adam adam(config.adam);
  TrainResult result;
  const double inv_batch = 1.0 / static_cast<double>(config.episodes_per_step);
  for (std::size_t step = 0; step < config.steps; ++step) {
    double step_loss = 0.0;
    for (std::size_t b = 0; b < config.episodes_per_step; ++b) {
      EpisodeSpec spec = config.episode;
      spec.seed = data.next_u64();
      if (config.min_text_length > 0)
        spec.text_length = static_cast<std::size_t>(
            data.uniform_int(static_cast<int>(config.min_text_length), static_cast<int>(config.episode.text_length)));
      const Episode ep = gen_episode(spec, vocab, codebook);
      const Tensor visual = episode_visual(ep, codebook, spec.noise_scale);
      const std::vector<int> targets = episode_targets(ep, M, config.all_positions);
      Tape tape;
      TapeScope scope(tape);
      ForwardOutput out = model.forward(visual, ep.tokens);
      Tensor loss = ops::cross_entropy(out.logits, targets);
      if (!std::isfinite(loss.item()))
        throw Error(ErrorKind::kNumeric, "NAN_DETECTED",
                    "training loss became non-finite at step " + std::to_string(step));
      step_loss += loss.item() * inv_batch;
      if (loss.requires_grad()) tape.backward(ops::scale(loss, inv_batch));
    }
    const double lr = cosine_lr(step, config.steps, config.adam.lr, config.warmup);
    result.grad_norms.push_back(adam.step(model.params(), lr));
    result.losses.push_back(step_loss);
    if (on_step) on_step(step, step_loss);
  }
  return result;
}

}  // namespace

TrainResult pretrain_baseline(Model& model, const Codebook& codebook, const TrainConfig& config,
                              const StepCallback& on_step) {
  if (model.pvm_config()) fail("PVM_ATTACHED", "pretraining expects a model without PVM adapters");
  model.set_backbone_trainable(true);
  return train_loop(model, codebook, config, on_step);
}

Stage1Result train_pvm_stage1(Model& model, const Codebook& codebook, const TrainConfig& config,
                              const StepCallback& on_step) {
  if (!model.pvm_config()) fail("PVM_NOT_ATTACHED", "stage-1 training needs PVM adapters");
  Stage1Result result;
  model.set_backbone_trainable(false);
  model.set_pvm_trainable(true);
  result.backbone_hash_before = backbone_hash(model.params());
  result.train = train_loop(model, codebook, config, on_step);
  result.backbone_hash_after = backbone_hash(model.params());
  model.set_backbone_trainable(true);
  if (result.backbone_hash_after != result.backbone_hash_before)
    throw Error(ErrorKind::kNumeric, "FREEZE_VIOLATED", "backbone parameters changed during stage-1 training");
  for (auto layer : model.pvm_config()->injection_layers) result.gates.push_back(model.adapter(layer)->gate().item());
  return result;
}

double query_loss(const Model& model, const Codebook& codebook, std::span<const Episode> episodes,
                  double noise_scale) {
  NoGradScope no_grad;
  const std::size_t M = model.config().n_visual;
  double total = 0.0;
  std::size_t count = 0;
  for (const Episode& ep : episodes) {
    if (ep.queries.empty()) continue;
    ForwardOutput out = model.forward(episode_visual(ep, codebook, noise_scale), ep.tokens);
    total += ops::cross_entropy(out.logits, episode_targets(ep, M)).item() * static_cast<double>(ep.queries.size());
    count += ep.queries.size();
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

std::vector<int> ModelAnswerer::answer(const Episode& episode) const {
  NoGradScope no_grad;
  const std::size_t M = model_.config().n_visual;
  if (episode.queries.empty()) return {};
  // Rows past the last query cannot influence it.
  const std::size_t used = episode.queries.back() + 1;
  ForwardOutput out = model_.forward(episode_visual(episode, codebook_, noise_scale_),
                                     std::span<const int>(episode.tokens).first(used));
  const std::size_t V = out.logits.cols();
  std::vector<int> preds;
  preds.reserve(episode.queries.size());
  for (std::size_t q : episode.queries)
    preds.push_back(static_cast<int>(argmax(out.logits.data().subspan((M + q) * V, V))));
  return preds;
}

std::vector<int> OracleAnswerer::answer(const Episode& episode) const {
  std::vector<int> preds;
  for (std::size_t q : episode.queries) {
    const auto slot = static_cast<std::size_t>(episode.tokens[q]) - vocab_.n_values;
    preds.push_back(static_cast<int>(codebook_.value_of(episode.symbols.at(slot))));
  }
  return preds;
}

double relative_gain(double accuracy, double reference) {
  return (accuracy - reference) / std::max(reference, kGainFloor);
}

RecallReport eval_by_length(std::span<const Variant> variants, std::span<const Episode> episodes,
                            std::size_t n_buckets, std::size_t jobs) {
  if (variants.empty()) fail("INVALID_ARGUMENT", "eval_by_length: no variants");
  if (n_buckets == 0) fail("INVALID_ARGUMENT", "eval_by_length: n_buckets must be >= 1");
  if (episodes.size() < n_buckets)
    fail("TOO_FEW_EPISODES", "eval_by_length: " + std::to_string(episodes.size()) + " episodes for " +
                                 std::to_string(n_buckets) + " buckets");
  const std::size_t nv = variants.size();
  // preds[e][v] = predictions of variant v on episode e.
  std::vector<std::vector<std::vector<int>>> preds(episodes.size(), std::vector<std::vector<int>>(nv));
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t e = begin; e < episodes.size(); e += stride)
      for (std::size_t v = 0; v < nv; ++v) preds[e][v] = variants[v].answerer->answer(episodes[e]);
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, episodes.size()));
  if (jobs == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(work, j, jobs);
  }

  struct Sample {
    std::size_t distance;
    std::vector<bool> correct;
  };
  std::vector<Sample> samples;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const Episode& ep = episodes[e];
    for (std::size_t q = 0; q < ep.queries.size(); ++q) {
      Sample s{ep.queries[q] + 1, std::vector<bool>(nv)};
      for (std::size_t v = 0; v < nv; ++v) {
        if (preds[e][v].size() != ep.queries.size())
          fail("INVALID_ARGUMENT", "variant " + variants[v].name + " returned the wrong number of answers");
        s.correct[v] = preds[e][v][q] == ep.answers[q];
      }
      samples.push_back(std::move(s));
    }
  }
  if (samples.size() < n_buckets) fail("TOO_FEW_EPISODES", "fewer queries than buckets");
  std::stable_sort(samples.begin(), samples.end(),
                   [](const Sample& a, const Sample& b) { return a.distance < b.distance; });

  RecallReport report;
  for (const auto& v : variants) report.variants.push_back(v.name);
  report.overall.assign(nv, 0.0);
  const std::size_t n = samples.size();
  for (std::size_t b = 0; b < n_buckets; ++b) {
    const std::size_t lo = b * n / n_buckets, hi = (b + 1) * n / n_buckets;
    BucketResult br;
    br.lo = samples[lo].distance;
    br.hi = samples[hi - 1].distance;
    br.count = hi - lo;
    br.accuracy.assign(nv, 0.0);
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t v = 0; v < nv; ++v) br.accuracy[v] += samples[i].correct[v] ? 1.0 : 0.0;
    for (std::size_t v = 0; v < nv; ++v) {
      report.overall[v] += br.accuracy[v];
      br.accuracy[v] /= static_cast<double>(br.count);
    }
    for (std::size_t v = 0; v < nv; ++v) br.gain.push_back(relative_gain(br.accuracy[v], br.accuracy[0]));
    report.buckets.push_back(std::move(br));
  }
  for (auto& a : report.overall) a /= static_cast<double>(n);
  return report;
}

std::vector<Episode> make_episodes(std::size_t count, const EpisodeSpec& base, const TaskVocab& vocab,
                                   const Codebook& codebook, std::uint64_t seed, std::string_view stream) {
  Rng rng = Rng::stream(seed, stream);
  std::vector<Episode> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    EpisodeSpec spec = base;
    spec.seed = rng.next_u64();
    out.push_back(gen_episode(spec, vocab, codebook));
  }
  return out;
}

}  // namespace pvmlab
