#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pvmlab/model.h"
#include "pvmlab/optim.h"
#include "pvmlab/tensor.h"

namespace pvmlab {

// Token layout of the recall task:
//   [0, n_values)                  answer values
//   [n_values, n_values + n_slots) QUERY(k) for slot k
//   [n_values + n_slots, vocab)    distractors
struct TaskVocab {
  std::size_t n_slots = 16;
  std::size_t n_values = 16;
  std::size_t vocab_size = 64;

  static TaskVocab for_model(const ModelConfig& config);

  int query_token(std::size_t slot) const { return static_cast<int>(n_values + slot); }
  int distractor_base() const { return static_cast<int>(n_values + n_slots); }
  std::size_t n_distractors() const { return vocab_size - n_values - n_slots; }
  bool is_query(int token) const;
  void validate() const;
};

// Frozen stand-in for a vision encoder. Symbol (slot, value) maps to
// normalize(slot_code[slot] + value_code[value]), a unit-norm row, so the
// slot is recoverable from content alone.
class Codebook {
 public:
  Codebook(std::size_t n_slots, std::size_t n_values, std::size_t d_model, std::uint64_t seed);

  std::size_t n_symbols() const { return rows_.rows(); }
  std::size_t d_model() const { return rows_.cols(); }
  int symbol(std::size_t slot, std::size_t value) const { return static_cast<int>(slot * n_values_ + value); }
  std::size_t slot_of(int symbol) const { return static_cast<std::size_t>(symbol) / n_values_; }
  std::size_t value_of(int symbol) const { return static_cast<std::size_t>(symbol) % n_values_; }
  const Tensor& rows() const { return rows_; }
  double min_pairwise_distance() const;

 private:
  std::size_t n_values_;
  Tensor rows_;
};

// V_img[i] = codebook[symbols[i]] + N(0, noise_scale^2), deterministic in seed.
Tensor embed_visual(std::span<const int> symbols, const Codebook& codebook, double noise_scale, std::uint64_t seed);

struct EpisodeSpec {
  std::size_t text_length = 96;  // T, text tokens after the visual prefix
  double rho = 4.0;              // mean distractor run length between queries
  std::size_t query_start = 0;   // no query before this text index (distractors only)
  double noise_scale = 0.05;
  std::uint64_t seed = 0;
};

struct Episode {
  std::vector<int> symbols;          // one visual symbol per slot, slot i at prefix row i
  std::vector<int> tokens;           // text stream, length T
  std::vector<std::size_t> queries;  // text indices of QUERY tokens; the answer sits at index + 1
  std::vector<int> answers;          // value token expected after each query
  std::uint64_t visual_seed = 0;
};

Episode gen_episode(const EpisodeSpec& spec, const TaskVocab& vocab, const Codebook& codebook);
Tensor episode_visual(const Episode& episode, const Codebook& codebook, double noise_scale);

// Targets aligned to model output rows (visual prefix + text): the answer at
// every query row, -1 elsewhere. With `all_positions`, every text row also
// predicts its next token.
std::vector<int> episode_targets(const Episode& episode, std::size_t n_visual, bool all_positions = false);

struct TrainConfig {
  std::size_t steps = 1500;
  std::size_t episodes_per_step = 1;
  AdamConfig adam{};
  std::size_t warmup = 50;
  EpisodeSpec episode{};
  std::size_t min_text_length = 0;  // when nonzero, lengths are drawn from [min, episode.text_length]
  bool all_positions = false;
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> losses;  // one per optimizer step
  std::vector<double> grad_norms;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

// Trains every parameter of a model without PVM on the recall task.
TrainResult pretrain_baseline(Model& model, const Codebook& codebook, const TrainConfig& config,
                              const StepCallback& on_step = {});

struct Stage1Result {
  TrainResult train;
  std::string backbone_hash_before;
  std::string backbone_hash_after;
  std::vector<double> gates;  // per injected layer, ascending layer order
};

// Freezes the backbone and optimizes only the PVM parameters. Any change in
// backbone bytes raises FREEZE_VIOLATED.
Stage1Result train_pvm_stage1(Model& model, const Codebook& codebook, const TrainConfig& config,
                              const StepCallback& on_step = {});

// Mean cross-entropy at query rows over a fixed episode set.
double query_loss(const Model& model, const Codebook& codebook, std::span<const Episode> episodes,
                  double noise_scale);

// Anything that predicts the answer for each query of an episode.
class Answerer {
 public:
  virtual ~Answerer() = default;
  virtual std::vector<int> answer(const Episode& episode) const = 0;
};

class ModelAnswerer : public Answerer {
 public:
  ModelAnswerer(const Model& model, const Codebook& codebook, double noise_scale)
      : model_(model), codebook_(codebook), noise_scale_(noise_scale) {}
  std::vector<int> answer(const Episode& episode) const override;

 private:
  const Model& model_;
  const Codebook& codebook_;
  double noise_scale_;
};

// Reads the answer straight from the visual symbols.
class OracleAnswerer : public Answerer {
 public:
  OracleAnswerer(const TaskVocab& vocab, const Codebook& codebook) : vocab_(vocab), codebook_(codebook) {}
  std::vector<int> answer(const Episode& episode) const override;

 private:
  TaskVocab vocab_;
  const Codebook& codebook_;
};

struct Variant {
  std::string name;
  const Answerer* answerer = nullptr;
};

struct BucketResult {
  std::size_t lo = 0, hi = 0;  // inclusive query-distance range
  std::size_t count = 0;
  std::vector<double> accuracy;  // per variant
  std::vector<double> gain;      // per variant, relative to variant 0
};

struct RecallReport {
  std::vector<std::string> variants;
  std::vector<BucketResult> buckets;
  std::vector<double> overall;  // per variant
};

// Denominator floor for relative gains when the reference accuracy is ~0.
inline constexpr double kGainFloor = 0.05;
double relative_gain(double accuracy, double reference);

// Buckets all queries by distance t (the query is the t-th text token) into
// n_buckets equal-count groups. Variant 0 is the reference for gains.
RecallReport eval_by_length(std::span<const Variant> variants, std::span<const Episode> episodes,
                            std::size_t n_buckets = 4, std::size_t jobs = 1);

std::vector<Episode> make_episodes(std::size_t count, const EpisodeSpec& base, const TaskVocab& vocab,
                                   const Codebook& codebook, std::uint64_t seed, std::string_view stream);

}  // namespace pvmlab
