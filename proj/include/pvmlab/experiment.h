#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pvmlab/analytics.h"
#include "pvmlab/model.h"
#include "pvmlab/run_config.h"
#include "pvmlab/task.h"

namespace pvmlab {

// Workflow steps shared by the CLI and the acceptance suite. All randomness
// derives from RunConfig::seed.

Codebook make_codebook(const RunConfig& run);

Model run_pretrain(const RunConfig& run, const Codebook& codebook, TrainResult* result = nullptr,
                   const StepCallback& on_step = {});

// Copy of `base` with a fresh PVM (gate at its configured init).
Model with_pvm(const Model& base, const RunConfig& run, const PvmConfig& pvm);

std::vector<Episode> eval_episodes(const RunConfig& run, const Codebook& codebook);

// Layers [L/4, 3L/4) unless the run names a band.
std::vector<std::size_t> analysis_band(const RunConfig& run, std::size_t n_layers);

// Visual prefix and prompt for decode benchmarks (bench.prompt_tokens text tokens).
struct BenchInputs {
  Tensor visual;
  std::vector<int> prompt;
};
BenchInputs bench_inputs(const RunConfig& run, const Codebook& codebook);

struct ProfileRun {
  std::vector<AttentionTrace> traces;
  std::vector<int> tokens;  // text stream the traces were taken on
  double s_max = 0.0;       // largest raw visual score seen in `band`
};

// stress: greedy generation of `steps` tokens after a single QUERY prompt.
// task: teacher-forced pass over a recall episode of `steps` text tokens.
ProfileRun profile_model(const Model& model, const Codebook& codebook, const RunConfig& run, std::size_t steps,
                         const std::string& mode, std::span<const std::size_t> band);

// Mean KL(P_final || P_layer) per layer over the query rows of `episodes`.
std::vector<LogitLensTrace> logitlens_on_episodes(const Model& model, const Codebook& codebook,
                                                  std::span<const Episode> episodes, double noise_scale);

// Pretrains a baseline for run.seed, trains one PVM per variant on top of it
// and evaluates all of them on the same episodes (baseline is variant 0).
struct SeedStudy {
  std::uint64_t seed = 0;
  Model baseline;
  std::vector<std::pair<std::string, Model>> variants;
  std::vector<std::vector<double>> gates;  // per variant, after stage 1
  RecallReport report;
};

using ProgressLog = std::function<void(const std::string& line)>;

SeedStudy run_seed_study(const RunConfig& run, std::span<const PvmVariant> variants, const ProgressLog& log = {});

// report.json body: per-seed buckets plus mean and stddev across seeds.
Json recall_report_json(std::span<const std::pair<std::uint64_t, RecallReport>> per_seed, const std::string& config_hash);

}  // namespace pvmlab
