#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pvmlab/config.h"
#include "pvmlab/config_json.h"
#include "pvmlab/task.h"

namespace pvmlab {

struct EvalSettings {
  std::size_t episodes = 40;
  EpisodeSpec episode{384, 4.0, 0, 0.05, 0};
  std::size_t buckets = 4;
  std::size_t jobs = 1;
};

struct ProfileSettings {
  std::size_t steps = 512;
  std::string mode = "stress";  // stress | task
  std::vector<std::size_t> band;  // layers averaged for decay.json; empty = middle half
  double effective_window = 0.0;
};

struct BenchSettings {
  std::size_t prompt_tokens = 32;
  std::size_t tokens = 64;
  std::size_t warmup = 5;
  std::size_t runs = 5;
};

// Everything a CLI run needs. The root seed drives every stream: model init,
// codebook, pretraining data, stage-1 data, PVM init and evaluation episodes.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  ModelConfig model{};
  PvmConfig pvm{};
  TrainConfig pretrain{};
  TrainConfig stage1{};
  EvalSettings eval{};
  ProfileSettings profile{};
  BenchSettings bench{};

  // Toy model with the recall recipe that separates the variants.
  static RunConfig defaults();
  // Copies the root seed into model.seed and the per-phase data seeds.
  void resolve_seeds();
  void validate() const;
};

Json to_json(const RunConfig& config);
RunConfig run_config_from_json(const Json& j);

// YAML file <-> RunConfig. Missing keys keep their defaults.
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

Json yaml_text_to_json(const std::string& text);
std::string json_to_yaml_text(const Json& j);

// PVMLAB_SEED, when set to a non-negative integer.
std::optional<std::uint64_t> seed_from_env();

}  // namespace pvmlab
