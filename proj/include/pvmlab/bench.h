#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pvmlab/model.h"

namespace pvmlab {

inline constexpr std::size_t kBenchWarmupTokens = 5;
inline constexpr std::size_t kBenchRuns = 5;
inline constexpr double kMinTicksPerToken = 10.0;

struct Tpot {
  double tpot_ms = 0.0;
  double throughput_tps = 0.0;
};

// (t_N - t_1) / (N - 1) over emission timestamps in milliseconds; N >= 2.
Tpot tpot_from_timestamps(std::span<const double> timestamps_ms);

struct BenchReport {
  std::string variant;
  std::size_t n_tokens = 0;
  std::size_t warmup = 0;
  std::vector<double> run_tpot_ms;  // one per run
  double tpot_ms = 0.0;             // median over runs
  double throughput_tps = 0.0;
  double clock_tick_ns = 0.0;
  bool low_resolution = false;  // fewer than kMinTicksPerToken clock ticks per token
};

// Greedy decoding with the KV cache after a prefill of `prompt` (not timed).
// Each run decodes `warmup` untimed tokens, then stamps every one of the next
// n_tokens emissions with steady_clock.
BenchReport measure_decode(const Model& model, const Tensor& visual, std::span<const int> prompt,
                           std::size_t n_tokens, std::size_t warmup = kBenchWarmupTokens,
                           std::size_t runs = kBenchRuns, std::string variant = "baseline");

struct DecodeComparison {
  BenchReport base;
  BenchReport pvm;
};

// Same protocol as measure_decode for two models, alternating base and pvm
// runs so slow drift in machine speed hits both equally.
DecodeComparison compare_decode(const Model& base, const Model& pvm, const Tensor& visual, std::span<const int> prompt,
                                std::size_t n_tokens, std::size_t warmup = kBenchWarmupTokens,
                                std::size_t runs = kBenchRuns, std::string base_variant = "baseline",
                                std::string pvm_variant = "pvm");

// (pvm - base) / base in percent.
double overhead_percent(const BenchReport& base, const BenchReport& pvm);

}  // namespace pvmlab
