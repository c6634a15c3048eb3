#include "pvmlab/bench.h"

#include <algorithm>
#include <chrono>

#include "pvmlab/error.h"

namespace pvmlab {

Tpot tpot_from_timestamps(std::span<const double> timestamps_ms) {
  const std::size_t n = timestamps_ms.size();
  if (n < 2) fail("INVALID_ARGUMENT", "TPOT needs at least 2 timestamps, got " + std::to_string(n));
  const double tpot = (timestamps_ms.back() - timestamps_ms.front()) / static_cast<double>(n - 1);
  if (!(tpot > 0.0)) fail("INVALID_ARGUMENT", "timestamps must increase");
  return {tpot, 1000.0 / tpot};
}

namespace {

using Clock = std::chrono::steady_clock;

void check_decode_args(const Model& model, const Tensor& visual, std::span<const int> prompt, std::size_t n_tokens,
                       std::size_t warmup, std::size_t runs) {
  if (n_tokens < 2) fail("INVALID_ARGUMENT", "measure_decode: need at least 2 timed tokens");
  if (runs == 0) fail("INVALID_ARGUMENT", "measure_decode: runs must be positive");
  if (prompt.empty()) fail("INVALID_ARGUMENT", "measure_decode: empty prompt");
  if (visual.rows() + prompt.size() + warmup + n_tokens > model.config().max_seq_len)
    fail("SEQUENCE_OVERFLOW", "measure_decode: prompt + warmup + tokens exceed max_seq_len");
}

BenchReport empty_report(std::string variant, std::size_t n_tokens, std::size_t warmup) {
  BenchReport report;
  report.variant = std::move(variant);
  report.n_tokens = n_tokens;
  report.warmup = warmup;
  report.clock_tick_ns = 1e9 * static_cast<double>(Clock::period::num) / static_cast<double>(Clock::period::den);
  return report;
}

double timed_run(const Model& model, const Tensor& visual, std::span<const int> prompt, std::size_t n_tokens,
                 std::size_t warmup) {
  std::vector<double> stamps(n_tokens);
  SequenceState state = model.begin(visual);
  model.extend(state, prompt);
  generate(model, state, warmup, false);
  for (std::size_t i = 0; i < n_tokens; ++i) {
    const int token[1] = {static_cast<int>(argmax(state.last_logits))};
    model.extend(state, token);
    stamps[i] = std::chrono::duration<double, std::milli>(Clock::now().time_since_epoch()).count();
  }
  return tpot_from_timestamps(stamps).tpot_ms;
}

void summarize(BenchReport& report) {
  std::vector<double> sorted = report.run_tpot_ms;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  report.tpot_ms = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  report.throughput_tps = 1000.0 / report.tpot_ms;
  report.low_resolution = report.tpot_ms * 1e6 / report.clock_tick_ns < kMinTicksPerToken;
}

}  // namespace

BenchReport measure_decode(const Model& model, const Tensor& visual, std::span<const int> prompt,
                           std::size_t n_tokens, std::size_t warmup, std::size_t runs, std::string variant) {
  check_decode_args(model, visual, prompt, n_tokens, warmup, runs);
  BenchReport report = empty_report(std::move(variant), n_tokens, warmup);
  for (std::size_t r = 0; r < runs; ++r) report.run_tpot_ms.push_back(timed_run(model, visual, prompt, n_tokens, warmup));
  summarize(report);
  return report;
}

DecodeComparison compare_decode(const Model& base, const Model& pvm, const Tensor& visual, std::span<const int> prompt,
                                std::size_t n_tokens, std::size_t warmup, std::size_t runs, std::string base_variant,
                                std::string pvm_variant) {
  check_decode_args(base, visual, prompt, n_tokens, warmup, runs);
  check_decode_args(pvm, visual, prompt, n_tokens, warmup, runs);
  DecodeComparison out{empty_report(std::move(base_variant), n_tokens, warmup),
                       empty_report(std::move(pvm_variant), n_tokens, warmup)};
  for (std::size_t r = 0; r < runs; ++r) {
    out.base.run_tpot_ms.push_back(timed_run(base, visual, prompt, n_tokens, warmup));
    out.pvm.run_tpot_ms.push_back(timed_run(pvm, visual, prompt, n_tokens, warmup));
  }
  summarize(out.base);
  summarize(out.pvm);
  return out;
}

double overhead_percent(const BenchReport& base, const BenchReport& pvm) {
  return 100.0 * (pvm.tpot_ms - base.tpot_ms) / base.tpot_ms;
}

}  // namespace pvmlab
