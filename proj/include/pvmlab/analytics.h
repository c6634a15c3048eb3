#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pvmlab/tensor.h"
#include "pvmlab/trace.h"

namespace pvmlab {

// Upper bound on the visual mass when every visual score is <= s_max and the
// mean unnormalized textual mass per token is >= mu:
//   beta / (beta + mu * t),  beta = M * exp(s_max).
double dilution_bound(std::size_t n_visual, double s_max, double mu, double t);

struct PowerLawFit {
  double slope = 0.0;      // d log(y) / d log(t)
  double intercept = 0.0;  // log(y) at t = 1
  double r2 = 0.0;
  std::size_t points = 0;
};

// Least-squares fit of log(y) against log(t) over points with t in [t_lo, t_hi].
PowerLawFit fit_power_law(std::span<const double> t, std::span<const double> y, double t_lo, double t_hi);

inline constexpr std::size_t kPhaseWindow = 25;
inline constexpr double kPhaseSlopeFraction = 0.05;

struct PhaseSplit {
  double early_slope = 0.0;
  // Growth regime [phase1_begin, phase1_end) in step units; empty when the
  // series never grows.
  double phase1_begin = 0.0, phase1_end = 0.0;
  bool phase1_empty = true;
  std::optional<double> plateau;   // mean value after the change point
  std::optional<double> boundary;  // step at which the plateau starts
};

// Change point on the rolling least-squares slope (window `window` points):
// the first window whose slope drops below `fraction` of the first window's.
PhaseSplit detect_phases(std::span<const double> steps, std::span<const double> values,
                         std::size_t window = kPhaseWindow, double fraction = kPhaseSlopeFraction);

// One (step, value) series per step, averaged over heads and the given layers.
struct StepSeries {
  std::vector<double> steps;
  std::vector<double> omega;
  std::vector<double> tvr;
  std::vector<double> z_text;
};
StepSeries step_series(std::span<const AttentionTrace> traces, std::span<const std::size_t> layers);

struct DecayAnalysis {
  std::vector<std::size_t> layers;  // band the series was averaged over
  std::size_t n_visual = 0;
  double s_max = 0.0;
  double beta = 0.0;
  double mu = 0.0;           // min over the window of Z_T(t) / t
  double t_lo = 0.0, t_hi = 0.0;
  double loglog_slope = 0.0;
  double fit_r2 = 0.0;
  PhaseSplit phases;
  std::size_t bound_violations = 0;  // reported only; the premise need not hold
  double effective_window = 0.0;     // configured constant, reported as-is
};

// Fits the visual-mass decay over the growth window of the TVR series (the
// whole series when no growth window is found).
DecayAnalysis analyze_decay(std::span<const AttentionTrace> traces, std::span<const std::size_t> layers,
                            std::size_t n_visual, double s_max, double effective_window = 0.0);

struct LogitLensTrace {
  std::size_t layer = 0;
  double kl = 0.0;  // mean KL(P_final || P_layer) in nats over probed rows
};

// P_layer = softmax(readout(h_layer)) where readout applies `final_norm` (when
// non-null) and then the unembedding. Rows are selected after the readout, so
// the last layer reproduces `final_logits` bit for bit when they came from the
// same readout.
std::vector<LogitLensTrace> logitlens_probe(std::span<const Tensor> hidden, const Tensor& unembed,
                                            const Tensor* final_norm, const Tensor& final_logits,
                                            std::span<const std::size_t> rows);

struct Heatmap {
  std::vector<std::size_t> layers;
  std::vector<std::size_t> steps;
  std::vector<double> values;  // layers x steps, head-averaged omega
  double at(std::size_t li, std::size_t si) const { return values[li * steps.size() + si]; }
};

// Rejects traces that do not cover every (layer, step) pair with the same heads.
Heatmap export_heatmap(std::span<const AttentionTrace> traces);

// Mean omega per layer over all steps and heads.
std::vector<double> layer_profile(std::span<const AttentionTrace> traces, std::size_t n_layers);

// CSV I/O, doubles with 17 significant digits.
std::string format_double(double v);
void write_traces_csv(const std::filesystem::path& path, std::span<const AttentionTrace> traces);
std::vector<AttentionTrace> read_traces_csv(const std::filesystem::path& path);
void write_heatmap_csv(const std::filesystem::path& path, const Heatmap& heatmap);
Heatmap read_heatmap_csv(const std::filesystem::path& path);
void write_logitlens_csv(const std::filesystem::path& path, std::span<const LogitLensTrace> rows);
std::vector<LogitLensTrace> read_logitlens_csv(const std::filesystem::path& path);

}  // namespace pvmlab
