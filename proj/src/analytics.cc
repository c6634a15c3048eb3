#include "pvmlab/analytics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "pvmlab/error.h"
#include "pvmlab/ops.h"

namespace pvmlab {

namespace fs = std::filesystem;

double dilution_bound(std::size_t n_visual, double s_max, double mu, double t) {
  if (!(mu > 0.0)) fail("PREMISE_VIOLATED", "textual mass floor mu must be positive, got " + format_double(mu));
  if (!(t >= 1.0)) fail("INVALID_ARGUMENT", "t must be >= 1");
  if (n_visual == 0) fail("INVALID_ARGUMENT", "need at least one visual token");
  const double beta = static_cast<double>(n_visual) * std::exp(s_max);
  return beta / (beta + mu * t);
}

namespace {

struct LineFit {
  double slope = 0.0, intercept = 0.0, r2 = 0.0;
};

LineFit least_squares(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LineFit f;
  f.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return f;
}

void require_same_length(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size())
    fail("SHAPE_MISMATCH", std::string(what) + ": " + std::to_string(a.size()) + " steps vs " +
                               std::to_string(b.size()) + " values");
}

}  // namespace

PowerLawFit fit_power_law(std::span<const double> t, std::span<const double> y, double t_lo, double t_hi) {
  require_same_length(t, y, "fit_power_law");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < t_lo || t[i] > t_hi) continue;
    if (!(t[i] > 0.0) || !(y[i] > 0.0))
      fail("DEGENERATE_WINDOW", "fit_power_law: non-positive value at t=" + format_double(t[i]));
    lx.push_back(std::log(t[i]));
    ly.push_back(std::log(y[i]));
  }
  if (lx.size() < 10)
    fail("DEGENERATE_WINDOW", "fit_power_law: " + std::to_string(lx.size()) + " points in window, need >= 10");
  const LineFit f = least_squares(lx, ly);
  return {f.slope, f.intercept, f.r2, lx.size()};
}

PhaseSplit detect_phases(std::span<const double> steps, std::span<const double> values, std::size_t window,
                         double fraction) {
  require_same_length(steps, values, "detect_phases");
  if (window < 2) fail("INVALID_ARGUMENT", "detect_phases: window must be >= 2");
  if (values.size() < 50 || values.size() < 2 * window)
    fail("SERIES_TOO_SHORT", "detect_phases: need >= 50 points and two windows, got " + std::to_string(values.size()));
  const std::size_t n_windows = values.size() - window + 1;
  std::vector<double> slopes(n_windows);
  for (std::size_t i = 0; i < n_windows; ++i)
    slopes[i] = least_squares(steps.subspan(i, window), values.subspan(i, window)).slope;

  PhaseSplit out;
  out.early_slope = slopes[0];
  double scale = 0.0;
  for (double v : values) scale = std::max(scale, std::abs(v));
  const double span = steps.back() - steps.front();
  auto mean_from = [&](std::size_t i) {
    double s = 0.0;
    for (std::size_t k = i; k < values.size(); ++k) s += values[k];
    return s / static_cast<double>(values.size() - i);
  };
  // A series whose early slope would move it by less than 1e-9 of its scale
  // over the whole range has no growth regime.
  if (std::abs(out.early_slope) * std::max(span, 1.0) <= 1e-9 * std::max(scale, 1e-300)) {
    out.phase1_begin = out.phase1_end = steps.front();
    out.plateau = mean_from(0);
    out.boundary = steps.front();
    return out;
  }
  const double sign = out.early_slope > 0.0 ? 1.0 : -1.0;
  const double threshold = fraction * std::abs(out.early_slope);
  out.phase1_empty = false;
  out.phase1_begin = steps.front();
  for (std::size_t i = 1; i < n_windows; ++i) {
    if (sign * slopes[i] < threshold) {
      out.phase1_end = steps[i];
      out.boundary = steps[i];
      out.plateau = mean_from(i);
      return out;
    }
  }
  out.phase1_end = steps.back();
  return out;
}

StepSeries step_series(std::span<const AttentionTrace> traces, std::span<const std::size_t> layers) {
  struct Acc {
    double omega = 0.0, tvr = 0.0, z_text = 0.0;
    std::size_t n = 0;
  };
  std::map<std::size_t, Acc> by_step;
  for (const auto& tr : traces) {
    if (!layers.empty() && std::find(layers.begin(), layers.end(), tr.layer) == layers.end()) continue;
    Acc& a = by_step[tr.step];
    a.omega += tr.omega;
    a.tvr += tr.tvr;
    a.z_text += tr.z_t;
    ++a.n;
  }
  StepSeries s;
  for (const auto& [step, a] : by_step) {
    const double n = static_cast<double>(a.n);
    s.steps.push_back(static_cast<double>(step));
    s.omega.push_back(a.omega / n);
    s.tvr.push_back(a.tvr / n);
    s.z_text.push_back(a.z_text / n);
  }
  return s;
}

DecayAnalysis analyze_decay(std::span<const AttentionTrace> traces, std::span<const std::size_t> layers,
                            std::size_t n_visual, double s_max, double effective_window) {
  DecayAnalysis out;
  out.layers.assign(layers.begin(), layers.end());
  out.n_visual = n_visual;
  out.s_max = s_max;
  out.beta = static_cast<double>(n_visual) * std::exp(s_max);
  out.effective_window = effective_window;
  const StepSeries s = step_series(traces, layers);
  if (s.steps.size() < 10) fail("DEGENERATE_WINDOW", "analyze_decay: fewer than 10 steps traced");

  out.t_lo = s.steps.front();
  out.t_hi = s.steps.back();
  if (s.steps.size() >= 50) {
    out.phases = detect_phases(s.steps, s.tvr);
    if (!out.phases.phase1_empty) {
      const auto in_window = std::count_if(s.steps.begin(), s.steps.end(), [&](double t) {
        return t >= out.phases.phase1_begin && t <= out.phases.phase1_end;
      });
      if (in_window >= 10) {
        out.t_lo = out.phases.phase1_begin;
        out.t_hi = out.phases.phase1_end;
      }
    }
  }
  const PowerLawFit fit = fit_power_law(s.steps, s.omega, out.t_lo, out.t_hi);
  out.loglog_slope = fit.slope;
  out.fit_r2 = fit.r2;

  out.mu = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < s.steps.size(); ++i)
    if (s.steps[i] >= out.t_lo && s.steps[i] <= out.t_hi) out.mu = std::min(out.mu, s.z_text[i] / s.steps[i]);
  if (out.mu > 0.0 && std::isfinite(out.mu)) {
    for (std::size_t i = 0; i < s.steps.size(); ++i)
      if (s.steps[i] >= out.t_lo && s.steps[i] <= out.t_hi &&
          s.omega[i] > dilution_bound(n_visual, s_max, out.mu, s.steps[i]))
        ++out.bound_violations;
  }
  return out;
}

std::vector<LogitLensTrace> logitlens_probe(std::span<const Tensor> hidden, const Tensor& unembed,
                                            const Tensor* final_norm, const Tensor& final_logits,
                                            std::span<const std::size_t> rows) {
  if (hidden.empty()) fail("INVALID_ARGUMENT", "logitlens_probe: no hidden states");
  if (rows.empty()) fail("INVALID_ARGUMENT", "logitlens_probe: no rows to probe");
  NoGradScope no_grad;
  const std::size_t V = final_logits.cols();
  for (auto r : rows)
    if (r >= final_logits.rows()) fail("INDEX_OUT_OF_RANGE", "logitlens_probe: row " + std::to_string(r) + " out of range");
  std::vector<std::vector<double>> p_final;
  for (auto r : rows) p_final.push_back(softmax(final_logits.data().subspan(r * V, V)));

  std::vector<LogitLensTrace> out;
  const Tensor e_t = ops::transpose(unembed);
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    const Tensor h = final_norm ? ops::rmsnorm(hidden[l], *final_norm) : hidden[l];
    const Tensor logits = ops::matmul(h, e_t);
    if (logits.cols() != V) fail("SHAPE_MISMATCH", "logitlens_probe: unembedding does not match final logits");
    double total = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto p_layer = softmax(logits.data().subspan(rows[i] * V, V));
      total += kl_divergence(p_final[i], p_layer);
    }
    out.push_back({l, total / static_cast<double>(rows.size())});
  }
  return out;
}

Heatmap export_heatmap(std::span<const AttentionTrace> traces) {
  Heatmap hm;
  if (traces.empty()) return hm;
  std::map<std::pair<std::size_t, std::size_t>, std::pair<double, std::size_t>> cells;
  std::map<std::size_t, int> layer_set, step_set;
  for (const auto& tr : traces) {
    auto& c = cells[{tr.layer, tr.step}];
    c.first += tr.omega;
    ++c.second;
    layer_set[tr.layer];
    step_set[tr.step];
  }
  for (auto& [l, _] : layer_set) hm.layers.push_back(l);
  for (auto& [s, _] : step_set) hm.steps.push_back(s);
  const std::size_t heads = cells.begin()->second.second;
  if (cells.size() != hm.layers.size() * hm.steps.size())
    fail("RAGGED_GRID", "traces cover " + std::to_string(cells.size()) + " of " +
                            std::to_string(hm.layers.size() * hm.steps.size()) + " (layer, step) cells");
  for (std::size_t l : hm.layers) {
    for (std::size_t s : hm.steps) {
      const auto& c = cells.at({l, s});
      if (c.second != heads)
        fail("RAGGED_GRID", "cell (layer " + std::to_string(l) + ", step " + std::to_string(s) + ") has " +
                                std::to_string(c.second) + " heads, expected " + std::to_string(heads));
      hm.values.push_back(c.first / static_cast<double>(c.second));
    }
  }
  return hm;
}

std::vector<double> layer_profile(std::span<const AttentionTrace> traces, std::size_t n_layers) {
  std::vector<double> sum(n_layers, 0.0);
  std::vector<std::size_t> count(n_layers, 0);
  for (const auto& tr : traces) {
    if (tr.layer >= n_layers) fail("INDEX_OUT_OF_RANGE", "trace layer " + std::to_string(tr.layer) + " >= n_layers");
    sum[tr.layer] += tr.omega;
    ++count[tr.layer];
  }
  for (std::size_t l = 0; l < n_layers; ++l) {
    if (count[l] == 0) fail("RAGGED_GRID", "no traces for layer " + std::to_string(l));
    sum[l] /= static_cast<double>(count[l]);
  }
  return sum;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "WRITE_FAILED", "cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "FILE_NOT_FOUND", "cannot open " + path.string());
  return in;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

double parse_double(const std::string& s, const fs::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::kIo, "CSV_PARSE", "bad number '" + s + "' in " + path.string());
  }
}

std::size_t parse_index(const std::string& s, const fs::path& path) {
  const double v = parse_double(s, path);
  if (v < 0 || v != std::floor(v)) throw Error(ErrorKind::kIo, "CSV_PARSE", "bad index '" + s + "' in " + path.string());
  return static_cast<std::size_t>(v);
}

void expect_header(std::ifstream& in, const std::string& header, const fs::path& path) {
  std::string line;
  if (!std::getline(in, line) || line != header)
    throw Error(ErrorKind::kIo, "CSV_PARSE", path.string() + ": expected header '" + header + "'");
}

constexpr const char* kTraceHeader = "step,layer,head,z_v,z_t,omega,tvr";
constexpr const char* kLogitLensHeader = "layer,kl_nats";

}  // namespace

void write_traces_csv(const fs::path& path, std::span<const AttentionTrace> traces) {
  auto out = open_out(path);
  out << kTraceHeader << '\n';
  for (const auto& t : traces)
    out << t.step << ',' << t.layer << ',' << t.head << ',' << format_double(t.z_v) << ',' << format_double(t.z_t)
        << ',' << format_double(t.omega) << ',' << format_double(t.tvr) << '\n';
}

std::vector<AttentionTrace> read_traces_csv(const fs::path& path) {
  auto in = open_in(path);
  expect_header(in, kTraceHeader, path);
  std::vector<AttentionTrace> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 7) throw Error(ErrorKind::kIo, "CSV_PARSE", path.string() + ": expected 7 columns: " + line);
    out.push_back({parse_index(c[0], path), parse_index(c[1], path), parse_index(c[2], path), parse_double(c[3], path),
                   parse_double(c[4], path), parse_double(c[5], path), parse_double(c[6], path)});
  }
  return out;
}

void write_heatmap_csv(const fs::path& path, const Heatmap& heatmap) {
  auto out = open_out(path);
  out << "layer";
  for (auto s : heatmap.steps) out << ',' << s;
  out << '\n';
  for (std::size_t li = 0; li < heatmap.layers.size(); ++li) {
    out << heatmap.layers[li];
    for (std::size_t si = 0; si < heatmap.steps.size(); ++si) out << ',' << format_double(heatmap.at(li, si));
    out << '\n';
  }
}

Heatmap read_heatmap_csv(const fs::path& path) {
  auto in = open_in(path);
  Heatmap hm;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kIo, "CSV_PARSE", path.string() + ": empty file");
  auto header = split_csv(line);
  if (header.empty() || header[0] != "layer") throw Error(ErrorKind::kIo, "CSV_PARSE", path.string() + ": bad header");
  for (std::size_t i = 1; i < header.size(); ++i) hm.steps.push_back(parse_index(header[i], path));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != hm.steps.size() + 1) throw Error(ErrorKind::kIo, "CSV_PARSE", path.string() + ": ragged row");
    hm.layers.push_back(parse_index(c[0], path));
    for (std::size_t i = 1; i < c.size(); ++i) hm.values.push_back(parse_double(c[i], path));
  }
  return hm;
}

void write_logitlens_csv(const fs::path& path, std::span<const LogitLensTrace> rows) {
  auto out = open_out(path);
  out << kLogitLensHeader << '\n';
  for (const auto& r : rows) out << r.layer << ',' << format_double(r.kl) << '\n';
}

std::vector<LogitLensTrace> read_logitlens_csv(const fs::path& path) {
  auto in = open_in(path);
  expect_header(in, kLogitLensHeader, path);
  std::vector<LogitLensTrace> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 2) throw Error(ErrorKind::kIo, "CSV_PARSE", path.string() + ": expected 2 columns");
    out.push_back({parse_index(c[0], path), parse_double(c[1], path)});
  }
  return out;
}

}  // namespace pvmlab
