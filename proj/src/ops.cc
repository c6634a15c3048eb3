#include "pvmlab/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "pvmlab/error.h"

namespace pvmlab {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

template <class... Ts>
Tape* recording(const Ts&... inputs) {
  Tape* tape = active_tape();
  if (tape && (inputs.requires_grad() || ...)) return tape;
  return nullptr;
}

MatMap view(std::vector<double>& v, std::size_t r, std::size_t c) {
  return MatMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail("SHAPE_MISMATCH", std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                               shape_str(b.shape()) + " differ");
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) fail("SHAPE_INVALID", std::string(op) + ": undefined tensor");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

RopeTable::RopeTable(std::size_t max_positions, std::size_t head_dim, double base)
    : max_positions_(max_positions), half_(head_dim / 2) {
  if (head_dim == 0 || head_dim % 2 != 0)
    fail("CONFIG_INVALID", "rotary head dimension must be even, got " + std::to_string(head_dim));
  cos_.resize(max_positions * half_);
  sin_.resize(max_positions * half_);
  for (std::size_t p = 0; p < max_positions; ++p) {
    for (std::size_t i = 0; i < half_; ++i) {
      double inv_freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      double angle = static_cast<double>(p) * inv_freq;
      cos_[p * half_ + i] = std::cos(angle);
      sin_[p * half_ + i] = std::sin(angle);
    }
  }
}

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (b.rank() != 2) fail("SHAPE_MISMATCH", "matmul: right operand must be a matrix, got " + shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (k != b.rows())
    fail("SHAPE_MISMATCH", "matmul: inner extents differ: " + shape_str(a.shape()) + " x " +
                               shape_str(b.shape()) + " (" + std::to_string(k) + " vs " +
                               std::to_string(b.rows()) + ")");
  Tensor out(a.rank() == 1 ? Shape{n} : Shape{m, n});
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  view(oi->data, m, n).noalias() = view(ai->data, m, k) * view(bi->data, k, n);
  if (Tape* tape = recording(a, b)) {
    out.set_requires_grad(true);
    tape->record([ai, bi, oi, m, k, n] {
      if (oi->grad.empty()) return;
      auto dc = view(oi->grad, m, n);
      if (ai->requires_grad) view(ai->ensure_grad(), m, k).noalias() += dc * view(bi->data, k, n).transpose();
      if (bi->requires_grad) view(bi->ensure_grad(), k, n).noalias() += view(ai->data, m, k).transpose() * dc;
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({n, m});
  auto ai = a.impl(), oi = out.impl();
  view(oi->data, n, m) = view(ai->data, m, n).transpose();
  if (Tape* tape = recording(a)) {
    out.set_requires_grad(true);
    tape->record([ai, oi, m, n] {
      if (oi->grad.empty() || !ai->requires_grad) return;
      view(ai->ensure_grad(), m, n) += view(oi->grad, n, m).transpose();
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) oi->data[i] = ai->data[i] + bi->data[i];
  if (Tape* tape = recording(a, b)) {
    out.set_requires_grad(true);
    tape->record([ai, bi, oi, n] {
      if (oi->grad.empty()) return;
      for (auto* in : {ai.get(), bi.get()}) {
        if (!in->requires_grad) continue;
        auto& g = in->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[i] += oi->grad[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) oi->data[i] = ai->data[i] * bi->data[i];
  if (Tape* tape = recording(a, b)) {
    out.set_requires_grad(true);
    tape->record([ai, bi, oi, n] {
      if (oi->grad.empty()) return;
      if (ai->requires_grad) {
        auto& g = ai->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[i] += oi->grad[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        auto& g = bi->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[i] += oi->grad[i] * ai->data[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  Tensor out(a.shape());
  auto ai = a.impl(), oi = out.impl();
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) oi->data[i] = ai->data[i] * factor;
  if (Tape* tape = recording(a)) {
    out.set_requires_grad(true);
    tape->record([ai, oi, n, factor] {
      if (oi->grad.empty() || !ai->requires_grad) return;
      auto& g = ai->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += oi->grad[i] * factor;
    });
  }
  return out;
}

Tensor scale_by(const Tensor& factor, const Tensor& a) {
  require_defined(a, "scale_by");
  if (factor.size() != 1)
    fail("SHAPE_MISMATCH", "scale_by: factor must hold one element, got " + shape_str(factor.shape()));
  Tensor out(a.shape());
  auto si = factor.impl(), ai = a.impl(), oi = out.impl();
  const std::size_t n = a.size();
  const double s = si->data[0];
  for (std::size_t i = 0; i < n; ++i) oi->data[i] = s * ai->data[i];
  if (Tape* tape = recording(factor, a)) {
    out.set_requires_grad(true);
    tape->record([si, ai, oi, n] {
      if (oi->grad.empty()) return;
      if (si->requires_grad) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += oi->grad[i] * ai->data[i];
        si->ensure_grad()[0] += acc;
      }
      if (ai->requires_grad) {
        auto& g = ai->ensure_grad();
        const double s = si->data[0];
        for (std::size_t i = 0; i < n; ++i) g[i] += s * oi->grad[i];
      }
    });
  }
  return out;
}

Tensor silu(const Tensor& a) {
  require_defined(a, "silu");
  Tensor out(a.shape());
  auto ai = a.impl(), oi = out.impl();
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) oi->data[i] = ai->data[i] * sigmoid(ai->data[i]);
  if (Tape* tape = recording(a)) {
    out.set_requires_grad(true);
    tape->record([ai, oi, n] {
      if (oi->grad.empty() || !ai->requires_grad) return;
      auto& g = ai->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double x = ai->data[i];
        const double s = sigmoid(x);
        g[i] += oi->grad[i] * s * (1.0 + x * (1.0 - s));
      }
    });
  }
  return out;
}

Tensor masked_softmax_rows(const Tensor& x, std::span<const std::size_t> row_limits) {
  require_defined(x, "softmax_rows");
  const std::size_t r = x.rows(), c = x.cols();
  if (row_limits.size() != r)
    fail("SHAPE_MISMATCH", "masked_softmax_rows: " + std::to_string(row_limits.size()) +
                               " limits for " + std::to_string(r) + " rows");
  std::vector<std::size_t> limits(row_limits.begin(), row_limits.end());
  for (auto lim : limits)
    if (lim > c) fail("SHAPE_MISMATCH", "masked_softmax_rows: limit exceeds " + std::to_string(c) + " columns");
  Tensor out(x.shape());
  auto xi = x.impl(), oi = out.impl();
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t lim = limits[i];
    if (lim == 0) continue;
    const double* in = xi->data.data() + i * c;
    double* o = oi->data.data() + i * c;
    const double mx = *std::max_element(in, in + lim);
    double z = 0.0;
    for (std::size_t j = 0; j < lim; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < lim; ++j) o[j] *= inv;
  }
  if (Tape* tape = recording(x)) {
    out.set_requires_grad(true);
    tape->record([xi, oi, r, c, limits = std::move(limits)] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      auto& g = xi->ensure_grad();
      for (std::size_t i = 0; i < r; ++i) {
        const double* y = oi->data.data() + i * c;
        const double* dy = oi->grad.data() + i * c;
        double dot = 0.0;
        for (std::size_t j = 0; j < limits[i]; ++j) dot += y[j] * dy[j];
        for (std::size_t j = 0; j < limits[i]; ++j) g[i * c + j] += y[j] * (dy[j] - dot);
      }
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_defined(x, "softmax_rows");
  std::vector<std::size_t> limits(x.rows(), x.cols());
  return masked_softmax_rows(x, limits);
}

Tensor causal_softmax_rows(const Tensor& x, std::size_t offset) {
  require_defined(x, "causal_softmax_rows");
  std::vector<std::size_t> limits(x.rows());
  for (std::size_t i = 0; i < limits.size(); ++i) limits[i] = std::min(offset + i + 1, x.cols());
  return masked_softmax_rows(x, limits);
}

Tensor rmsnorm(const Tensor& x, const Tensor& gamma, double eps) {
  require_defined(x, "rmsnorm");
  require_defined(gamma, "rmsnorm");
  const std::size_t r = x.rows(), d = x.cols();
  if (gamma.size() != d)
    fail("SHAPE_MISMATCH", "rmsnorm: gain " + shape_str(gamma.shape()) + " vs width " + std::to_string(d));
  if (!(eps > 0.0)) fail("INVALID_ARGUMENT", "rmsnorm: eps must be positive");
  Tensor out(x.shape());
  auto xi = x.impl(), gi = gamma.impl(), oi = out.impl();
  std::vector<double> inv_rms(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* in = xi->data.data() + i * d;
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += in[j] * in[j];
    inv_rms[i] = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    double* o = oi->data.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) o[j] = gi->data[j] * in[j] * inv_rms[i];
  }
  if (Tape* tape = recording(x, gamma)) {
    out.set_requires_grad(true);
    tape->record([xi, gi, oi, r, d, inv_rms = std::move(inv_rms)] {
      if (oi->grad.empty()) return;
      for (std::size_t i = 0; i < r; ++i) {
        const double* in = xi->data.data() + i * d;
        const double* dy = oi->grad.data() + i * d;
        const double s = inv_rms[i];
        if (gi->requires_grad) {
          auto& gg = gi->ensure_grad();
          for (std::size_t j = 0; j < d; ++j) gg[j] += dy[j] * in[j] * s;
        }
        if (xi->requires_grad) {
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) dot += dy[j] * gi->data[j] * in[j];
          const double k = s * s * s * dot / static_cast<double>(d);
          auto& gx = xi->ensure_grad();
          for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += s * gi->data[j] * dy[j] - in[j] * k;
        }
      }
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_defined(table, "embedding");
  if (ids.empty()) fail("SHAPE_INVALID", "embedding: empty id list");
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<int> idv(ids.begin(), ids.end());
  for (int id : idv)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      fail("INDEX_OUT_OF_RANGE", "embedding: id " + std::to_string(id) + " outside table of " +
                                     std::to_string(v) + " rows");
  Tensor out({idv.size(), d});
  auto ti = table.impl(), oi = out.impl();
  for (std::size_t i = 0; i < idv.size(); ++i)
    std::copy_n(ti->data.data() + static_cast<std::size_t>(idv[i]) * d, d, oi->data.data() + i * d);
  if (Tape* tape = recording(table)) {
    out.set_requires_grad(true);
    tape->record([ti, oi, d, idv = std::move(idv)] {
      if (oi->grad.empty() || !ti->requires_grad) return;
      auto& g = ti->ensure_grad();
      for (std::size_t i = 0; i < idv.size(); ++i) {
        double* row = g.data() + static_cast<std::size_t>(idv[i]) * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += oi->grad[i * d + j];
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_defined(logits, "cross_entropy");
  const std::size_t r = logits.rows(), c = logits.cols();
  if (targets.size() != r)
    fail("SHAPE_MISMATCH", "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                               std::to_string(r) + " rows");
  std::vector<int> tv(targets.begin(), targets.end());
  auto li = logits.impl();
  std::vector<double> probs(r * c, 0.0);
  double loss = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < r; ++i) {
    if (tv[i] < 0) continue;
    if (static_cast<std::size_t>(tv[i]) >= c)
      fail("INDEX_OUT_OF_RANGE", "cross_entropy: target " + std::to_string(tv[i]) + " >= " + std::to_string(c));
    const double* in = li->data.data() + i * c;
    const double mx = *std::max_element(in, in + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(in[j] - mx);
    const double log_z = std::log(z) + mx;
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(in[j] - log_z);
    loss += log_z - in[tv[i]];
    ++count;
  }
  if (count) loss /= static_cast<double>(count);
  Tensor out = Tensor::scalar(loss);
  if (count == 0) return out;
  auto oi = out.impl();
  if (Tape* tape = recording(logits)) {
    out.set_requires_grad(true);
    tape->record([li, oi, r, c, count, tv = std::move(tv), probs = std::move(probs)] {
      if (oi->grad.empty() || !li->requires_grad) return;
      auto& g = li->ensure_grad();
      const double scale = oi->grad[0] / static_cast<double>(count);
      for (std::size_t i = 0; i < r; ++i) {
        if (tv[i] < 0) continue;
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += scale * probs[i * c + j];
        g[i * c + static_cast<std::size_t>(tv[i])] -= scale;
      }
    });
  }
  return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_defined(a, "concat_rows");
  require_defined(b, "concat_rows");
  if (a.cols() != b.cols())
    fail("SHAPE_MISMATCH", "concat_rows: widths " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t ra = a.rows(), rb = b.rows(), c = a.cols();
  Tensor out({ra + rb, c});
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  std::copy(ai->data.begin(), ai->data.end(), oi->data.begin());
  std::copy(bi->data.begin(), bi->data.end(), oi->data.begin() + static_cast<std::ptrdiff_t>(ra * c));
  if (Tape* tape = recording(a, b)) {
    out.set_requires_grad(true);
    tape->record([ai, bi, oi, ra, rb, c] {
      if (oi->grad.empty()) return;
      if (ai->requires_grad) {
        auto& g = ai->ensure_grad();
        for (std::size_t i = 0; i < ra * c; ++i) g[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        auto& g = bi->ensure_grad();
        for (std::size_t i = 0; i < rb * c; ++i) g[i] += oi->grad[ra * c + i];
      }
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) fail("SHAPE_INVALID", "concat_cols: nothing to concatenate");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  std::vector<ImplPtr> impls;
  std::vector<std::size_t> widths;
  bool any_grad = false;
  for (const auto& p : parts) {
    require_defined(p, "concat_cols");
    if (p.rows() != r) fail("SHAPE_MISMATCH", "concat_cols: row counts differ: " + shape_str(p.shape()));
    impls.push_back(p.impl());
    widths.push_back(p.cols());
    total += p.cols();
    any_grad = any_grad || p.requires_grad();
  }
  Tensor out({r, total});
  auto oi = out.impl();
  std::size_t off = 0;
  for (std::size_t k = 0; k < impls.size(); ++k) {
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(impls[k]->data.data() + i * widths[k], widths[k], oi->data.data() + i * total + off);
    off += widths[k];
  }
  Tape* tape = active_tape();
  if (tape && any_grad) {
    out.set_requires_grad(true);
    tape->record([impls = std::move(impls), widths = std::move(widths), oi, r, total] {
      if (oi->grad.empty()) return;
      std::size_t off = 0;
      for (std::size_t k = 0; k < impls.size(); ++k) {
        if (impls[k]->requires_grad) {
          auto& g = impls[k]->ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += oi->grad[i * total + off + j];
        }
        off += widths[k];
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_defined(x, "slice_cols");
  const std::size_t r = x.rows(), c = x.cols();
  if (count == 0 || begin + count > c)
    fail("SHAPE_MISMATCH", "slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                               ") outside " + std::to_string(c) + " columns");
  Tensor out({r, count});
  auto xi = x.impl(), oi = out.impl();
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(xi->data.data() + i * c + begin, count, oi->data.data() + i * count);
  if (Tape* tape = recording(x)) {
    out.set_requires_grad(true);
    tape->record([xi, oi, r, c, begin, count] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      auto& g = xi->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) g[i * c + begin + j] += oi->grad[i * count + j];
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_defined(x, "slice_rows");
  const std::size_t r = x.rows(), c = x.cols();
  if (count == 0 || begin + count > r)
    fail("SHAPE_MISMATCH", "slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                               ") outside " + std::to_string(r) + " rows");
  Tensor out({count, c});
  auto xi = x.impl(), oi = out.impl();
  std::copy_n(xi->data.data() + begin * c, count * c, oi->data.data());
  if (Tape* tape = recording(x)) {
    out.set_requires_grad(true);
    tape->record([xi, oi, c, begin, count] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      auto& g = xi->ensure_grad();
      for (std::size_t i = 0; i < count * c; ++i) g[begin * c + i] += oi->grad[i];
    });
  }
  return out;
}

Tensor mask_rows(const Tensor& x, std::span<const double> row_mask) {
  require_defined(x, "mask_rows");
  const std::size_t r = x.rows(), c = x.cols();
  if (row_mask.size() != r)
    fail("SHAPE_MISMATCH", "mask_rows: " + std::to_string(row_mask.size()) + " mask entries for " +
                               std::to_string(r) + " rows");
  std::vector<double> mask(row_mask.begin(), row_mask.end());
  Tensor out(x.shape());
  auto xi = x.impl(), oi = out.impl();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) oi->data[i * c + j] = xi->data[i * c + j] * mask[i];
  if (Tape* tape = recording(x)) {
    out.set_requires_grad(true);
    tape->record([xi, oi, r, c, mask = std::move(mask)] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      auto& g = xi->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += oi->grad[i * c + j] * mask[i];
    });
  }
  return out;
}

Tensor rope(const Tensor& x, std::size_t start_pos, std::size_t n_heads, const RopeTable& table) {
  require_defined(x, "rope");
  const std::size_t r = x.rows(), d = x.cols();
  if (n_heads == 0 || d % n_heads != 0 || d / n_heads != table.head_dim())
    fail("SHAPE_MISMATCH", "rope: width " + std::to_string(d) + " does not split into " +
                               std::to_string(n_heads) + " heads of " + std::to_string(table.head_dim()));
  if (start_pos + r > table.max_positions())
    fail("SEQUENCE_OVERFLOW", "rope: position " + std::to_string(start_pos + r - 1) + " beyond table of " +
                                  std::to_string(table.max_positions()));
  const std::size_t dh = table.head_dim(), half = dh / 2;
  Tensor out(x.shape());
  auto xi = x.impl(), oi = out.impl();
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t pos = start_pos + i;
    for (std::size_t h = 0; h < n_heads; ++h) {
      const double* in = xi->data.data() + i * d + h * dh;
      double* o = oi->data.data() + i * d + h * dh;
      for (std::size_t p = 0; p < half; ++p) {
        const double cs = table.cos(pos, p), sn = table.sin(pos, p);
        o[p] = in[p] * cs - in[p + half] * sn;
        o[p + half] = in[p] * sn + in[p + half] * cs;
      }
    }
  }
  if (Tape* tape = recording(x)) {
    out.set_requires_grad(true);
    tape->record([xi, oi, r, d, n_heads, dh, half, start_pos, &table] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      auto& g = xi->ensure_grad();
      for (std::size_t i = 0; i < r; ++i) {
        const std::size_t pos = start_pos + i;
        for (std::size_t h = 0; h < n_heads; ++h) {
          const double* dy = oi->grad.data() + i * d + h * dh;
          double* gx = g.data() + i * d + h * dh;
          for (std::size_t p = 0; p < half; ++p) {
            const double cs = table.cos(pos, p), sn = table.sin(pos, p);
            gx[p] += dy[p] * cs + dy[p + half] * sn;
            gx[p + half] += -dy[p] * sn + dy[p + half] * cs;
          }
        }
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  auto xi = x.impl();
  Tensor out = Tensor::scalar(std::accumulate(xi->data.begin(), xi->data.end(), 0.0));
  auto oi = out.impl();
  if (Tape* tape = recording(x)) {
    out.set_requires_grad(true);
    tape->record([xi, oi] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      for (auto& g : xi->ensure_grad()) g += oi->grad[0];
    });
  }
  return out;
}

Tensor weighted_sum(const Tensor& x, const Tensor& weights) {
  require_defined(x, "weighted_sum");
  if (x.size() != weights.size())
    fail("SHAPE_MISMATCH", "weighted_sum: " + shape_str(x.shape()) + " vs weights " + shape_str(weights.shape()));
  auto xi = x.impl(), wi = weights.impl();
  double acc = 0.0;
  for (std::size_t i = 0; i < xi->data.size(); ++i) acc += xi->data[i] * wi->data[i];
  Tensor out = Tensor::scalar(acc);
  auto oi = out.impl();
  if (Tape* tape = recording(x, weights)) {
    out.set_requires_grad(true);
    tape->record([xi, wi, oi] {
      if (oi->grad.empty()) return;
      const double g0 = oi->grad[0];
      if (xi->requires_grad) {
        auto& g = xi->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * wi->data[i];
      }
      if (wi->requires_grad) {
        auto& g = wi->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * xi->data[i];
      }
    });
  }
  return out;
}

}  // namespace ops

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty())
    fail("SHAPE_MISMATCH", "kl_divergence: supports of size " + std::to_string(p.size()) + " and " +
                               std::to_string(q.size()));
  auto check = [](std::span<const double> v, const char* name) {
    double s = 0.0;
    for (double x : v) {
      if (!(x >= 0.0)) fail("NOT_A_DISTRIBUTION", std::string("kl_divergence: negative or NaN mass in ") + name);
      s += x;
    }
    if (std::abs(s - 1.0) > 1e-9)
      fail("NOT_A_DISTRIBUTION", std::string("kl_divergence: ") + name + " sums to " + std::to_string(s));
  };
  check(p, "P");
  check(q, "Q");
  constexpr double kFloor = 1e-12;
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    kl += p[i] * std::log(p[i] / std::max(q[i], kFloor));
  }
  return kl;
}

}  // namespace pvmlab
