#include "pvmlab/pvm.h"

#include <cmath>

#include "pvmlab/error.h"
#include "pvmlab/ops.h"

namespace pvmlab {

namespace {

constexpr std::size_t kLatentFfnExpansion = 4;

// init_std > 0 is used verbatim; 0 selects 1/sqrt(fan_in).
Tensor random_matrix(std::size_t rows, std::size_t cols, double init_std, Rng& rng) {
  const double stddev = init_std > 0.0 ? init_std : 1.0 / std::sqrt(static_cast<double>(rows));
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor({rows, cols}, std::move(v), true);
}

bool has_qk_maps(const PvmConfig& c) { return c.variant != PvmVariant::kIsoMlp && !c.fold_qk_into_down; }
bool has_cross_attention(const PvmConfig& c) { return c.variant != PvmVariant::kIsoMlp; }

std::size_t latent_ffn_width(const PvmConfig& c, std::size_t d_model) {
  return c.variant == PvmVariant::kIsoMlp ? iso_mlp_hidden_width(c, d_model)
                                          : kLatentFfnExpansion * c.d_latent;
}

}  // namespace

std::size_t pvm_parameter_count(const PvmConfig& c, std::size_t d) {
  const std::size_t dl = c.d_latent;
  std::size_t n = d * dl;                                  // W_down^txt
  if (c.variant == PvmVariant::kVisual) n += d * dl;       // W_down^vis
  if (has_qk_maps(c)) n += 2 * dl * dl;                    // W_Q, W_K
  if (has_cross_attention(c)) n += dl * dl;                // W_V
  n += dl + 2 * dl * latent_ffn_width(c, d);               // latent RMSNorm gain + FFN
  n += dl * d;                                             // W_up
  n += 1;                                                  // gate
  return n;
}

std::size_t iso_mlp_hidden_width(const PvmConfig& c, std::size_t d) {
  PvmConfig visual = c;
  visual.variant = PvmVariant::kVisual;
  const std::size_t target = pvm_parameter_count(visual, d);
  const std::size_t dl = c.d_latent;
  const std::size_t fixed = 2 * d * dl + dl + 1;  // W_down, norm gain, W_up, gate
  const double width = static_cast<double>(target - fixed) / static_cast<double>(2 * dl);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(width)));
}

std::string PvmAdapter::prefix(std::size_t layer) { return "pvm." + std::to_string(layer) + "."; }

PvmAdapter PvmAdapter::create(const PvmConfig& config, std::size_t d_model, std::size_t layer,
                              ParameterStore& store, Rng& rng) {
  const std::size_t dl = config.d_latent;
  const double sd = config.init_std;
  const std::string p = prefix(layer);
  store.add(p + "w_down_txt", random_matrix(d_model, dl, sd, rng));
  if (config.variant == PvmVariant::kVisual) store.add(p + "w_down_vis", random_matrix(d_model, dl, sd, rng));
  if (has_qk_maps(config)) {
    store.add(p + "w_q", random_matrix(dl, dl, sd, rng));
    store.add(p + "w_k", random_matrix(dl, dl, sd, rng));
  }
  if (has_cross_attention(config)) store.add(p + "w_v", random_matrix(dl, dl, sd, rng));
  const std::size_t width = latent_ffn_width(config, d_model);
  store.add(p + "ffn_norm", Tensor(Shape{dl}, std::vector<double>(dl, 1.0), true));
  store.add(p + "ffn_in", random_matrix(dl, width, sd, rng));
  store.add(p + "ffn_out", random_matrix(width, dl, sd, rng));
  store.add(p + "w_up", random_matrix(dl, d_model, sd, rng));
  store.add(p + "gate", Tensor::scalar(config.gate_init, true));
  return PvmAdapter(config, d_model, layer, store);
}

PvmAdapter PvmAdapter::bind(const PvmConfig& config, std::size_t d_model, std::size_t layer,
                            ParameterStore& store) {
  return PvmAdapter(config, d_model, layer, store);
}

PvmAdapter::PvmAdapter(const PvmConfig& config, std::size_t d_model, std::size_t layer, ParameterStore& store)
    : config_(config), d_model_(d_model), layer_(layer) {
  const std::string p = prefix(layer);
  auto expect = [&](const std::string& name, Shape shape) {
    const Tensor& t = store.get(p + name);
    if (t.shape() != shape)
      fail("SHAPE_MISMATCH", "parameter " + p + name + " has shape " + shape_str(t.shape()) + ", expected " +
                                 shape_str(shape));
    return t;
  };
  const std::size_t dl = config.d_latent;
  w_down_txt_ = expect("w_down_txt", {d_model, dl});
  if (config.variant == PvmVariant::kVisual) w_down_vis_ = expect("w_down_vis", {d_model, dl});
  if (has_qk_maps(config)) {
    w_q_ = expect("w_q", {dl, dl});
    w_k_ = expect("w_k", {dl, dl});
  }
  if (has_cross_attention(config)) w_v_ = expect("w_v", {dl, dl});
  const std::size_t width = latent_ffn_width(config, d_model);
  ffn_norm_ = expect("ffn_norm", {dl});
  ffn_in_ = expect("ffn_in", {dl, width});
  ffn_out_ = expect("ffn_out", {width, dl});
  w_up_ = expect("w_up", {dl, d_model});
  gate_ = expect("gate", {1});
}

std::size_t PvmAdapter::parameter_count() const { return pvm_parameter_count(config_, d_model_); }

PvmMemory PvmAdapter::prepare(const Tensor& visual) const {
  if (config_.variant != PvmVariant::kVisual) return {};
  if (visual.cols() != d_model_)
    fail("SHAPE_MISMATCH", "visual features " + shape_str(visual.shape()) + " do not match d_model " +
                               std::to_string(d_model_));
  Tensor latent = ops::matmul(visual, w_down_vis_);
  PvmMemory memory;
  memory.keys = config_.fold_qk_into_down ? latent : ops::matmul(latent, w_k_);
  memory.values = ops::matmul(latent, w_v_);
  return memory;
}

Tensor PvmAdapter::project_query(const Tensor& x) const { return ops::matmul(x, w_down_txt_); }

Tensor PvmAdapter::attention_weights(const Tensor& x_lat, const Tensor& latent_keys, std::size_t head) const {
  if (!has_cross_attention(config_)) fail("UNSUPPORTED", "iso_mlp adapters have no attention weights");
  const std::size_t dh = config_.d_latent / config_.n_cross_heads;
  if (head >= config_.n_cross_heads) fail("INVALID_ARGUMENT", "cross-attention head out of range");
  Tensor q = config_.fold_qk_into_down ? x_lat : ops::matmul(x_lat, w_q_);
  Tensor k = config_.fold_qk_into_down ? latent_keys : ops::matmul(latent_keys, w_k_);
  if (config_.n_cross_heads > 1) {
    q = ops::slice_cols(q, head * dh, dh);
    k = ops::slice_cols(k, head * dh, dh);
  }
  Tensor scores = ops::scale(ops::matmul(q, ops::transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
  return ops::softmax_rows(scores);
}

Tensor PvmAdapter::retrieve(const Tensor& x_lat, const Tensor& keys, const Tensor& values,
                            std::span<const std::size_t> limits) const {
  const std::size_t heads = config_.n_cross_heads;
  const std::size_t dh = config_.d_latent / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = config_.fold_qk_into_down ? x_lat : ops::matmul(x_lat, w_q_);
  if (heads == 1) {
    Tensor s = ops::scale(ops::matmul(q, ops::transpose(keys)), inv_sqrt);
    return ops::matmul(ops::masked_softmax_rows(s, limits), values);
  }
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = ops::slice_cols(q, h * dh, dh);
    Tensor kh = ops::slice_cols(keys, h * dh, dh);
    Tensor vh = ops::slice_cols(values, h * dh, dh);
    Tensor s = ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt);
    outs.push_back(ops::matmul(ops::masked_softmax_rows(s, limits), vh));
  }
  return ops::concat_cols(outs);
}

Tensor PvmAdapter::forward(const Tensor& x_norm, PvmMemory& memory, std::span<const double> text_mask) const {
  const std::size_t n = x_norm.rows();
  if (text_mask.size() != n)
    fail("SHAPE_MISMATCH", "pvm: " + std::to_string(text_mask.size()) + " mask entries for " +
                               std::to_string(n) + " rows");
  Tensor x_lat = project_query(x_norm);
  Tensor h_cross;
  switch (config_.variant) {
    case PvmVariant::kVisual: {
      if (memory.count() == 0) fail("PVM_NOT_PREPARED", "visual memory missing; call prepare() first");
      std::vector<std::size_t> limits(n, memory.count());
      h_cross = retrieve(x_lat, memory.keys, memory.values, limits);
      break;
    }
    case PvmVariant::kReflexive: {
      // Text rows follow visual rows, so the text part of a block is a suffix.
      std::size_t first_text = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (text_mask[i] != 0.0) {
          first_text = i;
          break;
        }
      }
      for (std::size_t i = first_text; i < n; ++i)
        if (text_mask[i] == 0.0) fail("MASK_INVALID", "visual positions must precede text positions");
      const std::size_t before = memory.count();
      if (first_text < n) {
        Tensor src = ops::slice_rows(x_lat, first_text, n - first_text);
        Tensor k = config_.fold_qk_into_down ? src : ops::matmul(src, w_k_);
        Tensor v = ops::matmul(src, w_v_);
        memory.keys = before ? ops::concat_rows(memory.keys, k) : k;
        memory.values = before ? ops::concat_rows(memory.values, v) : v;
      }
      if (memory.count() == 0) {
        h_cross = Tensor::zeros(x_lat.shape());
        break;
      }
      std::vector<std::size_t> limits(n, 0);
      for (std::size_t i = first_text; i < n; ++i) limits[i] = before + (i - first_text) + 1;
      h_cross = retrieve(x_lat, memory.keys, memory.values, limits);
      break;
    }
    case PvmVariant::kIsoMlp:
      h_cross = x_lat;
      break;
  }
  Tensor hidden = ops::silu(ops::matmul(ops::rmsnorm(h_cross, ffn_norm_), ffn_in_));
  Tensor h_lat = ops::add(h_cross, ops::matmul(hidden, ffn_out_));
  Tensor h_pvm = ops::matmul(h_lat, w_up_);
  return ops::mask_rows(ops::scale_by(gate_, h_pvm), text_mask);
}

Tensor PvmAdapter::inject(const Tensor& x, const Tensor& visual, double mask_bit) const {
  if (mask_bit != 0.0 && mask_bit != 1.0) fail("MASK_INVALID", "mask bit must be 0 or 1");
  PvmMemory memory = prepare(visual);
  const double mask[1] = {mask_bit};
  return forward(x, memory, mask);
}

}  // namespace pvmlab
