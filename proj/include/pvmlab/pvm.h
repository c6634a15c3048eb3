#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "pvmlab/config.h"
#include "pvmlab/params.h"
#include "pvmlab/rng.h"
#include "pvmlab/tensor.h"

namespace pvmlab {

// Per-sequence retrieval memory of one adapter.
//
// For the visual variant `keys`/`values` hold the latent visual set after the
// latent key/value maps; they depend only on V_img and the weights and are
// computed once per sequence. For the reflexive variant they hold the
// projected text-position history and grow as text arrives.
struct PvmMemory {
  Tensor keys;
  Tensor values;
  std::size_t count() const { return keys.defined() ? keys.rows() : 0; }
};

// Exact parameter count of one adapter (one injected layer).
std::size_t pvm_parameter_count(const PvmConfig& config, std::size_t d_model);
// Hidden width of the iso-parameter MLP that matches the visual variant.
std::size_t iso_mlp_hidden_width(const PvmConfig& config, std::size_t d_model);

// Persistent Visual Memory adapter for a single transformer layer: a latent
// bottleneck (W_down), cross-attention over the visual set, a residual latent
// FFN, restoration (W_up) and a scalar gate, masked to text positions.
//
// Parameters live in the model's ParameterStore under "pvm.<layer>.".
class PvmAdapter {
 public:
  PvmAdapter() = default;

  // Registers freshly initialised parameters.
  static PvmAdapter create(const PvmConfig& config, std::size_t d_model, std::size_t layer,
                           ParameterStore& store, Rng& rng);
  // Binds to parameters that already exist in `store` (checkpoint load).
  static PvmAdapter bind(const PvmConfig& config, std::size_t d_model, std::size_t layer,
                         ParameterStore& store);

  static std::string prefix(std::size_t layer);

  PvmVariant variant() const { return config_.variant; }
  std::size_t layer() const { return layer_; }
  std::size_t d_latent() const { return config_.d_latent; }
  const Tensor& gate() const { return gate_; }
  std::size_t parameter_count() const;

  // Visual variant: K_lat = V_lat = V_img W_down^vis, then the latent key and
  // value maps. Other variants return an empty memory.
  PvmMemory prepare(const Tensor& visual) const;

  // Latent query for hidden rows: x_lat = x W_down^txt.
  Tensor project_query(const Tensor& x) const;

  // beta over the rows of `latent_keys` (un-mapped K_lat, M x d') for one
  // latent query row, head `head`. Sums to 1 over exactly M entries.
  Tensor attention_weights(const Tensor& x_lat, const Tensor& latent_keys, std::size_t head = 0) const;

  // Gated, masked injection for a block of hidden rows `x_norm` (n x d).
  // `text_mask[i]` is 1 for text positions and 0 for visual positions. For
  // the reflexive variant, text rows are appended to `memory` first.
  Tensor forward(const Tensor& x_norm, PvmMemory& memory, std::span<const double> text_mask) const;

  // Single-row convenience: lambda * h_pvm * mask_bit for x (length d).
  Tensor inject(const Tensor& x, const Tensor& visual, double mask_bit) const;

 private:
  PvmAdapter(const PvmConfig& config, std::size_t d_model, std::size_t layer, ParameterStore& store);

  Tensor retrieve(const Tensor& x_lat, const Tensor& keys, const Tensor& values,
                  std::span<const std::size_t> limits) const;

  PvmConfig config_;
  std::size_t d_model_ = 0;
  std::size_t layer_ = 0;
  Tensor w_down_txt_, w_down_vis_;
  Tensor w_q_, w_k_, w_v_;
  Tensor ffn_norm_, ffn_in_, ffn_out_;
  Tensor w_up_;
  Tensor gate_;
};

}  // namespace pvmlab
