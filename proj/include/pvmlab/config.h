#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace pvmlab {

struct ModelConfig {
  std::size_t n_layers = 8;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 256;
  std::size_t vocab_size = 64;
  std::size_t max_seq_len = 1024;
  std::size_t n_visual = 16;  // M, the fixed visual prefix length
  double rope_base = 10000.0;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return d_model / n_heads; }
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

enum class PvmVariant {
  kVisual,     // cross-attends to the raw visual embeddings
  kReflexive,  // cross-attends to the layer's own text hidden states
  kIsoMlp,     // no retrieval; parameter-matched MLP on the hidden state
};

std::string to_string(PvmVariant variant);
PvmVariant parse_variant(const std::string& name);

struct PvmConfig {
  std::size_t d_latent = 16;
  std::vector<std::size_t> injection_layers = {2, 4, 6};
  double gate_init = 0.0;
  PvmVariant variant = PvmVariant::kVisual;
  std::size_t n_cross_heads = 1;
  // Scores use the down-projections directly (no separate latent W_Q / W_K).
  bool fold_qk_into_down = false;
  // Projection init std; 0 means 1/sqrt(fan_in).
  double init_std = 0.0;

  void validate(const ModelConfig& model) const;

  bool operator==(const PvmConfig&) const = default;
};

}  // namespace pvmlab
