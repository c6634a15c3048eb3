#include "pvmlab/config.h"

#include "pvmlab/error.h"

namespace pvmlab {

namespace {
[[noreturn]] void config_error(const std::string& message) {
  throw Error(ErrorKind::kConfig, "CONFIG_INVALID", message);
}
}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 2) config_error("n_layers must be >= 2");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    config_error("d_model (" + std::to_string(d_model) + ") must be a positive multiple of n_heads (" +
                 std::to_string(n_heads) + ")");
  if (head_dim() % 2 != 0) config_error("head dimension must be even for rotary embeddings");
  if (d_ffn == 0) config_error("d_ffn must be positive");
  if (vocab_size < 2) config_error("vocab_size must be >= 2");
  if (n_visual < 1) config_error("n_visual must be >= 1");
  if (max_seq_len <= n_visual) config_error("max_seq_len must exceed n_visual");
  if (!(rope_base > 1.0)) config_error("rope_base must be > 1");
}

std::string to_string(PvmVariant variant) {
  switch (variant) {
    case PvmVariant::kVisual: return "visual";
    case PvmVariant::kReflexive: return "reflexive";
    case PvmVariant::kIsoMlp: return "iso_mlp";
  }
  return "unknown";
}

PvmVariant parse_variant(const std::string& name) {
  if (name == "visual") return PvmVariant::kVisual;
  if (name == "reflexive") return PvmVariant::kReflexive;
  if (name == "iso_mlp") return PvmVariant::kIsoMlp;
  throw Error(ErrorKind::kConfig, "UNKNOWN_VARIANT", "unknown PVM variant '" + name + "'");
}

void PvmConfig::validate(const ModelConfig& model) const {
  if (d_latent == 0 || d_latent >= model.d_model)
    config_error("d_latent must satisfy 0 < d' < d (" + std::to_string(d_latent) + " vs " +
                 std::to_string(model.d_model) + ")");
  if (injection_layers.empty()) config_error("injection_layers must not be empty");
  for (std::size_t i = 0; i < injection_layers.size(); ++i) {
    if (injection_layers[i] >= model.n_layers)
      throw Error(ErrorKind::kConfig, "LAYER_OUT_OF_RANGE",
                  "injection layer " + std::to_string(injection_layers[i]) + " >= n_layers " +
                      std::to_string(model.n_layers));
    if (i > 0 && injection_layers[i] <= injection_layers[i - 1])
      config_error("injection_layers must be strictly increasing");
  }
  if (n_cross_heads == 0 || d_latent % n_cross_heads != 0)
    config_error("n_cross_heads must divide d_latent");
  if (!(init_std >= 0.0)) config_error("init_std must be non-negative");
}

}  // namespace pvmlab
