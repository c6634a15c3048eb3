#include "pvmlab/config_json.h"

#include "pvmlab/error.h"

namespace pvmlab {

namespace {

template <class T>
void read_optional(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, "CONFIG_INVALID", std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace

void to_json(Json& j, const ModelConfig& c) {
  j = Json{{"n_layers", c.n_layers},     {"d_model", c.d_model},       {"n_heads", c.n_heads},
           {"d_ffn", c.d_ffn},           {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
           {"n_visual", c.n_visual},     {"rope_base", c.rope_base},   {"seed", c.seed}};
}

void from_json(const Json& j, ModelConfig& c) {
  if (!j.is_object()) throw Error(ErrorKind::kConfig, "CONFIG_INVALID", "model config must be a mapping");
  read_optional(j, "n_layers", c.n_layers);
  read_optional(j, "d_model", c.d_model);
  read_optional(j, "n_heads", c.n_heads);
  read_optional(j, "d_ffn", c.d_ffn);
  read_optional(j, "vocab_size", c.vocab_size);
  read_optional(j, "max_seq_len", c.max_seq_len);
  read_optional(j, "n_visual", c.n_visual);
  read_optional(j, "rope_base", c.rope_base);
  read_optional(j, "seed", c.seed);
}

void to_json(Json& j, const PvmConfig& c) {
  j = Json{{"d_latent", c.d_latent},
           {"injection_layers", c.injection_layers},
           {"gate_init", c.gate_init},
           {"variant", to_string(c.variant)},
           {"n_cross_heads", c.n_cross_heads},
           {"fold_qk_into_down", c.fold_qk_into_down},
           {"init_std", c.init_std}};
}

void from_json(const Json& j, PvmConfig& c) {
  if (!j.is_object()) throw Error(ErrorKind::kConfig, "CONFIG_INVALID", "pvm config must be a mapping");
  read_optional(j, "d_latent", c.d_latent);
  read_optional(j, "injection_layers", c.injection_layers);
  read_optional(j, "gate_init", c.gate_init);
  if (j.contains("variant")) {
    std::string name;
    read_optional(j, "variant", name);
    c.variant = parse_variant(name);
  }
  read_optional(j, "n_cross_heads", c.n_cross_heads);
  read_optional(j, "fold_qk_into_down", c.fold_qk_into_down);
  read_optional(j, "init_std", c.init_std);
}

std::string canonical_json(const Json& j) { return j.dump(); }

}  // namespace pvmlab
