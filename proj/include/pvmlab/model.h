#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "pvmlab/config.h"
#include "pvmlab/ops.h"
#include "pvmlab/params.h"
#include "pvmlab/pvm.h"
#include "pvmlab/tensor.h"
#include "pvmlab/trace.h"

namespace pvmlab {

struct AttentionWeights {
  Tensor wq, wk, wv, wo;
};

struct LayerCache {
  Tensor keys;    // rotated keys for every position seen so far
  Tensor values;
  std::size_t length() const { return keys.defined() ? keys.rows() : 0; }
};

struct AttentionOutput {
  Tensor out;                   // n x d, after the output projection
  std::vector<Tensor> scores;   // per head: n x keys, scaled pre-softmax scores
  std::vector<Tensor> weights;  // per head: n x keys, causal softmax of scores
};

// Multi-head self-attention with rotary positions on Q and K. Rows of `x` sit
// at absolute positions start_pos, start_pos+1, ...; when `cache` is given,
// keys/values of earlier positions are read from it and the new ones appended.
// Row i sees keys [0, start_pos + i] when `causal`, every key otherwise.
AttentionOutput self_attention(const Tensor& x, const AttentionWeights& w, std::size_t n_heads,
                               std::size_t start_pos, const RopeTable& rope, LayerCache* cache,
                               bool causal = true);

// Called once per (layer, head, query row) with that row's visible raw scores.
using ScoreSink = std::function<void(std::size_t layer, std::size_t head, std::size_t position,
                                     std::span<const double> scores)>;

// Running decode state: the visual prefix, consumed text tokens and caches.
struct SequenceState {
  Tensor visual;                     // V_img, M x d
  std::vector<int> tokens;           // text tokens consumed so far
  std::vector<LayerCache> cache;     // one per layer
  std::map<std::size_t, PvmMemory> pvm_memory;  // per injected layer
  std::vector<double> last_logits;   // logits of the most recent row

  std::size_t n_visual() const { return visual.rows(); }
  std::size_t position() const { return n_visual() + tokens.size(); }
  std::size_t text_count() const { return tokens.size(); }
  // 0 for visual positions, 1 for text positions.
  std::vector<double> text_mask() const;
};

struct ForwardOutput {
  Tensor logits;               // rows x vocab
  std::vector<Tensor> hidden;  // output of each block, rows x d
};

// Toy multimodal decoder: a visual prefix of M feature rows followed by text
// tokens, pre-norm blocks (RMSNorm -> MHSA, RMSNorm -> FFN || PVM), a final
// RMSNorm and an untied unembedding E (vocab x d).
class Model {
 public:
  explicit Model(const ModelConfig& config);
  // Adopts existing parameters (checkpoint load); shapes are validated.
  Model(const ModelConfig& config, ParameterStore params, const std::optional<PvmConfig>& pvm);

  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const RopeTable& rope() const { return *rope_; }

  void attach_pvm(const PvmConfig& config, std::uint64_t seed);
  void detach_pvm();
  const std::optional<PvmConfig>& pvm_config() const { return pvm_config_; }
  const PvmAdapter* adapter(std::size_t layer) const;

  // Backbone = every parameter outside the "pvm." prefix.
  void set_backbone_trainable(bool trainable);
  void set_pvm_trainable(bool trainable);
  std::size_t backbone_parameter_count() const;
  std::size_t pvm_parameter_count() const;

  const Tensor& unembedding() const { return params_.get("unembed"); }
  const Tensor& final_norm() const { return params_.get("final_norm"); }
  // Final RMSNorm followed by E; the readout used for logits and LogitLens.
  Tensor readout(const Tensor& hidden) const;

  // Whole-sequence forward without caching (training and reference path).
  ForwardOutput forward(const Tensor& visual, std::span<const int> tokens, const ScoreSink& sink = {}) const;

  // Incremental decoding.
  SequenceState begin(const Tensor& visual) const;
  ForwardOutput extend(SequenceState& state, std::span<const int> tokens, const ScoreSink& sink = {}) const;

  std::size_t max_text_tokens() const { return config_.max_seq_len - config_.n_visual; }

 private:
  struct Block {
    AttentionWeights attn;
    Tensor attn_norm, ffn_norm, ffn_in, ffn_out;
  };

  void bind_blocks();
  Tensor embed(const Tensor& visual, std::span<const int> tokens) const;
  ForwardOutput run(const Tensor& rows, std::size_t start_pos, std::span<const double> mask,
                    std::vector<LayerCache>* cache, std::map<std::size_t, PvmMemory>& memory,
                    const ScoreSink& sink) const;
  void check_visual(const Tensor& visual) const;

  ModelConfig config_;
  ParameterStore params_;
  std::shared_ptr<const RopeTable> rope_;
  std::vector<Block> blocks_;
  std::optional<PvmConfig> pvm_config_;
  std::map<std::size_t, PvmAdapter> adapters_;
};

// Score sink that appends one AttentionTrace per (layer, head, text query row).
ScoreSink trace_collector(std::vector<AttentionTrace>& out, std::size_t n_visual);

struct GenerateResult {
  std::vector<int> tokens;
  std::vector<AttentionTrace> traces;
};

// Greedy decoding from `state` for n_steps tokens using the KV cache. Each
// step feeds argmax(last logits) (lowest index on ties) back in.
GenerateResult generate(const Model& model, SequenceState& state, std::size_t n_steps,
                        bool record_traces = true);

std::size_t argmax(std::span<const double> values);

}  // namespace pvmlab
