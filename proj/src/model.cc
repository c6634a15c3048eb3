#include "pvmlab/model.h"

#include <algorithm>
#include <cmath>

#include "pvmlab/error.h"
#include "pvmlab/rng.h"

namespace pvmlab {

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor({rows, cols}, std::move(v), true);
}

Tensor ones(std::size_t n) { return Tensor(Shape{n}, std::vector<double>(n, 1.0), true); }

std::string layer_prefix(std::size_t layer) { return "layers." + std::to_string(layer) + "."; }

constexpr std::string_view kPvmPrefix = "pvm.";

}  // namespace

AttentionOutput self_attention(const Tensor& x, const AttentionWeights& w, std::size_t n_heads,
                               std::size_t start_pos, const RopeTable& rope, LayerCache* cache, bool causal) {
  const std::size_t n = x.rows();
  const std::size_t d = w.wq.cols();
  if (n_heads == 0 || d % n_heads != 0) fail("SHAPE_MISMATCH", "self_attention: heads do not divide width");
  const std::size_t dh = d / n_heads;
  const std::size_t earlier = cache ? cache->length() : 0;
  if (cache && earlier != start_pos)
    fail("CACHE_INCONSISTENT", "self_attention: cache holds " + std::to_string(earlier) +
                                   " positions but rows start at " + std::to_string(start_pos));

  Tensor q = ops::rope(ops::matmul(x, w.wq), start_pos, n_heads, rope);
  Tensor k = ops::rope(ops::matmul(x, w.wk), start_pos, n_heads, rope);
  Tensor v = ops::matmul(x, w.wv);
  if (x.rank() == 1) {
    k = ops::slice_rows(k, 0, 1);
    v = ops::slice_rows(v, 0, 1);
  }
  if (cache) {
    if (earlier) {
      k = ops::concat_rows(cache->keys, k);
      v = ops::concat_rows(cache->values, v);
    }
    cache->keys = k;
    cache->values = v;
  }

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<std::size_t> limits(n);
  for (std::size_t i = 0; i < n; ++i) limits[i] = causal ? earlier + i + 1 : k.rows();

  AttentionOutput result;
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    Tensor qh = n_heads == 1 ? q : ops::slice_cols(q, h * dh, dh);
    Tensor kh = n_heads == 1 ? k : ops::slice_cols(k, h * dh, dh);
    Tensor vh = n_heads == 1 ? v : ops::slice_cols(v, h * dh, dh);
    Tensor scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt);
    Tensor probs = ops::masked_softmax_rows(scores, limits);
    heads.push_back(ops::matmul(probs, vh));
    result.scores.push_back(std::move(scores));
    result.weights.push_back(std::move(probs));
  }
  Tensor joined = n_heads == 1 ? heads[0] : ops::concat_cols(heads);
  result.out = ops::matmul(joined, w.wo);
  return result;
}

std::vector<double> SequenceState::text_mask() const {
  std::vector<double> mask(position(), 1.0);
  std::fill_n(mask.begin(), n_visual(), 0.0);
  return mask;
}

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng = Rng::stream(config_.seed, "model-init");
  const std::size_t d = config_.d_model, f = config_.d_ffn, v = config_.vocab_size;
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double depth = std::sqrt(2.0 * static_cast<double>(config_.n_layers));
  params_.add("embed.tok", random_matrix(v, d, in_std, rng));
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = layer_prefix(l);
    params_.add(p + "attn_norm", ones(d));
    params_.add(p + "wq", random_matrix(d, d, in_std, rng));
    params_.add(p + "wk", random_matrix(d, d, in_std, rng));
    params_.add(p + "wv", random_matrix(d, d, in_std, rng));
    params_.add(p + "wo", random_matrix(d, d, in_std / depth, rng));
    params_.add(p + "ffn_norm", ones(d));
    params_.add(p + "ffn_in", random_matrix(d, f, in_std, rng));
    params_.add(p + "ffn_out", random_matrix(f, d, 1.0 / std::sqrt(static_cast<double>(f)) / depth, rng));
  }
  params_.add("final_norm", ones(d));
  params_.add("unembed", random_matrix(v, d, in_std, rng));
  rope_ = std::make_shared<RopeTable>(config_.max_seq_len, config_.head_dim(), config_.rope_base);
  bind_blocks();
}

Model::Model(const ModelConfig& config, ParameterStore params, const std::optional<PvmConfig>& pvm)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  rope_ = std::make_shared<RopeTable>(config_.max_seq_len, config_.head_dim(), config_.rope_base);
  bind_blocks();
  if (pvm) {
    pvm->validate(config_);
    pvm_config_ = *pvm;
    for (auto layer : pvm->injection_layers)
      adapters_.emplace(layer, PvmAdapter::bind(*pvm, config_.d_model, layer, params_));
  }
}

Model::Model(const Model& other)
    : config_(other.config_), rope_(other.rope_), pvm_config_(other.pvm_config_) {
  for (const auto& [name, t] : other.params_.all()) params_.add(name, t.clone());
  bind_blocks();
  if (pvm_config_)
    for (auto layer : pvm_config_->injection_layers)
      adapters_.emplace(layer, PvmAdapter::bind(*pvm_config_, config_.d_model, layer, params_));
}

Model& Model::operator=(const Model& other) {
  if (this != &other) *this = Model(other);
  return *this;
}

void Model::bind_blocks() {
  const std::size_t d = config_.d_model, f = config_.d_ffn, v = config_.vocab_size;
  auto expect = [&](const std::string& name, Shape shape) {
    const Tensor& t = params_.get(name);
    if (t.shape() != shape)
      fail("SHAPE_MISMATCH", "parameter " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                                 shape_str(shape));
    return t;
  };
  expect("embed.tok", {v, d});
  expect("final_norm", {d});
  expect("unembed", {v, d});
  blocks_.clear();
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = layer_prefix(l);
    Block b;
    b.attn.wq = expect(p + "wq", {d, d});
    b.attn.wk = expect(p + "wk", {d, d});
    b.attn.wv = expect(p + "wv", {d, d});
    b.attn.wo = expect(p + "wo", {d, d});
    b.attn_norm = expect(p + "attn_norm", {d});
    b.ffn_norm = expect(p + "ffn_norm", {d});
    b.ffn_in = expect(p + "ffn_in", {d, f});
    b.ffn_out = expect(p + "ffn_out", {f, d});
    blocks_.push_back(std::move(b));
  }
}

void Model::attach_pvm(const PvmConfig& config, std::uint64_t seed) {
  if (pvm_config_) fail("PVM_ALREADY_ATTACHED", "detach the current PVM adapters first");
  config.validate(config_);
  Rng rng = Rng::stream(seed, "pvm-init");
  for (auto layer : config.injection_layers)
    adapters_.emplace(layer, PvmAdapter::create(config, config_.d_model, layer, params_, rng));
  pvm_config_ = config;
}

void Model::detach_pvm() {
  adapters_.clear();
  params_.erase_prefix(kPvmPrefix);
  pvm_config_.reset();
}

const PvmAdapter* Model::adapter(std::size_t layer) const {
  auto it = adapters_.find(layer);
  return it == adapters_.end() ? nullptr : &it->second;
}

void Model::set_backbone_trainable(bool trainable) {
  for (auto& [name, t] : params_.all())
    if (!name.starts_with(kPvmPrefix)) t.set_requires_grad(trainable);
}

void Model::set_pvm_trainable(bool trainable) { params_.set_trainable(kPvmPrefix, trainable); }

std::size_t Model::backbone_parameter_count() const {
  return params_.scalar_count() - params_.scalar_count(kPvmPrefix);
}

std::size_t Model::pvm_parameter_count() const { return params_.scalar_count(kPvmPrefix); }

Tensor Model::readout(const Tensor& hidden) const {
  return ops::matmul(ops::rmsnorm(hidden, final_norm()), ops::transpose(unembedding()));
}

void Model::check_visual(const Tensor& visual) const {
  if (visual.rank() != 2 || visual.rows() != config_.n_visual || visual.cols() != config_.d_model)
    fail("SHAPE_MISMATCH", "visual features must be " + std::to_string(config_.n_visual) + "x" +
                               std::to_string(config_.d_model) + ", got " + shape_str(visual.shape()));
}

Tensor Model::embed(const Tensor& visual, std::span<const int> tokens) const {
  if (tokens.empty()) return visual;
  return ops::concat_rows(visual, ops::embedding(params_.get("embed.tok"), tokens));
}

ForwardOutput Model::run(const Tensor& rows, std::size_t start_pos, std::span<const double> mask,
                         std::vector<LayerCache>* cache, std::map<std::size_t, PvmMemory>& memory,
                         const ScoreSink& sink) const {
  ForwardOutput out;
  Tensor x = rows;
  const std::size_t earlier = cache ? (*cache)[0].length() : 0;
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const Block& b = blocks_[l];
    Tensor xn = ops::rmsnorm(x, b.attn_norm);
    AttentionOutput attn =
        self_attention(xn, b.attn, config_.n_heads, start_pos, *rope_, cache ? &(*cache)[l] : nullptr);
    if (sink) {
      for (std::size_t h = 0; h < attn.scores.size(); ++h) {
        const Tensor& s = attn.scores[h];
        for (std::size_t i = 0; i < s.rows(); ++i)
          sink(l, h, start_pos + i, s.data().subspan(i * s.cols(), earlier + i + 1));
      }
    }
    x = ops::add(x, attn.out);
    Tensor xn2 = ops::rmsnorm(x, b.ffn_norm);
    Tensor h_ffn = ops::matmul(ops::silu(ops::matmul(xn2, b.ffn_in)), b.ffn_out);
    Tensor y = ops::add(x, h_ffn);
    if (auto it = adapters_.find(l); it != adapters_.end()) y = ops::add(y, it->second.forward(xn2, memory[l], mask));
    x = y;
    out.hidden.push_back(x);
  }
  out.logits = readout(x);
  return out;
}

ForwardOutput Model::forward(const Tensor& visual, std::span<const int> tokens, const ScoreSink& sink) const {
  check_visual(visual);
  if (visual.rows() + tokens.size() > config_.max_seq_len)
    fail("SEQUENCE_OVERFLOW", "sequence of " + std::to_string(visual.rows() + tokens.size()) +
                                  " positions exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  std::map<std::size_t, PvmMemory> memory;
  for (const auto& [layer, adapter] : adapters_) memory[layer] = adapter.prepare(visual);
  std::vector<double> mask(visual.rows() + tokens.size(), 1.0);
  std::fill_n(mask.begin(), visual.rows(), 0.0);
  return run(embed(visual, tokens), 0, mask, nullptr, memory, sink);
}

SequenceState Model::begin(const Tensor& visual) const {
  check_visual(visual);
  NoGradScope no_grad;
  SequenceState state;
  state.visual = visual;
  state.cache.resize(config_.n_layers);
  for (const auto& [layer, adapter] : adapters_) state.pvm_memory[layer] = adapter.prepare(visual);
  std::vector<double> mask(visual.rows(), 0.0);
  ForwardOutput out = run(visual, 0, mask, &state.cache, state.pvm_memory, {});
  const std::size_t v = out.logits.cols();
  auto last = out.logits.data().subspan((out.logits.rows() - 1) * v, v);
  state.last_logits.assign(last.begin(), last.end());
  return state;
}

ForwardOutput Model::extend(SequenceState& state, std::span<const int> tokens, const ScoreSink& sink) const {
  if (tokens.empty()) fail("INVALID_ARGUMENT", "extend: no tokens");
  if (state.cache.size() != config_.n_layers) fail("CACHE_INCONSISTENT", "extend: state was not created by begin()");
  if (state.position() + tokens.size() > config_.max_seq_len)
    fail("SEQUENCE_OVERFLOW", "extend: " + std::to_string(state.position() + tokens.size()) +
                                  " positions exceed max_seq_len " + std::to_string(config_.max_seq_len));
  NoGradScope no_grad;
  Tensor rows = ops::embedding(params_.get("embed.tok"), tokens);
  std::vector<double> mask(tokens.size(), 1.0);
  ForwardOutput out = run(rows, state.position(), mask, &state.cache, state.pvm_memory, sink);
  state.tokens.insert(state.tokens.end(), tokens.begin(), tokens.end());
  const std::size_t v = out.logits.cols();
  auto last = out.logits.data().subspan((out.logits.rows() - 1) * v, v);
  state.last_logits.assign(last.begin(), last.end());
  return out;
}

ScoreSink trace_collector(std::vector<AttentionTrace>& out, std::size_t n_visual) {
  return [&out, n_visual](std::size_t layer, std::size_t head, std::size_t position, std::span<const double> scores) {
    if (position < n_visual) return;
    out.push_back(make_trace(position - n_visual + 1, layer, head, decompose_partition(scores, n_visual)));
  };
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) fail("INVALID_ARGUMENT", "argmax of an empty range");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

GenerateResult generate(const Model& model, SequenceState& state, std::size_t n_steps, bool record_traces) {
  GenerateResult result;
  if (n_steps == 0) return result;
  if (state.last_logits.empty()) fail("INVALID_ARGUMENT", "generate: state has no logits; call begin() first");
  if (state.position() + n_steps > model.config().max_seq_len)
    fail("SEQUENCE_OVERFLOW", "generate: " + std::to_string(n_steps) + " steps from position " +
                                  std::to_string(state.position()) + " exceed max_seq_len " +
                                  std::to_string(model.config().max_seq_len));
  ScoreSink sink;
  if (record_traces) sink = trace_collector(result.traces, state.n_visual());
  for (std::size_t s = 0; s < n_steps; ++s) {
    const int next = static_cast<int>(argmax(state.last_logits));
    const int token[1] = {next};
    model.extend(state, token, sink);
    result.tokens.push_back(next);
  }
  return result;
}

}  // namespace pvmlab
