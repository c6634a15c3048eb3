#include "pvmlab/run_config.h"

#include <yaml-cpp/yaml.h>

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pvmlab/error.h"
#include "pvmlab/rng.h"

namespace pvmlab {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_error(const std::string& message) {
  throw Error(ErrorKind::kConfig, "CONFIG_INVALID", message);
}

template <class T>
void read(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    config_error(std::string("field '") + key + "': " + e.what());
  }
}

const Json& section(const Json& j, const char* key) {
  static const Json empty = Json::object();
  if (!j.contains(key)) return empty;
  const Json& s = j.at(key);
  if (!s.is_object()) config_error(std::string("'") + key + "' must be a mapping");
  return s;
}

Json episode_json(const EpisodeSpec& e) {
  return {{"text_length", e.text_length}, {"rho", e.rho}, {"query_start", e.query_start}, {"noise_scale", e.noise_scale}};
}

void read_episode(const Json& j, EpisodeSpec& e) {
  read(j, "text_length", e.text_length);
  read(j, "rho", e.rho);
  read(j, "query_start", e.query_start);
  read(j, "noise_scale", e.noise_scale);
}

Json train_json(const TrainConfig& t) {
  return {{"steps", t.steps},
          {"episodes_per_step", t.episodes_per_step},
          {"lr", t.adam.lr},
          {"beta1", t.adam.beta1},
          {"beta2", t.adam.beta2},
          {"eps", t.adam.eps},
          {"clip_norm", t.adam.clip_norm},
          {"warmup", t.warmup},
          {"min_text_length", t.min_text_length},
          {"all_positions", t.all_positions},
          {"episode", episode_json(t.episode)}};
}

void read_train(const Json& j, TrainConfig& t) {
  read(j, "steps", t.steps);
  read(j, "episodes_per_step", t.episodes_per_step);
  read(j, "lr", t.adam.lr);
  read(j, "beta1", t.adam.beta1);
  read(j, "beta2", t.adam.beta2);
  read(j, "eps", t.adam.eps);
  read(j, "clip_norm", t.adam.clip_norm);
  read(j, "warmup", t.warmup);
  read(j, "min_text_length", t.min_text_length);
  read(j, "all_positions", t.all_positions);
  read_episode(section(j, "episode"), t.episode);
}

void check_train(const TrainConfig& t, const ModelConfig& m, const char* name) {
  const std::string where = std::string(name) + ": ";
  if (t.episodes_per_step == 0) config_error(where + "episodes_per_step must be positive");
  if (!(t.adam.lr > 0.0)) config_error(where + "lr must be positive");
  if (t.episode.text_length < 2) config_error(where + "episode.text_length must be >= 2");
  if (t.episode.query_start >= t.episode.text_length) config_error(where + "query_start must be < text_length");
  if (t.min_text_length > t.episode.text_length) config_error(where + "min_text_length exceeds text_length");
  if (m.n_visual + t.episode.text_length > m.max_seq_len) config_error(where + "episode does not fit max_seq_len");
  if (!(t.episode.rho >= 0.0)) config_error(where + "rho must be >= 0");
}

Json scalar_to_json(const YAML::Node& node) {
  const std::string& s = node.Scalar();
  if (node.Tag() == "!") return s;  // quoted
  if (s == "null" || s == "~" || s.empty()) return nullptr;
  if (s == "true" || s == "True") return true;
  if (s == "false" || s == "False") return false;
  const bool negative = s[0] == '-';
  if (s.find_first_not_of("0123456789", negative ? 1 : 0) == std::string::npos && s.size() > (negative ? 1u : 0u)) {
    errno = 0;
    if (negative) {
      const long long v = std::strtoll(s.c_str(), nullptr, 10);
      if (errno == 0) return v;
    } else {
      const unsigned long long v = std::strtoull(s.c_str(), nullptr, 10);
      if (errno == 0) return v;
    }
  }
  char* end = nullptr;
  const double d = std::strtod(s.c_str(), &end);
  if (end == s.c_str() + s.size()) return d;
  return s;
}

Json node_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Scalar:
      return scalar_to_json(node);
    case YAML::NodeType::Sequence: {
      Json out = Json::array();
      for (const auto& item : node) out.push_back(node_to_json(item));
      return out;
    }
    case YAML::NodeType::Map: {
      Json out = Json::object();
      for (const auto& kv : node) out[kv.first.as<std::string>()] = node_to_json(kv.second);
      return out;
    }
  }
  return nullptr;
}

void emit(YAML::Emitter& out, const Json& j) {
  if (j.is_object()) {
    out << YAML::BeginMap;
    for (const auto& [key, value] : j.items()) {
      out << YAML::Key << key << YAML::Value;
      emit(out, value);
    }
    out << YAML::EndMap;
  } else if (j.is_array()) {
    out << YAML::Flow << YAML::BeginSeq;
    for (const auto& item : j) emit(out, item);
    out << YAML::EndSeq;
  } else if (j.is_string()) {
    out << YAML::DoubleQuoted << j.get<std::string>();
  } else if (j.is_null()) {
    out << YAML::Null;
  } else {
    out << j.dump();  // numbers and booleans in their shortest round-trip form
  }
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.pretrain.steps = 1500;
  c.pretrain.adam.lr = 1e-3;
  c.pretrain.warmup = 50;
  c.pretrain.episode = {48, 4.0, 0, 0.05, 0};
  c.stage1.steps = 4000;
  c.stage1.adam.lr = 3e-3;
  c.stage1.warmup = 50;
  c.stage1.episode = {128, 0.5, 48, 0.05, 0};
  return c;
}

void RunConfig::resolve_seeds() {
  model.seed = seed;
  pretrain.seed = seed;
  stage1.seed = Rng::derive_seed(seed, "stage1");
}

void RunConfig::validate() const {
  try {
    model.validate();
    pvm.validate(model);
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfig, e.code(), e.what());
  }
  check_train(pretrain, model, "pretrain");
  check_train(stage1, model, "stage1");
  if (eval.episodes == 0) config_error("eval.episodes must be positive");
  if (eval.buckets == 0) config_error("eval.buckets must be positive");
  if (eval.jobs == 0) config_error("eval.jobs must be >= 1");
  if (model.n_visual + eval.episode.text_length > model.max_seq_len) config_error("eval episode does not fit max_seq_len");
  if (eval.episode.query_start >= eval.episode.text_length) config_error("eval: query_start must be < text_length");
  if (profile.mode != "stress" && profile.mode != "task") config_error("profile.mode must be 'stress' or 'task'");
  for (auto l : profile.band)
    if (l >= model.n_layers) config_error("profile.band layer " + std::to_string(l) + " out of range");
  if (bench.tokens < 2) config_error("bench.tokens must be >= 2");
  if (bench.runs == 0) config_error("bench.runs must be positive");
  if (bench.prompt_tokens == 0) config_error("bench.prompt_tokens must be positive");
}

Json to_json(const RunConfig& c) {
  Json model, pvm;
  to_json(model, c.model);
  to_json(pvm, c.pvm);
  return {{"seed", c.seed},
          {"output_dir", c.output_dir},
          {"model", model},
          {"pvm", pvm},
          {"pretrain", train_json(c.pretrain)},
          {"stage1", train_json(c.stage1)},
          {"eval",
           {{"episodes", c.eval.episodes},
            {"buckets", c.eval.buckets},
            {"jobs", c.eval.jobs},
            {"episode", episode_json(c.eval.episode)}}},
          {"profile",
           {{"steps", c.profile.steps},
            {"mode", c.profile.mode},
            {"band", c.profile.band},
            {"effective_window", c.profile.effective_window}}},
          {"bench",
           {{"prompt_tokens", c.bench.prompt_tokens},
            {"tokens", c.bench.tokens},
            {"warmup", c.bench.warmup},
            {"runs", c.bench.runs}}}};
}

RunConfig run_config_from_json(const Json& j) {
  if (!j.is_object()) config_error("run config must be a mapping");
  RunConfig c = RunConfig::defaults();
  read(j, "seed", c.seed);
  read(j, "output_dir", c.output_dir);
  from_json(section(j, "model"), c.model);
  from_json(section(j, "pvm"), c.pvm);
  read_train(section(j, "pretrain"), c.pretrain);
  read_train(section(j, "stage1"), c.stage1);
  const Json& ev = section(j, "eval");
  read(ev, "episodes", c.eval.episodes);
  read(ev, "buckets", c.eval.buckets);
  read(ev, "jobs", c.eval.jobs);
  read_episode(section(ev, "episode"), c.eval.episode);
  const Json& pr = section(j, "profile");
  read(pr, "steps", c.profile.steps);
  read(pr, "mode", c.profile.mode);
  read(pr, "band", c.profile.band);
  read(pr, "effective_window", c.profile.effective_window);
  const Json& be = section(j, "bench");
  read(be, "prompt_tokens", c.bench.prompt_tokens);
  read(be, "tokens", c.bench.tokens);
  read(be, "warmup", c.bench.warmup);
  read(be, "runs", c.bench.runs);
  c.resolve_seeds();
  return c;
}

Json yaml_text_to_json(const std::string& text) {
  try {
    return node_to_json(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw Error(ErrorKind::kConfig, "CONFIG_PARSE", e.what());
  }
}

std::string json_to_yaml_text(const Json& j) {
  YAML::Emitter out;
  emit(out, j);
  return std::string(out.c_str()) + "\n";
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::is_regular_file(path))
    throw Error(ErrorKind::kConfig, "CONFIG_NOT_FOUND", "config file not found: " + path.string());
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "CONFIG_NOT_FOUND", "cannot read config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Json j = yaml_text_to_json(ss.str());
  if (j.is_null()) j = Json::object();
  return run_config_from_json(j);
}

void save_run_config(const fs::path& path, const RunConfig& config) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "WRITE_FAILED", "cannot write " + path.string());
  out << json_to_yaml_text(to_json(config));
}

std::optional<std::uint64_t> seed_from_env() {
  const char* raw = std::getenv("PVMLAB_SEED");
  if (!raw || !*raw) return std::nullopt;
  const std::string s(raw);
  if (s.find_first_not_of("0123456789") != std::string::npos)
    throw Error(ErrorKind::kConfig, "CONFIG_INVALID", "PVMLAB_SEED must be a non-negative integer, got '" + s + "'");
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), nullptr, 10);
  if (errno != 0) throw Error(ErrorKind::kConfig, "CONFIG_INVALID", "PVMLAB_SEED out of range");
  return v;
}

}  // namespace pvmlab
