#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pvmlab/analytics.h"
#include "pvmlab/bench.h"
#include "pvmlab/checkpoint.h"
#include "pvmlab/config_json.h"
#include "pvmlab/error.h"
#include "pvmlab/experiment.h"
#include "pvmlab/layersel.h"
#include "pvmlab/run_config.h"
#include "pvmlab/task.h"

namespace fs = std::filesystem;
using namespace pvmlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kConfig:
      return kExitUsage;
    case ErrorKind::kNumeric:
      return kExitNumeric;
    case ErrorKind::kIo:
      return kExitIo;
  }
  return 1;
}

void report_error(const std::string& code, const std::string& message, int exit_code) {
  const Json j = {{"error", {{"code", code}, {"message", message}, {"exit_code", exit_code}}}};
  std::cerr << j.dump() << std::endl;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "WRITE_FAILED", "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "WRITE_FAILED", "cannot write " + path.string());
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

// Files under a directory (or the file itself), each with its digest.
Json hash_paths(const std::vector<fs::path>& paths) {
  Json out = Json::object();
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file()) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) out[f.generic_string()] = sha256_file(f);
    } else if (fs::is_regular_file(p)) {
      out[p.generic_string()] = sha256_file(p);
    }
  }
  return out;
}

struct Common {
  std::string config_path;
  std::string out_dir;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Run config (YAML); defaults when omitted");
  cmd->add_option("--out", c.out_dir, "Output directory (overrides output_dir)");
}

RunConfig resolve_run(const Common& c) {
  RunConfig run = c.config_path.empty() ? RunConfig::defaults() : load_run_config(c.config_path);
  if (auto seed = seed_from_env()) run.seed = *seed;
  if (!c.out_dir.empty()) run.output_dir = c.out_dir;
  run.resolve_seeds();
  run.validate();
  return run;
}

// Writes the resolved config and manifest.<command>.json beside the outputs.
void finish_run(const std::string& command, const fs::path& out_dir, const RunConfig* run,
                const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  fs::create_directories(out_dir);
  Json manifest = {{"command", command},
                   {"version", PVMLAB_VERSION},
                   {"checkpoint_format", kCheckpointFormatVersion},
                   {"inputs", hash_paths(inputs)},
                   {"outputs", hash_paths(outputs)}};
  if (run) {
    const std::string resolved = canonical_json(to_json(*run));
    write_text(out_dir / "config.resolved.json", resolved + "\n");
    manifest["seed"] = run->seed;
    manifest["config_sha256"] = sha256_hex(resolved);
  } else {
    manifest["seed"] = nullptr;
    manifest["config_sha256"] = nullptr;
  }
  write_json(out_dir / ("manifest." + command + ".json"), manifest);
}

std::vector<fs::path> config_inputs(const Common& c) {
  if (c.config_path.empty()) return {};
  return {c.config_path};
}

void write_loss_csv(const fs::path& path, const TrainResult& r) {
  std::string text = "step,loss,grad_norm\n";
  for (std::size_t i = 0; i < r.losses.size(); ++i)
    text += std::to_string(i) + "," + format_double(r.losses[i]) + "," + format_double(r.grad_norms[i]) + "\n";
  write_text(path, text);
}

Model load_model(const std::string& path) { return load_checkpoint(path); }

// ---- subcommands ----

int cmd_pretrain(const Common& c) {
  const RunConfig run = resolve_run(c);
  const fs::path out = run.output_dir;
  const Codebook codebook = make_codebook(run);
  TrainResult result;
  Model model = run_pretrain(run, codebook, &result);
  save_checkpoint(model, out / "checkpoint");
  write_loss_csv(out / "loss.csv", result);
  finish_run("pretrain", out, &run, config_inputs(c), {out / "checkpoint", out / "loss.csv"});
  std::cout << Json{{"checkpoint", (out / "checkpoint").string()},
                    {"steps", result.losses.size()},
                    {"final_loss", result.losses.empty() ? 0.0 : result.losses.back()}}
                   .dump()
            << "\n";
  return kExitOk;
}

struct AttachArgs {
  std::string checkpoint, layers, variant;
  std::size_t latent = 0;
};

int cmd_attach(const Common& c, const AttachArgs& a) {
  RunConfig run = resolve_run(c);
  Model base = load_model(a.checkpoint);
  if (base.pvm_config()) fail("PVM_ATTACHED", "checkpoint already carries a PVM");
  PvmConfig pc = run.pvm;
  if (!a.layers.empty()) pc.injection_layers = parse_layer_list(a.layers);
  if (a.latent) pc.d_latent = a.latent;
  if (!a.variant.empty()) pc.variant = parse_variant(a.variant);
  try {
    pc.validate(base.config());
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfig, e.code(), e.what());
  }
  run.model = base.config();
  run.pvm = pc;
  const Model model = with_pvm(base, run, pc);
  PvmConfig visual_pc = pc;
  visual_pc.variant = PvmVariant::kVisual;
  const std::size_t visual_count = with_pvm(base, run, visual_pc).pvm_parameter_count();

  const fs::path out = run.output_dir;
  save_checkpoint(model, out / "checkpoint");
  finish_run("attach-pvm", out, &run, {a.checkpoint}, {out / "checkpoint"});
  std::cout << Json{{"checkpoint", (out / "checkpoint").string()},
                    {"variant", to_string(pc.variant)},
                    {"layers", pc.injection_layers},
                    {"backbone_params", model.backbone_parameter_count()},
                    {"pvm_params", model.pvm_parameter_count()},
                    {"visual_pvm_params", visual_count},
                    {"ratio_to_visual", static_cast<double>(model.pvm_parameter_count()) /
                                            static_cast<double>(visual_count)}}
                   .dump()
            << "\n";
  return kExitOk;
}

int cmd_train_pvm(const Common& c, const std::string& checkpoint) {
  RunConfig run = resolve_run(c);
  Model model = load_model(checkpoint);
  if (!model.pvm_config()) fail("PVM_MISSING", "checkpoint has no PVM; run attach-pvm first");
  run.model = model.config();
  run.pvm = *model.pvm_config();
  const Codebook codebook = make_codebook(run);
  const Stage1Result r = train_pvm_stage1(model, codebook, run.stage1);
  const fs::path out = run.output_dir;
  save_checkpoint(model, out / "checkpoint");
  write_loss_csv(out / "stage1_loss.csv", r.train);
  finish_run("train-pvm", out, &run, {checkpoint}, {out / "checkpoint", out / "stage1_loss.csv"});
  std::cout << Json{{"checkpoint", (out / "checkpoint").string()},
                    {"gates", r.gates},
                    {"backbone_sha256", r.backbone_hash_after},
                    {"final_loss", r.train.losses.empty() ? 0.0 : r.train.losses.back()}}
                   .dump()
            << "\n";
  return kExitOk;
}

Json decay_json(const DecayAnalysis& d) {
  return {{"layers", d.layers},
          {"n_visual", d.n_visual},
          {"s_max", d.s_max},
          {"beta", d.beta},
          {"mu", d.mu},
          {"t_lo", d.t_lo},
          {"t_hi", d.t_hi},
          {"loglog_slope", d.loglog_slope},
          {"fit_r2", d.fit_r2},
          {"early_slope", d.phases.early_slope},
          {"phase1", {{"begin", d.phases.phase1_begin}, {"end", d.phases.phase1_end}, {"empty", d.phases.phase1_empty}}},
          {"plateau", d.phases.plateau ? Json(*d.phases.plateau) : Json(nullptr)},
          {"boundary", d.phases.boundary ? Json(*d.phases.boundary) : Json(nullptr)},
          {"bound_violations", d.bound_violations},
          {"effective_window", d.effective_window}};
}

int cmd_profile(const Common& c, const std::string& checkpoint, std::optional<std::size_t> steps_opt,
                const std::string& mode_opt) {
  RunConfig run = resolve_run(c);
  const Model model = load_model(checkpoint);
  run.model = model.config();
  const std::size_t steps = steps_opt.value_or(run.profile.steps);
  const std::string mode = mode_opt.empty() ? run.profile.mode : mode_opt;
  if (mode != "stress" && mode != "task")
    throw Error(ErrorKind::kConfig, "CONFIG_INVALID", "--mode must be stress or task");
  const auto band = analysis_band(run, model.config().n_layers);
  for (auto l : band)
    if (l >= model.config().n_layers) throw Error(ErrorKind::kConfig, "LAYER_OUT_OF_RANGE", "band layer out of range");

  const Codebook codebook = make_codebook(run);
  const ProfileRun prof = profile_model(model, codebook, run, steps, mode, band);
  const fs::path out = run.output_dir;
  write_traces_csv(out / "traces.csv", prof.traces);
  write_heatmap_csv(out / "heatmap.csv", export_heatmap(prof.traces));

  Json decay = {{"mode", mode}, {"steps", steps}, {"band", band}};
  if (!prof.traces.empty()) {
    const auto profile = layer_profile(prof.traces, model.config().n_layers);
    decay["layer_profile"] = profile;
    decay["onset"] = LayerProfile::from_means(profile).onset;
  }
  try {
    decay["analysis"] = prof.traces.empty() ? Json(nullptr)
                                            : decay_json(analyze_decay(prof.traces, band, model.config().n_visual,
                                                                       prof.s_max, run.profile.effective_window));
  } catch (const Error& e) {
    decay["analysis"] = nullptr;
    decay["analysis_error"] = e.code();
  }
  write_json(out / "decay.json", decay);
  finish_run("profile", out, &run, {checkpoint}, {out / "traces.csv", out / "heatmap.csv", out / "decay.json"});
  std::cout << Json{{"traces", prof.traces.size()},
                    {"loglog_slope", decay["analysis"].is_null() ? Json(nullptr) : decay["analysis"]["loglog_slope"]}}
                   .dump()
            << "\n";
  return kExitOk;
}

int cmd_logitlens(const Common& c, const std::string& checkpoint, std::optional<std::size_t> episodes_opt) {
  RunConfig run = resolve_run(c);
  const Model model = load_model(checkpoint);
  run.model = model.config();
  if (episodes_opt) run.eval.episodes = *episodes_opt;
  const Codebook codebook = make_codebook(run);
  const auto episodes = eval_episodes(run, codebook);
  const auto rows = logitlens_on_episodes(model, codebook, episodes, run.eval.episode.noise_scale);
  const fs::path out = run.output_dir;
  write_logitlens_csv(out / "logitlens.csv", rows);
  finish_run("logitlens", out, &run, {checkpoint}, {out / "logitlens.csv"});
  Json kl = Json::array();
  for (const auto& r : rows) kl.push_back(r.kl);
  std::cout << Json{{"kl_nats", kl}}.dump() << "\n";
  return kExitOk;
}

struct SelectArgs {
  std::string traces, strategy, out_dir;
  std::size_t k = 3;
  std::size_t stride = 2;
  std::optional<std::size_t> onset;
  std::optional<std::size_t> n_layers;
};

int cmd_select(const SelectArgs& a) {
  const auto traces = read_traces_csv(a.traces);
  if (traces.empty()) fail("INVALID_ARGUMENT", "traces file has no rows");
  std::size_t n_layers = 0;
  for (const auto& t : traces) n_layers = std::max(n_layers, t.layer + 1);
  if (a.n_layers) n_layers = *a.n_layers;
  const LayerProfile profile = LayerProfile::from_means(layer_profile(traces, n_layers));

  LayerSelection sel;
  std::size_t onset = a.onset.value_or(profile.onset);
  if (a.strategy == "peak") sel = select_peak(profile, a.k);
  else if (a.strategy == "max_decay") sel = select_max_decay(profile, a.k);
  else if (a.strategy == "strided") sel = select_strided(n_layers, onset, a.stride, a.k);
  else throw Error(ErrorKind::kConfig, "CONFIG_INVALID", "--strategy must be peak, max_decay or strided");

  Json profile_text = Json::array();
  for (double v : profile.mean_omega) profile_text.push_back(format_double(v));
  Json record = {{"strategy", sel.strategy},
                 {"k", a.k},
                 {"profile", profile.mean_omega},
                 {"profile_sha256", sha256_hex(profile_text.dump())},
                 {"onset", onset},
                 {"result", sel.layers},
                 {"no_decay", sel.no_decay}};
  if (a.strategy == "strided") record["stride"] = a.stride;
  const fs::path out = a.out_dir.empty() ? fs::path(a.traces).parent_path() : fs::path(a.out_dir);
  const fs::path json_path = out / "selection.json";
  write_json(json_path, record);
  finish_run("select-layers", out.empty() ? fs::path(".") : out, nullptr, {a.traces}, {json_path});
  std::cout << format_layer_list(sel.layers) << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::vector<std::string> models;
  std::string seeds;
  std::string variants = "visual,reflexive,iso_mlp";
  std::optional<std::size_t> jobs;
};

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_eval(const Common& c, const EvalArgs& a) {
  RunConfig run = resolve_run(c);
  if (a.jobs) {
    if (*a.jobs == 0) throw Error(ErrorKind::kConfig, "CONFIG_INVALID", "--jobs must be >= 1");
    run.eval.jobs = *a.jobs;
  }
  const fs::path out = run.output_dir;
  std::vector<std::pair<std::uint64_t, RecallReport>> per_seed;
  std::vector<fs::path> inputs = config_inputs(c);
  std::string hash;

  if (!a.models.empty()) {
    std::vector<std::pair<std::string, Model>> models;
    for (const auto& spec : a.models) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos || eq == 0)
        throw Error(ErrorKind::kConfig, "CONFIG_INVALID", "--model expects name=checkpoint, got '" + spec + "'");
      models.emplace_back(spec.substr(0, eq), load_model(spec.substr(eq + 1)));
      inputs.emplace_back(spec.substr(eq + 1));
    }
    run.model = models.front().second.config();
    for (const auto& [name, m] : models)
      if (!(m.config() == run.model)) fail("SHAPE_MISMATCH", "model '" + name + "' has a different backbone config");
    const Codebook codebook = make_codebook(run);
    const auto episodes = eval_episodes(run, codebook);
    std::vector<ModelAnswerer> answerers;
    answerers.reserve(models.size());
    std::vector<Variant> variants;
    for (const auto& [name, m] : models) answerers.emplace_back(m, codebook, run.eval.episode.noise_scale);
    for (std::size_t i = 0; i < models.size(); ++i) variants.push_back({models[i].first, &answerers[i]});
    per_seed.emplace_back(run.seed, eval_by_length(variants, episodes, run.eval.buckets, run.eval.jobs));
    hash = config_hash(run.model, models.back().second.pvm_config());
  } else {
    std::vector<PvmVariant> variants;
    for (const auto& v : split_commas(a.variants)) variants.push_back(parse_variant(v));
    std::vector<std::uint64_t> seeds;
    if (a.seeds.empty()) seeds.push_back(run.seed);
    for (const auto& s : split_commas(a.seeds)) {
      if (s.find_first_not_of("0123456789") != std::string::npos)
        throw Error(ErrorKind::kConfig, "CONFIG_INVALID", "bad seed '" + s + "'");
      seeds.push_back(std::stoull(s));
    }
    for (auto seed : seeds) {
      RunConfig r = run;
      r.seed = seed;
      r.resolve_seeds();
      SeedStudy study = run_seed_study(r, variants, [](const std::string& line) { std::cerr << line << std::endl; });
      per_seed.emplace_back(seed, std::move(study.report));
    }
    hash = config_hash(run.model, run.pvm);
  }
  const Json report = recall_report_json(per_seed, hash);
  write_json(out / "report.json", report);
  finish_run("eval", out, &run, inputs, {out / "report.json"});
  std::cout << report["summary"].dump() << "\n";
  return kExitOk;
}

Json bench_json(const BenchReport& r, const std::string& hash) {
  return {{"variant", r.variant},           {"tpot_ms", r.tpot_ms},
          {"throughput_tps", r.throughput_tps}, {"runs", r.run_tpot_ms},
          {"n_tokens", r.n_tokens},         {"warmup", r.warmup},
          {"low_resolution", r.low_resolution}, {"config_hash", hash}};
}

int cmd_bench(const Common& c, const std::string& checkpoint, const std::string& baseline_path,
              std::optional<std::size_t> tokens) {
  RunConfig run = resolve_run(c);
  if (tokens) run.bench.tokens = *tokens;
  const Model model = load_model(checkpoint);
  run.model = model.config();
  const Codebook codebook = make_codebook(run);
  const BenchInputs in = bench_inputs(run, codebook);

  auto label = [](const Model& m) {
    return m.pvm_config() ? "pvm_" + to_string(m.pvm_config()->variant) : std::string("baseline");
  };
  std::vector<fs::path> inputs{checkpoint};
  Json result;
  if (baseline_path.empty()) {
    const BenchReport main = measure_decode(model, in.visual, in.prompt, run.bench.tokens, run.bench.warmup,
                                            run.bench.runs, label(model));
    result = bench_json(main, config_hash(model.config(), model.pvm_config()));
  } else {
    const Model b = load_model(baseline_path);
    if (!(b.config() == model.config())) fail("SHAPE_MISMATCH", "baseline has a different backbone config");
    inputs.emplace_back(baseline_path);
    const DecodeComparison cmp = compare_decode(b, model, in.visual, in.prompt, run.bench.tokens, run.bench.warmup,
                                                run.bench.runs, label(b), label(model));
    result = bench_json(cmp.pvm, config_hash(model.config(), model.pvm_config()));
    result["baseline"] = bench_json(cmp.base, config_hash(b.config(), b.pvm_config()));
    result["overhead_percent"] = overhead_percent(cmp.base, cmp.pvm);
  }
  const fs::path out = run.output_dir;
  write_json(out / "bench.json", result);
  finish_run("bench", out, &run, inputs, {out / "bench.json"});
  std::cout << result.dump() << "\n";
  return kExitOk;
}

int cmd_export(const std::string& checkpoint, const std::string& out_path) {
  const Model model = load_model(checkpoint);
  Json params = Json::object();
  for (const auto& [name, t] : model.params().all()) {
    const auto data = t.data();
    params[name] = {{"shape", t.shape()}, {"values", std::vector<double>(data.begin(), data.end())}};
  }
  Json model_json;
  to_json(model_json, model.config());
  Json pvm_json = nullptr;
  if (model.pvm_config()) to_json(pvm_json, *model.pvm_config());
  const Json doc = {{"model", model_json}, {"pvm", pvm_json}, {"params", params}};
  write_text(out_path, doc.dump() + "\n");
  const fs::path out_dir = fs::path(out_path).parent_path().empty() ? fs::path(".") : fs::path(out_path).parent_path();
  finish_run("export", out_dir, nullptr, {checkpoint}, {out_path});
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy multimodal decoder lab: visual attention dilution and persistent visual memory"};
  app.require_subcommand(1);
  app.set_version_flag("--version", PVMLAB_VERSION);

  Common common;
  std::string checkpoint;

  auto* pretrain = app.add_subcommand("pretrain", "Train the baseline decoder on the recall task");
  add_common(pretrain, common);

  AttachArgs attach;
  auto* attach_cmd = app.add_subcommand("attach-pvm", "Attach PVM modules to a baseline checkpoint");
  add_common(attach_cmd, common);
  attach_cmd->add_option("--checkpoint", attach.checkpoint, "Baseline checkpoint directory")->required();
  attach_cmd->add_option("--layers", attach.layers, "Comma-separated injection layers");
  attach_cmd->add_option("--latent", attach.latent, "Latent width d'");
  attach_cmd->add_option("--variant", attach.variant, "visual | reflexive | iso_mlp");

  auto* train = app.add_subcommand("train-pvm", "Stage-1 training of the PVM with a frozen backbone");
  add_common(train, common);
  train->add_option("--checkpoint", checkpoint, "Checkpoint with PVM attached")->required();

  std::optional<std::size_t> steps;
  std::string mode;
  auto* profile = app.add_subcommand("profile", "Record attention-mass traces and fit their decay");
  add_common(profile, common);
  profile->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  profile->add_option("--steps", steps, "Text steps to trace");
  profile->add_option("--mode", mode, "stress | task");

  std::optional<std::size_t> lens_episodes;
  auto* lens = app.add_subcommand("logitlens", "Per-layer KL to the final distribution");
  add_common(lens, common);
  lens->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  lens->add_option("--episodes", lens_episodes, "Episodes to probe");

  SelectArgs select;
  auto* select_cmd = app.add_subcommand("select-layers", "Choose injection layers from a traces.csv profile");
  select_cmd->add_option("--traces", select.traces, "traces.csv from profile")->required();
  select_cmd->add_option("--strategy", select.strategy, "peak | max_decay | strided")->required();
  select_cmd->add_option("--k", select.k, "Number of layers");
  select_cmd->add_option("--stride", select.stride, "Stride for the strided strategy");
  select_cmd->add_option("--onset", select.onset, "Onset layer for strided (default: from profile)");
  select_cmd->add_option("--n-layers", select.n_layers, "Layer count (default: from traces)");
  select_cmd->add_option("--out", select.out_dir, "Directory for selection.json");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Length-bucketed recall accuracy");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--model", eval.models, "name=checkpoint; the first is the gain reference");
  eval_cmd->add_option("--seeds", eval.seeds, "Without --model: comma-separated seeds for the full study");
  eval_cmd->add_option("--variants", eval.variants, "Without --model: PVM variants to train");
  eval_cmd->add_option("--jobs", eval.jobs, "Evaluation threads");

  std::string baseline;
  std::optional<std::size_t> bench_tokens;
  auto* bench = app.add_subcommand("bench", "Decode latency (TPOT) with the KV cache");
  add_common(bench, common);
  bench->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  bench->add_option("--baseline", baseline, "Second checkpoint to compare against");
  bench->add_option("--tokens", bench_tokens, "Timed tokens per run");

  std::string export_out;
  auto* export_cmd = app.add_subcommand("export", "Dump checkpoint parameters as JSON");
  export_cmd->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  export_cmd->add_option("--out", export_out, "Output JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("USAGE", e.what(), kExitUsage);
    return kExitUsage;
  }

  try {
    if (*pretrain) return cmd_pretrain(common);
    if (*attach_cmd) return cmd_attach(common, attach);
    if (*train) return cmd_train_pvm(common, checkpoint);
    if (*profile) return cmd_profile(common, checkpoint, steps, mode);
    if (*lens) return cmd_logitlens(common, checkpoint, lens_episodes);
    if (*select_cmd) return cmd_select(select);
    if (*eval_cmd) return cmd_eval(common, eval);
    if (*bench) return cmd_bench(common, checkpoint, baseline, bench_tokens);
    if (*export_cmd) return cmd_export(checkpoint, export_out);
  } catch (const Error& e) {
    const int code = exit_code_for(e.kind());
    report_error(e.code(), e.what(), code);
    return code;
  } catch (const fs::filesystem_error& e) {
    report_error("IO_ERROR", e.what(), kExitIo);
    return kExitIo;
  } catch (const std::exception& e) {
    report_error("INTERNAL", e.what(), 1);
    return 1;
  }
  return kExitUsage;
}
