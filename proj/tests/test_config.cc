#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "pvmlab/error.h"
#include "pvmlab/run_config.h"

using namespace pvmlab;
namespace fs = std::filesystem;

namespace {

template <class F>
std::string error_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    return e.code();
  }
  return "";
}

fs::path temp_file(const std::string& name, const std::string& text) {
  const fs::path p = fs::temp_directory_path() / ("pvmlab_cfg_" + name);
  std::ofstream(p, std::ios::trunc) << text;
  return p;
}

}  // namespace

TEST(RunConfig, YamlRoundTrip) {
  RunConfig c = RunConfig::defaults();
  c.seed = 17;
  c.output_dir = "runs/x y";
  c.pvm.injection_layers = {1, 5};
  c.pvm.variant = PvmVariant::kReflexive;
  c.stage1.adam.lr = 0.0012345678901234567;
  c.profile.band = {2, 3};
  c.resolve_seeds();
  const fs::path p = fs::temp_directory_path() / "pvmlab_cfg_roundtrip.yaml";
  save_run_config(p, c);
  const RunConfig back = load_run_config(p);
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.stage1.adam.lr, c.stage1.adam.lr);
  EXPECT_EQ(back.model.seed, 17u);
  EXPECT_EQ(back.stage1.seed, Rng::derive_seed(17, "stage1"));
}

TEST(RunConfig, MissingKeysKeepDefaults) {
  const RunConfig c = load_run_config(temp_file("partial.yaml", "seed: 3\nmodel:\n  n_layers: 6\n"));
  const RunConfig d = RunConfig::defaults();
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.model.n_layers, 6u);
  EXPECT_EQ(c.model.d_model, d.model.d_model);
  EXPECT_EQ(c.stage1.steps, d.stage1.steps);
  EXPECT_EQ(load_run_config(temp_file("empty.yaml", "")).seed, 0u);
}

TEST(RunConfig, Errors) {
  EXPECT_EQ(error_code([] { load_run_config("/nonexistent/pvmlab.yaml"); }), "CONFIG_NOT_FOUND");
  EXPECT_EQ(error_code([] { load_run_config(temp_file("bad.yaml", "model: [1, 2\n")); }), "CONFIG_PARSE");
  EXPECT_EQ(error_code([] { load_run_config(temp_file("type.yaml", "model:\n  n_layers: many\n")); }), "CONFIG_INVALID");
  EXPECT_EQ(error_code([] { load_run_config(temp_file("sect.yaml", "model: 4\n")); }), "CONFIG_INVALID");

  RunConfig c = RunConfig::defaults();
  c.profile.mode = "sideways";
  EXPECT_EQ(error_code([&] { c.validate(); }), "CONFIG_INVALID");
  c = RunConfig::defaults();
  c.profile.band = {8};
  EXPECT_EQ(error_code([&] { c.validate(); }), "CONFIG_INVALID");
  c = RunConfig::defaults();
  c.eval.episode.text_length = 2000;
  EXPECT_EQ(error_code([&] { c.validate(); }), "CONFIG_INVALID");
  c = RunConfig::defaults();
  c.pvm.injection_layers = {9};
  EXPECT_FALSE(error_code([&] { c.validate(); }).empty());
  EXPECT_NO_THROW(RunConfig::defaults().validate());
}

TEST(RunConfig, SeedFromEnvironment) {
  ::unsetenv("PVMLAB_SEED");
  EXPECT_FALSE(seed_from_env());
  ::setenv("PVMLAB_SEED", "42", 1);
  EXPECT_EQ(seed_from_env(), 42u);
  ::setenv("PVMLAB_SEED", "-1", 1);
  EXPECT_EQ(error_code([] { seed_from_env(); }), "CONFIG_INVALID");
  ::setenv("PVMLAB_SEED", "99999999999999999999999", 1);
  EXPECT_EQ(error_code([] { seed_from_env(); }), "CONFIG_INVALID");
  ::unsetenv("PVMLAB_SEED");
}

TEST(Yaml, ScalarsAndQuoting) {
  const Json j = yaml_text_to_json("a: 1\nb: -2\nc: 0.5\nd: true\ne: ~\nf: \"7\"\ng: [1, 2]\nh: text\n");
  EXPECT_EQ(j["a"], 1);
  EXPECT_EQ(j["b"], -2);
  EXPECT_EQ(j["c"], 0.5);
  EXPECT_EQ(j["d"], true);
  EXPECT_TRUE(j["e"].is_null());
  EXPECT_EQ(j["f"], "7");
  EXPECT_EQ(j["g"], Json::array({1, 2}));
  EXPECT_EQ(j["h"], "text");
  EXPECT_EQ(yaml_text_to_json(json_to_yaml_text(j)), j);
}
