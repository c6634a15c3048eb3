#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "pvmlab/checkpoint.h"
#include "pvmlab/error.h"
#include "support.h"

using namespace pvmlab;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pvmlab_ckpt_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

template <class F>
std::pair<std::string, ErrorKind> error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return {e.code(), e.kind()};
  }
  return {"", ErrorKind::kInvalidArgument};
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  Model m(pvmlab::testing::tiny_model(4));
  m.attach_pvm(pvmlab::testing::tiny_pvm(), 9);
  const fs::path a = fresh_dir("a"), b = fresh_dir("b");
  save_checkpoint(m, a);
  const Model loaded = load_checkpoint(a);
  save_checkpoint(loaded, b);
  EXPECT_EQ(slurp(a / "weights.bin"), slurp(b / "weights.bin"));
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  EXPECT_EQ(parameter_hash(m.params()), parameter_hash(loaded.params()));
  EXPECT_EQ(loaded.config(), m.config());
  ASSERT_TRUE(loaded.pvm_config());
  EXPECT_EQ(*loaded.pvm_config(), *m.pvm_config());
  EXPECT_EQ(sha256_file(a / "weights.bin"), sha256_file(b / "weights.bin"));
}

TEST(Checkpoint, LoadedModelComputesTheSameLogits) {
  const Model m(pvmlab::testing::tiny_model(6));
  const fs::path dir = fresh_dir("logits");
  save_checkpoint(m, dir);
  const Model loaded = load_checkpoint(dir);
  const Tensor v = pvmlab::testing::random_tensor({4, 16}, 1, 0.3);
  const std::vector<int> toks{1, 2, 3, 20, 21};
  EXPECT_EQ(pvmlab::testing::max_abs_diff(m.forward(v, toks).logits, loaded.forward(v, toks).logits), 0.0);
}

TEST(Checkpoint, Errors) {
  EXPECT_EQ(error_of([] { load_checkpoint(fresh_dir("missing")); }).first, "CHECKPOINT_NOT_FOUND");

  const Model m(pvmlab::testing::tiny_model(1));
  const fs::path dir = fresh_dir("bad");
  save_checkpoint(m, dir);
  std::string blob = slurp(dir / "weights.bin");
  blob[17] ^= 0x01;
  std::ofstream(dir / "weights.bin", std::ios::binary | std::ios::trunc) << blob;
  auto [code, kind] = error_of([&] { load_checkpoint(dir); });
  EXPECT_EQ(code, "CHECKPOINT_CORRUPT");
  EXPECT_EQ(kind, ErrorKind::kIo);

  std::ofstream(dir / "weights.bin", std::ios::binary | std::ios::trunc) << blob.substr(0, 13);
  EXPECT_EQ(error_of([&] { load_checkpoint(dir); }).first, "CHECKPOINT_CORRUPT");

  std::ofstream(dir / "manifest.json", std::ios::trunc) << "{not json";
  EXPECT_EQ(error_of([&] { load_checkpoint(dir); }).first, "CHECKPOINT_CORRUPT");

  const fs::path vdir = fresh_dir("version");
  save_checkpoint(m, vdir);
  std::string manifest = slurp(vdir / "manifest.json");
  const auto pos = manifest.find("\"format_version\": 1");
  ASSERT_NE(pos, std::string::npos);
  manifest.replace(pos, 19, "\"format_version\": 99");
  std::ofstream(vdir / "manifest.json", std::ios::trunc) << manifest;
  EXPECT_EQ(error_of([&] { load_checkpoint(vdir); }).first, "CHECKPOINT_VERSION");
}

TEST(Hashes, Sha256KnownDigest) {
  EXPECT_EQ(sha256_hex(std::string_view("abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Hashes, BackboneHashIgnoresPvm) {
  Model m(pvmlab::testing::tiny_model(2));
  const std::string before = backbone_hash(m.params());
  const std::string whole = parameter_hash(m.params());
  m.attach_pvm(pvmlab::testing::tiny_pvm(), 3);
  EXPECT_EQ(backbone_hash(m.params()), before);
  EXPECT_NE(parameter_hash(m.params()), whole);
  m.params().get("unembed").mutable_data()[0] += 1e-15;
  EXPECT_NE(backbone_hash(m.params()), before);
}
