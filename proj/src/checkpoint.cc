#include "pvmlab/checkpoint.h"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "pvmlab/config_json.h"
#include "pvmlab/error.h"

namespace pvmlab {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestName = "manifest.json";
constexpr const char* kBlobName = "weights.bin";

[[noreturn]] void io_error(const std::string& code, const std::string& message) {
  throw Error(ErrorKind::kIo, code, message);
}

void append_le(std::string& out, double value) {
  auto bits = std::bit_cast<std::uint64_t>(value);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

double read_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<double>(bits);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_error("FILE_NOT_FOUND", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) io_error("WRITE_FAILED", "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) io_error("WRITE_FAILED", "short write to " + path.string());
}

struct Sha256 {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), EVP_MD_CTX_free};
  Sha256() { EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr); }
  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx.get(), data, n); }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    std::ostringstream ss;
    for (unsigned int i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return ss.str();
  }
};

}  // namespace

std::string sha256_hex(std::span<const unsigned char> bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_hex(std::string_view text) {
  Sha256 h;
  h.update(text.data(), text.size());
  return h.hex();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string parameter_hash(const ParameterStore& params, std::string_view prefix, bool exclude) {
  Sha256 h;
  for (const auto& [name, t] : params.all()) {
    if (name.starts_with(prefix) == exclude) continue;
    h.update(name.data(), name.size() + 1);
    const std::string shape = shape_str(t.shape());
    h.update(shape.data(), shape.size());
    h.update(t.data().data(), t.data().size_bytes());
  }
  return h.hex();
}

std::string backbone_hash(const ParameterStore& params) { return parameter_hash(params, "pvm.", true); }

std::string config_hash(const ModelConfig& model, const std::optional<PvmConfig>& pvm) {
  Json j{{"model", model}};
  j["pvm"] = pvm ? Json(*pvm) : Json(nullptr);
  return sha256_hex(canonical_json(j));
}

void save_checkpoint(const Model& model, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) io_error("WRITE_FAILED", "cannot create " + dir.string() + ": " + ec.message());

  std::string blob;
  Json params = Json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : model.params().all()) {
    for (double v : t.data()) append_le(blob, v);
    params.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"length", t.size()}});
    offset += t.size();
  }
  Json manifest{{"format_version", kCheckpointFormatVersion},
                {"model", model.config()},
                {"pvm", model.pvm_config() ? Json(*model.pvm_config()) : Json(nullptr)},
                {"blob", kBlobName},
                {"dtype", "f64le"},
                {"params", params},
                {"blob_sha256", sha256_hex(blob)}};
  write_file(dir / kBlobName, blob);
  write_file(dir / kManifestName, manifest.dump(2) + "\n");
}

Model load_checkpoint(const fs::path& dir) {
  const fs::path manifest_path = dir / kManifestName;
  if (!fs::exists(manifest_path)) io_error("CHECKPOINT_NOT_FOUND", "no checkpoint manifest at " + manifest_path.string());
  Json manifest;
  try {
    manifest = Json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    io_error("CHECKPOINT_CORRUPT", "manifest parse error: " + std::string(e.what()));
  }
  try {
    if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion)
      io_error("CHECKPOINT_VERSION", "unsupported checkpoint format version " + manifest.at("format_version").dump());
    ModelConfig config = manifest.at("model").get<ModelConfig>();
    std::optional<PvmConfig> pvm;
    if (!manifest.at("pvm").is_null()) pvm = manifest.at("pvm").get<PvmConfig>();
    const std::string blob = read_file(dir / manifest.at("blob").get<std::string>());
    if (blob.size() % 8 != 0) io_error("CHECKPOINT_CORRUPT", "weights blob size is not a multiple of 8");
    if (manifest.contains("blob_sha256") && manifest.at("blob_sha256").get<std::string>() != sha256_hex(blob))
      io_error("CHECKPOINT_CORRUPT", "weights blob does not match its recorded digest");
    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
    const std::size_t n_values = blob.size() / 8;
    ParameterStore store;
    for (const auto& entry : manifest.at("params")) {
      const auto name = entry.at("name").get<std::string>();
      const Shape shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto length = entry.at("length").get<std::size_t>();
      if (shape_numel(shape) != length || offset + length > n_values)
        io_error("CHECKPOINT_CORRUPT", "parameter " + name + " does not fit the weights blob");
      std::vector<double> values(length);
      for (std::size_t i = 0; i < length; ++i) values[i] = read_le(bytes + 8 * (offset + i));
      store.add(name, Tensor(shape, std::move(values), true));
    }
    return Model(config, std::move(store), pvm);
  } catch (const nlohmann::json::exception& e) {
    io_error("CHECKPOINT_CORRUPT", "manifest field error: " + std::string(e.what()));
  }
}

}  // namespace pvmlab
