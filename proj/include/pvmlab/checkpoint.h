#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "pvmlab/model.h"

namespace pvmlab {

inline constexpr int kCheckpointFormatVersion = 1;

// A checkpoint is a directory holding manifest.json (format version, model
// and PVM config, parameter names/shapes/offsets) and weights.bin, the
// parameters as little-endian f64 in sorted-name order.
void save_checkpoint(const Model& model, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);

// Hex SHA-256 digests.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

// Digest over names, shapes and raw value bytes of every parameter whose name
// starts with `prefix` (or does not, when `exclude` is set).
std::string parameter_hash(const ParameterStore& params, std::string_view prefix = "", bool exclude = false);
// Backbone = everything outside the "pvm." namespace.
std::string backbone_hash(const ParameterStore& params);

std::string config_hash(const ModelConfig& model, const std::optional<PvmConfig>& pvm);

}  // namespace pvmlab
