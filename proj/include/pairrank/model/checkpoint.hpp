#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "pairrank/model/model.hpp"

namespace pairrank::model {

inline constexpr std::string_view kCheckpointMagic = "PAIRNET-CKPT-v1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json config_to_json(const BackboneConfig& config);
BackboneConfig config_from_json(const nlohmann::json& j);

/// Writes a self-describing checkpoint:
///   line 1  "PAIRNET-CKPT-v1"
///   line 2  one-line JSON header (config, tensor table, running-stat table, metadata)
///   rest    raw little-endian float64 payload referenced by the header offsets
/// Reloading reproduces every parameter bit-for-bit.
void save_checkpoint(const ModelState& model, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedCheckpoint {
  ModelState model;
  nlohmann::json metadata;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pairrank::model
