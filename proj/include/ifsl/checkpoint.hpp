#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "ifsl/model.hpp"
#include "ifsl/parameter_store.hpp"

namespace ifsl {

// Binary layout: "MCKP", u32 version, u32 n_params, then per parameter
// u16 name length, name, u8 rank, rank x u32 dims, float32 data; followed by
// a u32 byte length and a JSON metadata trailer. Values must already be
// float32-representable (see ParameterStore::round_to_f32) so that a
// round trip is lossless.
std::string encode_store(const ParameterStore& store, const nlohmann::json& metadata);
ParameterStore decode_store(std::string_view bytes, nlohmann::json* metadata);

void save_store(const ParameterStore& store, const nlohmann::json& metadata,
                const std::filesystem::path& path);
ParameterStore load_store(const std::filesystem::path& path, nlohmann::json* metadata);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

// Model checkpoints carry the config and vocabulary in the trailer under
// "model"; anything else the caller passes is kept as provenance.
void save_checkpoint(const MiniClipModel& model, nlohmann::json metadata, const std::filesystem::path& path);

struct LoadedCheckpoint {
  MiniClipModel model;
  nlohmann::json metadata;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ifsl
