#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "mtms/nn/tensor.hpp"

namespace mtms {

/// Little-endian float32 blob of all parameter values, in set order.
std::string serialize_values(const nn::ParameterSet<float>& params);

/// SHA-256 of serialize_values(); used to assert that frozen models stay frozen.
std::string parameter_checksum(const nn::ParameterSet<float>& params);

/// Writes `<stem>.json` ({"parameters": [{name, shape}], "metadata": ...}) and
/// `<stem>.bin` (serialize_values).
void save_checkpoint(const nn::ParameterSet<float>& params, const std::filesystem::path& stem,
                     const nlohmann::json& metadata = nlohmann::json::object());

/// Loads values into an already-constructed parameter set; names and shapes
/// must match the manifest exactly. Returns the stored metadata.
nlohmann::json load_checkpoint(const nn::ParameterSet<float>& params, const std::filesystem::path& stem);

/// Metadata only, without touching any parameters.
nlohmann::json read_checkpoint_metadata(const std::filesystem::path& stem);

}  // namespace mtms
