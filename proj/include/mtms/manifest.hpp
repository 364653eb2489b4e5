#pragma once

#include "mtms/dataset.hpp"

#include <filesystem>

namespace mtms {

/// Writes `<dir>/<name>.json` (manifest) and `<dir>/<name>.bin` (pixels as
/// little-endian float32, row-major, samples concatenated in manifest order).
/// Returns the manifest path.
std::filesystem::path write_dataset(const Dataset& ds, const std::filesystem::path& dir);

/// Reads a dataset from its manifest; the payload path is resolved relative to it.
Dataset read_dataset(const std::filesystem::path& manifest);

/// Little-endian float32 helpers shared with the checkpoint format.
void append_f32_le(std::string& out, float v);
float read_f32_le(const char* p);

}  // namespace mtms
