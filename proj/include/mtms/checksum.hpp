#pragma once

#include <cstddef>
#include <span>
#include <string>

namespace mtms {

/// Lower-case hex SHA-256 of a byte range.
std::string sha256_hex(std::span<const std::byte> bytes);

std::string sha256_file(const std::string& path);

}  // namespace mtms
