#pragma once

#include <string>
#include <string_view>

namespace psychdx::util {

/// Hex-encoded SHA-256 of the given bytes.
std::string sha256_hex(std::string_view data);

/// Hex-encoded SHA-256 of a file's contents. Throws UnreadableSourceError.
std::string sha256_file_hex(const std::string& path);

}  // namespace psychdx::util
