#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace miniwfl {

/// Lowercase 64-hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// Lowercase 64-hex SHA-256 of a file's content. Throws Error(IOError).
std::string sha256_file(const std::filesystem::path& path);

}  // namespace miniwfl
