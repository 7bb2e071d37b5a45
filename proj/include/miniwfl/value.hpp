#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "miniwfl/types.hpp"

namespace miniwfl {

using Json = nlohmann::json;

// A staged data artifact. On the wire (job orders, outputs, cache entries)
// it is the JSON object {"class": "File", "path", "basename", "size",
// "checksum", "format"?, "streamable"?}; checksum reads "sha256$<hex>".
struct FileValue {
  std::filesystem::path path;
  std::string basename;
  std::uint64_t size = 0;
  std::string checksum;
  std::optional<std::string> format;
  bool streamable = false;

  Json to_json() const;
  static FileValue from_json(const Json& value);

  /// Captures a file on disk: absolute path, size and content checksum.
  static FileValue capture(const std::filesystem::path& path,
                           std::optional<std::string> format = std::nullopt);

  bool operator==(const FileValue&) const = default;
};

/// {"class": "Directory", "path", "basename", "checksum"} where checksum
/// digests the sorted listing of relative paths and file checksums.
Json capture_directory(const std::filesystem::path& path);

bool is_file_value(const Json& value);
bool is_directory_value(const Json& value);

/// Runtime type check of a concrete value against a declared type.
bool value_conforms(const Json& value, DataType type);

/// Replaces every File path in `value` (recursively through arrays) using `fn`.
template <typename Fn>
Json map_files(const Json& value, Fn&& fn) {
  if (is_file_value(value)) {
    return fn(value);
  }
  if (value.is_array()) {
    Json out = Json::array();
    for (const auto& item : value) {
      out.push_back(map_files(item, fn));
    }
    return out;
  }
  return value;
}

/// Strips location from a value: File objects keep size, checksum and format
/// only, so renamed or relocated content compares equal. Used for cache keys and provenance.
Json content_view(const Json& value);

}  // namespace miniwfl
