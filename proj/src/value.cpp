#include "miniwfl/value.hpp"

#include <algorithm>
#include <system_error>
#include <vector>

#include "miniwfl/digest.hpp"
#include "miniwfl/error.hpp"

namespace miniwfl {

namespace fs = std::filesystem;

Json FileValue::to_json() const {
  Json out = {{"class", "File"},
              {"path", path.string()},
              {"basename", basename},
              {"size", size},
              {"checksum", checksum}};
  if (format) out["format"] = *format;
  if (streamable) out["streamable"] = true;
  return out;
}

FileValue FileValue::from_json(const Json& value) {
  if (!is_file_value(value)) {
    throw Error(ErrorCode::TypeError, "value is not a File: " + value.dump());
  }
  FileValue file;
  file.path = value.at("path").get<std::string>();
  file.basename = value.value("basename", file.path.filename().string());
  file.size = value.value("size", std::uint64_t{0});
  file.checksum = value.value("checksum", std::string{});
  if (value.contains("format") && value["format"].is_string()) {
    file.format = value["format"].get<std::string>();
  }
  file.streamable = value.value("streamable", false);
  return file;
}

FileValue FileValue::capture(const fs::path& path,
                             std::optional<std::string> format) {
  std::error_code ec;
  fs::path absolute = fs::absolute(path, ec).lexically_normal();
  if (ec || !fs::is_regular_file(absolute, ec)) {
    throw Error(ErrorCode::NotFound, "no such file: " + path.string());
  }
  FileValue file;
  file.path = absolute;
  file.basename = absolute.filename().string();
  file.size = fs::file_size(absolute, ec);
  if (ec) {
    throw Error(ErrorCode::IOError, "cannot stat " + absolute.string());
  }
  file.checksum = "sha256$" + sha256_file(absolute);
  file.format = std::move(format);
  return file;
}

Json capture_directory(const fs::path& path) {
  std::error_code ec;
  fs::path absolute = fs::absolute(path, ec).lexically_normal();
  if (ec || !fs::is_directory(absolute, ec)) {
    throw Error(ErrorCode::NotFound, "no such directory: " + path.string());
  }
  std::vector<std::string> lines;
  for (const auto& entry : fs::recursive_directory_iterator(absolute)) {
    const std::string rel = fs::relative(entry.path(), absolute).generic_string();
    if (entry.is_regular_file()) {
      lines.push_back(rel + " " + sha256_file(entry.path()));
    } else if (entry.is_directory()) {
      lines.push_back(rel + "/");
    }
  }
  std::sort(lines.begin(), lines.end());
  std::string listing;
  for (const auto& line : lines) listing += line + "\n";
  return {{"class", "Directory"},
          {"path", absolute.string()},
          {"basename", absolute.filename().string()},
          {"checksum", "sha256$" + sha256_hex(listing)}};
}

bool is_file_value(const Json& value) {
  return value.is_object() && value.value("class", "") == "File" &&
         value.contains("path");
}

bool is_directory_value(const Json& value) {
  return value.is_object() && value.value("class", "") == "Directory";
}

bool value_conforms(const Json& value, DataType type) {
  if (value.is_null()) {
    return type.optional;
  }
  if (type.array) {
    if (!value.is_array()) return false;
    for (const auto& item : value) {
      if (!value_conforms(item, type.element())) return false;
    }
    return true;
  }
  switch (type.base) {
    case BaseType::File: return is_file_value(value);
    case BaseType::Directory: return is_directory_value(value);
    case BaseType::String: return value.is_string();
    case BaseType::Int: return value.is_number_integer();
    case BaseType::Float: return value.is_number();
    case BaseType::Boolean: return value.is_boolean();
    case BaseType::Null: return false;
  }
  return false;
}

Json content_view(const Json& value) {
  if (is_directory_value(value)) {
    return {{"class", "Directory"}, {"checksum", value.value("checksum", "")}};
  }
  if (is_file_value(value)) {
    Json out = {{"class", "File"},
                {"size", value.value("size", 0)},
                {"checksum", value.value("checksum", "")}};
    if (value.contains("format")) out["format"] = value["format"];
    return out;
  }
  if (value.is_array()) {
    Json out = Json::array();
    for (const auto& item : value) out.push_back(content_view(item));
    return out;
  }
  if (value.is_object()) {
    Json out = Json::object();
    for (const auto& [key, item] : value.items()) out[key] = content_view(item);
    return out;
  }
  return value;
}

}  // namespace miniwfl
