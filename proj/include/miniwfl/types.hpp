#pragma once

#include <compare>
#include <string>
#include <string_view>

namespace miniwfl {

enum class BaseType { File, Directory, String, Int, Float, Boolean, Null };

// The dialect's type subset: a base type, optionally wrapped in one array
// level, optionally nullable. "File[]?" is the most elaborate form.
struct DataType {
  BaseType base = BaseType::Null;
  bool array = false;
  bool optional = false;

  bool operator==(const DataType&) const = default;

  DataType element() const { return {base, false, false}; }
  DataType required() const { return {base, array, false}; }
  DataType as_optional() const { return {base, array, true}; }
  DataType as_array() const { return {base, true, optional}; }
};

/// Parses "string", "File[]", "int?", "File[]?". Throws Error(TypeSyntaxError).
DataType parse_type(std::string_view text);
std::string to_string(DataType type);
const char* to_string(BaseType base);

// Sink-side assignability: T -> T, T -> T?, null -> T?. No numeric coercion.
bool assignable(DataType source, DataType sink);

}  // namespace miniwfl
