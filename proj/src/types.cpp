#include "miniwfl/types.hpp"

#include "miniwfl/error.hpp"

namespace miniwfl {

const char* to_string(BaseType base) {
  switch (base) {
    case BaseType::File: return "File";
    case BaseType::Directory: return "Directory";
    case BaseType::String: return "string";
    case BaseType::Int: return "int";
    case BaseType::Float: return "float";
    case BaseType::Boolean: return "boolean";
    case BaseType::Null: return "null";
  }
  return "null";
}

DataType parse_type(std::string_view text) {
  DataType type;
  std::string_view rest = text;
  if (!rest.empty() && rest.back() == '?') {
    type.optional = true;
    rest.remove_suffix(1);
  }
  if (rest.size() >= 2 && rest.substr(rest.size() - 2) == "[]") {
    type.array = true;
    rest.remove_suffix(2);
  }
  if (rest == "File") {
    type.base = BaseType::File;
  } else if (rest == "Directory") {
    type.base = BaseType::Directory;
  } else if (rest == "string") {
    type.base = BaseType::String;
  } else if (rest == "int" || rest == "long") {
    type.base = BaseType::Int;
  } else if (rest == "float" || rest == "double") {
    type.base = BaseType::Float;
  } else if (rest == "boolean") {
    type.base = BaseType::Boolean;
  } else if (rest == "null" && !type.array && !type.optional) {
    type.base = BaseType::Null;
    type.optional = true;
  } else {
    throw Error(ErrorCode::TypeSyntaxError,
                "unparseable type '" + std::string(text) + "'");
  }
  return type;
}

std::string to_string(DataType type) {
  if (type.base == BaseType::Null) {
    return "null";
  }
  std::string out = to_string(type.base);
  if (type.array) out += "[]";
  if (type.optional) out += "?";
  return out;
}

bool assignable(DataType source, DataType sink) {
  if (source.base == BaseType::Null) {
    return sink.optional;
  }
  if (source.optional && !sink.optional) {
    return false;
  }
  return source.base == sink.base && source.array == sink.array;
}

}  // namespace miniwfl
