#pragma once

#include <cstdio>
#include <string>

#include "miniwfl/document.hpp"

namespace miniwfl::testing {

// Output of a shell command, or nullopt-like empty string with ok=false.
inline bool shell(const std::string& cmd, std::string& out) {
  out.clear();
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return false;
  char buf[4096];
  for (std::size_t n; (n = fread(buf, 1, sizeof buf, p)) > 0;) out.append(buf, n);
  return pclose(p) == 0;
}

inline Document doc_from_yaml(const std::string& text, const std::string& base = "/tmp/inline.cwl") {
  return parse_document(text, base);
}

}  // namespace miniwfl::testing
