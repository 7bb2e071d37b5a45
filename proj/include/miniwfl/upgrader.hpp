#pragma once

#include <functional>
#include <string>
#include <vector>

#include "miniwfl/document.hpp"

namespace miniwfl {

// One structural rewrite over the normalized JSON form of a single document
// (not its inlined run documents; upgrade recurses into those itself).
struct RewriteRule {
  std::string name;
  std::function<void(Json&)> apply;
};

struct Migration {
  std::string from;
  std::string to;
  std::vector<RewriteRule> rules;
};

/// The migration table, oldest first: v1.0 -> v1.1 -> v1.2.
const std::vector<Migration>& migrations();

/// Versions the engine understands, oldest first.
std::vector<std::string> known_versions();

/// Upgrades `doc` (and every inlined run document) to `target`.
/// Upgrading to the document's own version returns it unchanged.
/// Throws Error(UnknownVersion) or Error(DowngradeError).
Document upgrade(const Document& doc, const std::string& target);

}  // namespace miniwfl
