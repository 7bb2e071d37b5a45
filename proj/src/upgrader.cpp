#include "miniwfl/upgrader.hpp"

#include <algorithm>

#include "miniwfl/error.hpp"

namespace miniwfl {

namespace {

template <typename Fn>
void for_each_clause(Json& doc, Fn&& fn) {
  auto visit = [&](Json& list) {
    if (!list.is_array()) return;
    for (auto& c : list) fn(c);
  };
  visit(doc["requirements"]);
  visit(doc["hints"]);
  if (doc.contains("steps") && doc["steps"].is_array()) {
    for (auto& step : doc["steps"]) {
      visit(step["requirements"]);
      visit(step["hints"]);
    }
  }
}

// Before v1.1 result reuse was a vendor extension.
void adopt_work_reuse(Json& doc) {
  for_each_clause(doc, [](Json& clause) {
    const std::string cls = clause.value("class", "");
    const auto colon = cls.find(':');
    if (colon != std::string::npos && cls.substr(colon + 1) == "WorkReuse") clause["class"] = "WorkReuse";
  });
}

std::size_t version_index(const std::string& version) {
  const auto versions = known_versions();
  auto it = std::find(versions.begin(), versions.end(), version);
  if (it == versions.end()) throw Error(ErrorCode::UnknownVersion, "unknown version '" + version + "'");
  return static_cast<std::size_t>(it - versions.begin());
}

// Run documents may declare their own, older version; each is migrated from
// where it stands.
Json migrate(Json doc, std::size_t to) {
  const auto& table = migrations();
  const std::string version = doc.value("cwlVersion", "");
  const std::size_t from = version_index(version);
  if (to < from) throw Error(ErrorCode::DowngradeError, "cannot downgrade from " + version + " to " + known_versions()[to]);
  for (std::size_t i = from; i < to; ++i) {
    for (const auto& rule : table[i].rules) rule.apply(doc);
    doc["cwlVersion"] = table[i].to;
  }
  if (doc.contains("steps") && doc["steps"].is_array()) {
    for (auto& step : doc["steps"]) {
      if (step.contains("run") && step["run"].is_object()) step["run"] = migrate(step["run"], to);
    }
  }
  return doc;
}

}  // namespace

const std::vector<Migration>& migrations() {
  static const std::vector<Migration> table{
      {"v1.0", "v1.1", {{"adopt-work-reuse", adopt_work_reuse}}},
      {"v1.1", "v1.2", {}},
  };
  return table;
}

std::vector<std::string> known_versions() {
  std::vector<std::string> out{migrations().front().from};
  for (const auto& m : migrations()) out.push_back(m.to);
  return out;
}

Document upgrade(const Document& doc, const std::string& target) {
  const std::size_t to = version_index(target);
  const std::size_t from = version_index(doc.version);
  if (to < from) {
    throw Error(ErrorCode::DowngradeError, "cannot downgrade from " + doc.version + " to " + target);
  }
  const Json before = to_json(doc);
  Json after = migrate(before, to);
  if (after == before) return doc;
  return document_from_json(after, doc.base_uri);
}

}  // namespace miniwfl
