#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "miniwfl/planner.hpp"
#include "miniwfl/runtime.hpp"

namespace miniwfl {

// Identity of a task execution. All three parts are free of paths, times and
// host names, so equal keys mean the same tool ran on the same content.
struct CacheKey {
  std::string tool_digest;   // tool document plus its effective clauses
  std::string input_digest;  // content view of the bound inputs
  std::string env_digest;    // declared environment, image reference, resources
  bool reusable = true;      // false under WorkReuse enableReuse: false

  /// 64-hex digest of the three parts; the directory name of an entry.
  std::string str() const;
};

/// Deterministic key of a task with fully resolved inputs.
CacheKey cache_key(const TaskNode& node, const std::map<std::string, Json>& inputs,
                   const ResourceRequest& resources);

struct CacheEntry {
  std::string key;
  std::map<std::string, Json> outputs;  // File paths point into the entry
  std::string created_at;
  std::string source_run_id;
};

// <dir>/<first 2 hex>/<key>/entry.json plus files/. Entries are written to a
// temporary sibling and renamed into place, so readers never see a partial
// entry and concurrent writers of one key resolve to the last rename.
class Cache {
 public:
  explicit Cache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const { return dir_; }

  /// Verified entry or nullopt. An entry whose files are missing or whose
  /// checksums drifted is evicted. Throws Error(CacheIOError) on unreadable
  /// storage.
  std::optional<CacheEntry> lookup(const CacheKey& key) const;

  /// Copies the output files into the cache. Throws Error(CacheIOError).
  CacheEntry store(const CacheKey& key, const std::map<std::string, Json>& outputs,
                   const std::string& run_id) const;

  /// Copies an entry's files under `dest` and returns the outputs with their
  /// new paths, so a run never depends on the cache after a hit.
  std::map<std::string, Json> copy_out(const CacheEntry& entry, const std::filesystem::path& dest) const;

  std::filesystem::path entry_dir(const std::string& key) const;

 private:
  std::filesystem::path dir_;
};

/// Current UTC time as RFC 3339 with milliseconds.
std::string rfc3339(std::chrono::system_clock::time_point t);

}  // namespace miniwfl
