#include "miniwfl/cache.hpp"

#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <random>
#include <sstream>

#include "miniwfl/digest.hpp"
#include "miniwfl/error.hpp"

namespace miniwfl {

namespace fs = std::filesystem;

std::string rfc3339(std::chrono::system_clock::time_point t) {
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
  const std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms % 1000));
  return out;
}

std::string CacheKey::str() const {
  return sha256_hex(tool_digest + ":" + input_digest + ":" + env_digest);
}

CacheKey cache_key(const TaskNode& node, const std::map<std::string, Json>& inputs,
                   const ResourceRequest& resources) {
  CacheKey key;
  Json clauses = Json::array();
  Json env = Json::object();
  for (const auto* list : {&node.requirements, &node.hints}) {
    for (const auto& c : *list) {
      if (c.kind == ClauseKind::WorkReuse) {
        if (!c.payload.value("enableReuse", true)) key.reusable = false;
        continue;
      }
      if (c.kind == ClauseKind::EnvVars) env["envDef"] = c.payload.value("envDef", Json::object());
      if (c.kind == ClauseKind::Container) env["image"] = c.payload.value("dockerPull", "");
      clauses.push_back(Json{{"class", c.class_name}, {"payload", c.payload}, {"required", list == &node.requirements}});
    }
  }
  key.tool_digest = sha256_hex(canonical_serialize(*node.tool_document) + clauses.dump());

  Json in = Json::object();
  for (const auto& [id, value] : inputs) in[id] = content_view(value);
  key.input_digest = sha256_hex(in.dump());

  env["resources"] = {{"cores", resources.cores}, {"ram", resources.ram_mib}, {"disk", resources.disk_mib}};
  if (resources.wall_time_max) env["resources"]["wallTimeMax"] = *resources.wall_time_max;
  key.env_digest = sha256_hex(env.dump());
  return key;
}

namespace {

[[noreturn]] void cache_error(const std::string& message) {
  throw Error(ErrorCode::CacheIOError, message);
}

std::string unique_suffix() {
  static std::atomic<unsigned> counter{0};
  std::random_device rd;
  std::ostringstream s;
  s << getpid() << "-" << counter++ << "-" << std::hex << rd();
  return s.str();
}

bool intact(const Json& value) {
  if (is_file_value(value)) {
    const fs::path p = value["path"].get<std::string>();
    return fs::is_regular_file(p) && "sha256$" + sha256_file(p) == value.value("checksum", "");
  }
  if (is_directory_value(value)) {
    const fs::path p = value["path"].get<std::string>();
    return fs::is_directory(p) && capture_directory(p)["checksum"] == value["checksum"];
  }
  if (value.is_array()) {
    for (const auto& item : value) {
      if (!intact(item)) return false;
    }
  }
  return true;
}

// Copies every File/Directory in `value` to dest/<n>/<basename>.
Json relocate(const Json& value, const fs::path& dest, int& counter) {
  if (is_file_value(value) || is_directory_value(value)) {
    const fs::path source = value["path"].get<std::string>();
    const std::string basename = value.value("basename", source.filename().string());
    const fs::path dir = dest / std::to_string(counter++);
    fs::create_directories(dir);
    fs::copy(source, dir / basename, fs::copy_options::recursive);
    Json out = value;
    out["path"] = (dir / basename).string();
    return out;
  }
  if (value.is_array()) {
    Json out = Json::array();
    for (const auto& item : value) out.push_back(relocate(item, dest, counter));
    return out;
  }
  return value;
}

// map_files over File and Directory values alike.
template <typename Fn>
Json map_locations(const Json& value, Fn&& fn) {
  if (is_file_value(value) || is_directory_value(value)) return fn(value);
  if (value.is_array()) {
    Json out = Json::array();
    for (const auto& item : value) out.push_back(map_locations(item, fn));
    return out;
  }
  return value;
}

void remove_quietly(const fs::path& p) {
  std::error_code ec;
  fs::remove_all(p, ec);
}

}  // namespace

fs::path Cache::entry_dir(const std::string& key) const { return dir_ / key.substr(0, 2) / key; }

std::optional<CacheEntry> Cache::lookup(const CacheKey& key) const {
  if (!key.reusable) return std::nullopt;
  const std::string k = key.str();
  const fs::path dir = entry_dir(k);
  const fs::path file = dir / "entry.json";
  std::error_code ec;
  if (!fs::exists(file, ec)) return std::nullopt;
  std::ifstream in(file);
  if (!in) cache_error("cannot read " + file.string());
  Json raw = Json::parse(in, nullptr, false);
  bool ok = !raw.is_discarded() && raw.is_object() && raw.value("key", "") == k &&
            raw.contains("outputs") && raw["outputs"].is_object();
  CacheEntry entry;
  if (ok) {
    entry.key = k;
    entry.created_at = raw.value("createdAt", "");
    entry.source_run_id = raw.value("sourceRunId", "");
    for (const auto& [id, value] : raw["outputs"].items()) {
      // Stored paths are relative to the entry so the cache can move.
      Json v = map_locations(value, [&](const Json& f) {
        Json out = f;
        out["path"] = (dir / f["path"].get<std::string>()).string();
        return out;
      });
      if (!intact(v)) {
        ok = false;
        break;
      }
      entry.outputs[id] = std::move(v);
    }
  }
  if (!ok) {
    remove_quietly(dir);
    return std::nullopt;
  }
  return entry;
}

CacheEntry Cache::store(const CacheKey& key, const std::map<std::string, Json>& outputs,
                        const std::string& run_id) const {
  if (!key.reusable) cache_error("task is marked non-reusable");
  const std::string k = key.str();
  const fs::path final_dir = entry_dir(k);
  const fs::path shard = final_dir.parent_path();
  const fs::path tmp = shard / (".tmp-" + k + "-" + unique_suffix());
  try {
    fs::create_directories(tmp / "files");
    int counter = 0;
    Json stored = Json::object();
    for (const auto& [id, value] : outputs) {
      Json v = relocate(value, tmp / "files", counter);
      auto relative = [&](Json f) {
        f["path"] = fs::path(f["path"].get<std::string>()).lexically_relative(tmp).string();
        return f;
      };
      v = map_locations(v, relative);
      stored[id] = std::move(v);
    }
    Json entry{{"key", k},
               {"outputs", stored},
               {"createdAt", rfc3339(std::chrono::system_clock::now())},
               {"sourceRunId", run_id}};
    {
      std::ofstream out(tmp / "entry.json");
      out << entry.dump(2) << "\n";
      if (!out) cache_error("cannot write entry for " + k);
    }
    for (int tries = 0;; ++tries) {
      if (::rename(tmp.c_str(), final_dir.c_str()) == 0) break;
      if ((errno != ENOTEMPTY && errno != EEXIST) || tries > 8) {
        cache_error("cannot publish cache entry " + k + ": " + std::strerror(errno));
      }
      // Last writer wins: move the existing entry aside and retry.
      const fs::path trash = shard / (".old-" + k + "-" + unique_suffix());
      if (::rename(final_dir.c_str(), trash.c_str()) == 0) remove_quietly(trash);
    }
  } catch (const fs::filesystem_error& e) {
    remove_quietly(tmp);
    cache_error(e.what());
  } catch (const Error&) {
    remove_quietly(tmp);
    throw;
  }
  auto entry = lookup(key);
  if (!entry) cache_error("cache entry " + k + " vanished after store");
  return *entry;
}

std::map<std::string, Json> Cache::copy_out(const CacheEntry& entry, const fs::path& dest) const {
  std::map<std::string, Json> out;
  int counter = 0;
  try {
    for (const auto& [id, value] : entry.outputs) out[id] = relocate(value, dest, counter);
  } catch (const fs::filesystem_error& e) {
    cache_error(e.what());
  }
  return out;
}

}  // namespace miniwfl
