#include "miniwfl/provenance.hpp"

#include <pwd.h>
#include <unistd.h>

#include <fstream>

#include "miniwfl/error.hpp"

namespace miniwfl {

namespace fs = std::filesystem;

namespace {

Json content_map(const std::map<std::string, Json>& values) {
  Json out = Json::object();
  for (const auto& [id, v] : values) out[id] = content_view(v);
  return out;
}

std::string user_name() {
  if (const passwd* pw = getpwuid(geteuid())) return pw->pw_name;
  return std::to_string(geteuid());
}

Json attempt_json(const TaskAttempt& a) {
  Json env = Json::object();
  for (const auto& [k, v] : a.env) env[k] = v;
  Json out{{"attempt", a.attempt_number},
           {"argv", a.argv},
           {"env", env},
           {"startTime", rfc3339(a.start_time)},
           {"endTime", rfc3339(a.end_time)},
           {"exitCode", a.exit_code},
           {"outcome", to_string(a.outcome)}};
  if (a.cause != FailureCause::None) out["cause"] = to_string(a.cause);
  if (!a.message.empty()) out["message"] = a.message;
  if (a.container_image) out["container"] = *a.container_image;
  return out;
}

}  // namespace

Json provenance_record(const RunResult& result, const ProvenanceContext& context) {
  Json tasks = Json::array();
  for (const auto& [id, rec] : result.tasks) {
    Json t{{"id", id},
           {"state", to_string(rec.state)},
           {"toolDigest", rec.tool_digest},
           {"cached", rec.cached},
           {"inputs", content_map(rec.inputs)},
           {"outputs", content_map(rec.outputs)},
           {"attempts", Json::array()}};
    for (const auto& a : rec.attempts) t["attempts"].push_back(attempt_json(a));
    if (rec.resources) {
      t["resources"] = {{"coresMin", rec.resources->cores},
                        {"ramMin", rec.resources->ram_mib},
                        {"diskMin", rec.resources->disk_mib}};
      if (rec.resources->wall_time_max) t["resources"]["wallTimeMax"] = *rec.resources->wall_time_max;
    }
    if (!rec.cache_key.empty()) t["cacheKey"] = rec.cache_key;
    if (!rec.message.empty()) t["message"] = rec.message;
    tasks.push_back(std::move(t));
  }
  Json events = Json::array();
  for (const auto& e : result.events) events.push_back(e.to_json());
  return Json{{"runId", result.run_id},
              {"engine", {{"name", kEngineName}, {"version", kEngineVersion}}},
              {"agent", {{"user", user_name()}}},
              {"workflowDigest", context.workflow_digest},
              {"jobOrder", content_map(context.job_order)},
              {"status", to_string(result.status)},
              {"startTime", rfc3339(result.started)},
              {"endTime", rfc3339(result.finished)},
              {"outputs", content_map(result.outputs)},
              {"tasks", tasks},
              {"events", events},
              {"warnings", result.warnings}};
}

fs::path write_provenance(const RunResult& result, const ProvenanceContext& context, const fs::path& sink) {
  std::error_code ec;
  fs::create_directories(sink, ec);
  if (ec) throw Error(ErrorCode::IOError, "cannot create " + sink.string() + ": " + ec.message());
  const fs::path path = sink / (result.run_id + ".json");
  const fs::path tmp = sink / ("." + result.run_id + ".json.tmp");
  {
    std::ofstream out(tmp);
    out << provenance_record(result, context).dump(2) << "\n";
    if (!out) throw Error(ErrorCode::IOError, "cannot write " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IOError, "cannot write " + path.string() + ": " + ec.message());
  return path;
}

}  // namespace miniwfl
