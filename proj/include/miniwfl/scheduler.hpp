#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "miniwfl/cache.hpp"
#include "miniwfl/planner.hpp"
#include "miniwfl/runtime.hpp"

namespace miniwfl {

enum class OnError { Stop, Continue };

struct RunConfig {
  int parallelism = 1;
  int retries = 0;
  ResourceRequest machine{1, 1024, 1024, std::nullopt};
  bool enable_reuse = true;
  OnError on_error = OnError::Stop;
  std::filesystem::path work_dir;  // sandboxes and cache copies go here
  std::string run_id;
};

// One line of the event log. State changes read "From->To"; "Attempt"
// marks the start of an attempt and "AttemptFailed" a failed one that is
// retried.
struct Event {
  Clock::time_point ts;
  std::string task;
  std::string transition;
  int attempt = 0;

  Json to_json() const;
};

// What happened to one task (graph node or run-time scatter element).
struct TaskRecord {
  std::string id;
  TaskState state = TaskState::Pending;
  std::string tool_digest;
  std::map<std::string, Json> inputs;
  std::map<std::string, Json> outputs;
  std::optional<ResourceRequest> resources;
  std::vector<TaskAttempt> attempts;
  bool cached = false;
  std::string cache_key;
  std::string message;  // failure or skip reason
};

enum class RunStatus { Success, PermanentFail };
const char* to_string(RunStatus status);

struct RunResult {
  RunStatus status = RunStatus::Success;
  std::map<std::string, Json> outputs;
  std::vector<Event> events;
  std::map<std::string, TaskRecord> tasks;
  std::vector<std::string> warnings;
  std::string run_id;
  Clock::time_point started{};
  Clock::time_point finished{};
};

struct Services {
  RuntimeOptions runtime;
  const Cache* cache = nullptr;                         // no reuse when null
  std::function<void(const Event&)> on_event;           // optional live feed
  std::function<void(const std::string&)> on_warning;   // optional
};

enum class FailureClass { Temporary, Permanent };
const char* to_string(FailureClass c);

/// Timeouts and launch races are worth retrying; everything else is not.
FailureClass classify_failure(const TaskAttempt& attempt, FailureCause cause);

struct AdmissionCandidate {
  std::string id;
  ResourceRequest request;
};

// Resources held by running attempts.
struct Ledger {
  int running = 0;
  long long cores = 0;
  long long ram_mib = 0;
  long long disk_mib = 0;
};

/// First-fit over `ready` (already in layer, id order): each candidate is
/// admitted when one more running task and its minima still fit.
std::vector<std::string> admission(const std::vector<AdmissionCandidate>& ready, const Ledger& running,
                                   const RunConfig& cfg);

/// Drives the graph to completion. Never throws for task failures.
RunResult run(DataflowGraph graph, const RunConfig& cfg, const Services& services);

/// Fresh run identifier: UTC time plus random suffix.
std::string new_run_id();

}  // namespace miniwfl
