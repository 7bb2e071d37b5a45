#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "miniwfl/document.hpp"
#include "miniwfl/expression.hpp"
#include "miniwfl/planner.hpp"

namespace miniwfl {

using Clock = std::chrono::system_clock;

// Per-attempt sandbox. Inputs live under root/inputs/<n>/<basename>, owned
// read-only; the tool writes only to outdir (its working directory) and tmpdir.
struct StagedDirectory {
  std::filesystem::path root;
  std::filesystem::path outdir;
  std::filesystem::path tmpdir;
  // Input values with paths rewritten to their staged locations.
  std::map<std::string, Json> inputs;
  // Staged input path -> in-container path, in staging order.
  std::vector<std::pair<std::filesystem::path, std::string>> mounts;
  // Named pipes fed from the source file while the tool runs.
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> fifos;  // fifo, source
};

enum class Outcome { Success, TemporaryFailure, PermanentFailure };
const char* to_string(Outcome outcome);

// What went wrong in a failed attempt; classify_failure maps it to a class.
enum class FailureCause {
  None,
  ExitStatus,
  Timeout,
  LaunchRace,
  MissingExecutable,
  StagingError,
  OutputMissing,
  OutputAmbiguous,
  ExpressionError,
  ResourceUnsatisfiable,
  CacheError,
};
const char* to_string(FailureCause cause);

struct TaskAttempt {
  std::string task_id;
  int attempt_number = 1;
  std::vector<std::string> argv;
  std::map<std::string, std::string> env;
  Clock::time_point start_time{};
  Clock::time_point end_time{};
  int exit_code = -1;
  std::filesystem::path stdout_path;
  std::filesystem::path stderr_path;
  Outcome outcome = Outcome::PermanentFailure;
  FailureCause cause = FailureCause::None;
  std::string message;
  std::optional<std::string> container_image;
};

// Fully prepared invocation: the output of staging plus command-line build.
struct AttemptPlan {
  std::string task_id;
  int attempt_number = 1;
  std::vector<std::string> argv;
  std::map<std::string, std::string> env;
  StagedDirectory staged;
  ResourceRequest resources;
  std::optional<std::string> container_image;
  std::optional<std::filesystem::path> stdin_path;
  std::filesystem::path stdout_path;
  std::filesystem::path stderr_path;
  std::set<int> success_codes{0};
};

// One process launch: the seam between the engine and the operating system.
struct LaunchSpec {
  std::vector<std::string> argv;
  std::map<std::string, std::string> env;
  std::filesystem::path cwd;
  std::optional<std::filesystem::path> stdin_path;
  std::filesystem::path stdout_path;
  std::filesystem::path stderr_path;
  std::optional<std::chrono::milliseconds> timeout;
  bool drop_privileges = true;  // give up DAC overrides when running as root
};

struct LaunchResult {
  int exit_code = -1;
  bool timed_out = false;
  std::optional<std::string> launch_error;
  bool transient = false;  // launch failed for a retryable reason (fork EAGAIN)
};

class Launcher {
 public:
  virtual ~Launcher() = default;
  virtual LaunchResult launch(const LaunchSpec& spec) const = 0;
};

// fork/exec with its own process group, stdio redirected to files, and a
// wall-clock limit enforced with SIGKILL to the group.
class PosixLauncher final : public Launcher {
 public:
  LaunchResult launch(const LaunchSpec& spec) const override;
};

struct RuntimeOptions {
  bool use_containers = true;
  bool enable_streaming = false;
  std::string container_cli = "docker";
  std::shared_ptr<const Launcher> launcher = std::make_shared<PosixLauncher>();
};

inline constexpr const char* kContainerOutdir = "/miniwfl/outdir";
inline constexpr const char* kContainerTmpdir = "/tmp";
inline constexpr const char* kBasePath = "/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin";

/// argv for a tool invocation. `ctx.inputs` must hold the staged values so
/// File inputs render as their in-sandbox paths.
std::vector<std::string> build_command_line(const ToolDescription& tool, const EvalContext& ctx);

/// Creates a fresh sandbox under `work_root` and stages `inputs` into it.
/// Throws Error(StagingError) on missing inputs, checksum drift or a name
/// collision in the output directory.
StagedDirectory stage(const TaskNode& node, int attempt_number, const std::map<std::string, Json>& inputs,
                      const std::filesystem::path& work_root, const RuntimeOptions& options);

/// Deletes a sandbox, restoring write permission on read-only parts first.
void remove_sandbox(const std::filesystem::path& root);

/// True when `container_cli` resolves to an executable on PATH.
bool container_runtime_available(const std::string& container_cli);

/// Environment of an attempt: HOME, TMPDIR, PATH plus declared variables.
std::map<std::string, std::string> build_environment(const TaskNode& node, const StagedDirectory& staged,
                                                     const EvalContext& ctx);

/// The container CLI invocation wrapping `plan.argv` (see docs/dialect.md).
std::vector<std::string> container_command(const AttemptPlan& plan, const std::string& container_cli);

/// Rewrites host sandbox paths inside `text` to their in-container paths.
std::string to_container_path(const std::string& text, const StagedDirectory& staged);

/// Runs the planned process and reports the attempt.
TaskAttempt execute(const AttemptPlan& plan, const RuntimeOptions& options);

/// Output values of a successful attempt. Throws Error(OutputMissing),
/// Error(OutputAmbiguous) or Error(TypeError).
std::map<std::string, Json> collect_outputs(const ToolDescription& tool, const StagedDirectory& staged,
                                            const TaskAttempt& attempt, const EvalContext& ctx);

struct AttemptResult {
  TaskAttempt attempt;
  std::map<std::string, Json> outputs;
  std::filesystem::path sandbox;
};

/// stage -> build_command_line -> execute -> collect_outputs for one attempt.
/// Never throws for task-level failures; they are reported in the attempt.
AttemptResult run_attempt(const TaskNode& node, int attempt_number, const std::map<std::string, Json>& inputs,
                          const ResourceRequest& resources, const std::filesystem::path& work_root,
                          const RuntimeOptions& options);

/// Directory-safe form of a task id.
std::string sanitize_task_id(const std::string& id);

}  // namespace miniwfl
