#include "miniwfl/runtime.hpp"

#include <fcntl.h>
#include <glob.h>
#include <linux/capability.h>
#include <poll.h>
#include <signal.h>
#include <sys/prctl.h>
#include <sys/stat.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include "miniwfl/digest.hpp"
#include "miniwfl/error.hpp"

namespace miniwfl {

namespace fs = std::filesystem;

const char* to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::Success: return "Success";
    case Outcome::TemporaryFailure: return "TemporaryFailure";
    case Outcome::PermanentFailure: return "PermanentFailure";
  }
  return "PermanentFailure";
}

const char* to_string(FailureCause cause) {
  switch (cause) {
    case FailureCause::None: return "None";
    case FailureCause::ExitStatus: return "ExitStatus";
    case FailureCause::Timeout: return "Timeout";
    case FailureCause::LaunchRace: return "LaunchRace";
    case FailureCause::MissingExecutable: return "MissingExecutable";
    case FailureCause::StagingError: return "StagingError";
    case FailureCause::OutputMissing: return "OutputMissing";
    case FailureCause::OutputAmbiguous: return "OutputAmbiguous";
    case FailureCause::ExpressionError: return "ExpressionError";
    case FailureCause::ResourceUnsatisfiable: return "ResourceUnsatisfiable";
    case FailureCause::CacheError: return "CacheError";
  }
  return "None";
}

std::string sanitize_task_id(const std::string& id) {
  std::string out;
  for (char c : id) {
    if (c == '/') {
      out += "--";
    } else if (c == '[') {
      out += '@';
    } else if (c == ']') {
      continue;
    } else if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.') {
      out += c;
    } else {
      out += '_';
    }
  }
  return out.empty() ? "task" : out;
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

namespace {

std::string render_scalar(const Json& value) {
  if (is_file_value(value) || is_directory_value(value)) return value.at("path").get<std::string>();
  return stringify(value);
}

void render(std::vector<std::string>& argv, const std::optional<std::string>& prefix, const Json& value) {
  if (value.is_null()) return;
  if (value.is_boolean()) {
    if (value.get<bool>() && prefix) argv.push_back(*prefix);
    return;
  }
  if (value.is_array()) {
    if (value.empty()) return;
    if (prefix) argv.push_back(*prefix);
    for (const auto& item : value) {
      if (!item.is_null()) argv.push_back(render_scalar(item));
    }
    return;
  }
  if (prefix) argv.push_back(*prefix);
  argv.push_back(render_scalar(value));
}

}  // namespace

std::vector<std::string> build_command_line(const ToolDescription& tool, const EvalContext& ctx) {
  struct Entry {
    int position;
    int group;  // arguments sort before inputs at the same position
    std::string id;
    std::size_t order;
    std::optional<std::string> prefix;
    Json value;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < tool.arguments.size(); ++i) {
    const auto& arg = tool.arguments[i];
    entries.push_back({arg.position.value_or(0), 0, "", i, arg.prefix, interpolate(arg.value, ctx)});
  }
  for (const auto& p : tool.inputs) {
    if (!p.position) continue;
    auto it = ctx.inputs.find(p.id);
    Json value = it != ctx.inputs.end() ? it->second : Json();
    entries.push_back({*p.position, 1, p.id, 0, p.prefix, std::move(value)});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.position, a.group, a.id, a.order) < std::tie(b.position, b.group, b.id, b.order);
  });
  std::vector<std::string> argv = tool.base_command;
  for (const auto& e : entries) render(argv, e.prefix, e.value);
  return argv;
}

// ---------------------------------------------------------------------------
// Staging
// ---------------------------------------------------------------------------

namespace {

constexpr uid_t kNobody = 65534;

[[noreturn]] void staging_error(const std::string& message) {
  throw Error(ErrorCode::StagingError, message);
}

// Read-only for the tool: 0444 files, 0555 directories. When the engine runs
// as root the tree is also handed to an unprivileged owner, because the tool
// process then runs without DAC overrides (see PosixLauncher).
void make_read_only(const fs::path& path) {
  const bool root = geteuid() == 0;
  auto fix = [&](const fs::path& p) {
    const bool dir = fs::is_directory(fs::symlink_status(p));
    if (root && lchown(p.c_str(), kNobody, kNobody) != 0) {
      staging_error("cannot chown " + p.string() + ": " + std::strerror(errno));
    }
    const auto type = fs::symlink_status(p).type();
    // Pipes stay writable for the engine-side feeder.
    if (type != fs::file_type::symlink && type != fs::file_type::fifo) {
      fs::permissions(p, dir ? fs::perms(0555) : fs::perms(0444), fs::perm_options::replace);
    }
  };
  if (fs::is_directory(path)) {
    std::vector<fs::path> all;
    for (const auto& e : fs::recursive_directory_iterator(path)) all.push_back(e.path());
    // Children before parents so directories lose write permission last.
    for (auto it = all.rbegin(); it != all.rend(); ++it) fix(*it);
  }
  fix(path);
}

struct Stager {
  StagedDirectory& staged;
  const RuntimeOptions& options;
  int counter = 0;

  fs::path slot(const std::string& basename) {
    const fs::path dir = staged.root / "inputs" / std::to_string(counter);
    staged.mounts.emplace_back(dir / basename,
                               "/miniwfl/inputs/" + std::to_string(counter) + "/" + basename);
    ++counter;
    fs::create_directories(dir);
    return dir / basename;
  }

  Json file(const Json& value) {
    const fs::path source = value.at("path").get<std::string>();
    const std::string basename = value.value("basename", source.filename().string());
    const std::string checksum = value.value("checksum", "");
    if (!fs::is_regular_file(source)) staging_error("input file missing: " + source.string());
    const bool stream = options.enable_streaming && value.value("streamable", false);
    const fs::path target = slot(basename);
    if (stream) {
      if (!checksum.empty() && "sha256$" + sha256_file(source) != checksum) {
        staging_error("input changed during run: " + source.string());
      }
      if (mkfifo(target.c_str(), 0644) != 0) {
        staging_error("cannot create pipe " + target.string() + ": " + std::strerror(errno));
      }
      staged.fifos.emplace_back(target, source);
    } else {
      std::error_code ec;
      fs::copy_file(source, target, fs::copy_options::overwrite_existing, ec);
      if (ec) staging_error("cannot stage " + source.string() + ": " + ec.message());
      if (!checksum.empty() && "sha256$" + sha256_file(target) != checksum) {
        staging_error("input changed during run: " + source.string());
      }
      make_read_only(target);
    }
    make_read_only(target.parent_path());
    Json out = value;
    out["path"] = target.string();
    out["basename"] = basename;
    return out;
  }

  Json directory(const Json& value) {
    const fs::path source = value.at("path").get<std::string>();
    const std::string basename = value.value("basename", source.filename().string());
    if (!fs::is_directory(source)) staging_error("input directory missing: " + source.string());
    const fs::path target = slot(basename);
    std::error_code ec;
    fs::copy(source, target, fs::copy_options::recursive | fs::copy_options::copy_symlinks, ec);
    if (ec) staging_error("cannot stage " + source.string() + ": " + ec.message());
    if (value.contains("checksum") && capture_directory(target)["checksum"] != value["checksum"]) {
      staging_error("input changed during run: " + source.string());
    }
    make_read_only(target.parent_path());
    Json out = value;
    out["path"] = target.string();
    out["basename"] = basename;
    return out;
  }

  Json value(const Json& v) {
    if (is_file_value(v)) return file(v);
    if (is_directory_value(v)) return directory(v);
    if (v.is_array()) {
      Json out = Json::array();
      for (const auto& item : v) out.push_back(value(item));
      return out;
    }
    return v;
  }
};

void place(const fs::path& target, const std::function<void()>& write) {
  if (fs::exists(fs::symlink_status(target))) {
    staging_error("basename collision in output directory: '" + target.filename().string() + "'");
  }
  write();
}

void materialize_listing(const TaskNode& node, StagedDirectory& staged, const EvalContext& ctx) {
  const Clause* clause = node.find_clause(ClauseKind::InitialWorkDir);
  if (!clause) return;
  for (const auto& item : clause->payload.value("listing", Json::array())) {
    const Json entry = interpolate(item.at("entry").get<std::string>(), ctx);
    std::optional<std::string> name;
    if (item.contains("entryname")) name = stringify(interpolate(item["entryname"].get<std::string>(), ctx));
    if (name && (name->empty() || name->find('/') != std::string::npos || *name == "." || *name == "..")) {
      staging_error("invalid entryname '" + *name + "'");
    }
    auto copy_in = [&](const Json& v, const std::string& basename) {
      const fs::path target = staged.outdir / basename;
      place(target, [&] {
        std::error_code ec;
        fs::copy(v.at("path").get<std::string>(), target, fs::copy_options::recursive, ec);
        if (ec) staging_error("cannot place " + basename + ": " + ec.message());
        if (fs::is_directory(target)) {
          for (const auto& p : fs::recursive_directory_iterator(target)) {
            fs::permissions(p.path(), fs::perms::owner_write, fs::perm_options::add);
          }
        }
        fs::permissions(target, fs::perms::owner_write, fs::perm_options::add);
      });
    };
    if (is_file_value(entry) || is_directory_value(entry)) {
      copy_in(entry, name.value_or(entry.at("basename").get<std::string>()));
    } else if (entry.is_array()) {
      if (name) staging_error("entryname given for a list of files");
      for (const auto& v : entry) {
        if (!is_file_value(v) && !is_directory_value(v)) staging_error("listing entry list must hold files");
        copy_in(v, v.at("basename").get<std::string>());
      }
    } else if (entry.is_null()) {
      continue;
    } else {
      if (!name) staging_error("literal listing entry needs an entryname");
      const fs::path target = staged.outdir / *name;
      place(target, [&] {
        std::ofstream out(target, std::ios::binary);
        out << stringify(entry);
        if (!out) staging_error("cannot write " + target.string());
      });
    }
  }
}

}  // namespace

StagedDirectory stage(const TaskNode& node, int attempt_number, const std::map<std::string, Json>& inputs,
                      const fs::path& work_root, const RuntimeOptions& options) {
  StagedDirectory staged;
  std::error_code ec;
  fs::create_directories(work_root, ec);
  std::string tmpl =
      (work_root / (sanitize_task_id(node.id) + ".a" + std::to_string(attempt_number) + ".XXXXXX")).string();
  if (!mkdtemp(tmpl.data())) staging_error("cannot create sandbox under " + work_root.string() + ": " + std::strerror(errno));
  staged.root = tmpl;
  staged.outdir = staged.root / "outdir";
  staged.tmpdir = staged.root / "tmp";
  fs::create_directories(staged.outdir);
  fs::create_directories(staged.tmpdir);
  fs::create_directories(staged.root / "inputs");

  Stager stager{staged, options};
  for (const auto& [id, value] : inputs) staged.inputs[id] = stager.value(value);
  make_read_only(staged.root / "inputs");

  EvalContext ctx;
  ctx.inputs = staged.inputs;
  ctx.runtime.outdir = staged.outdir.string();
  ctx.runtime.tmpdir = staged.tmpdir.string();
  materialize_listing(node, staged, ctx);
  return staged;
}

void remove_sandbox(const fs::path& root) {
  std::error_code ec;
  if (!fs::exists(fs::symlink_status(root, ec))) return;
  for (auto it = fs::recursive_directory_iterator(root, fs::directory_options::skip_permission_denied, ec);
       it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (it->is_directory(ec) && !it->is_symlink(ec)) {
      fs::permissions(it->path(), fs::perms::owner_all, fs::perm_options::add, ec);
    }
  }
  fs::permissions(root, fs::perms::owner_all, fs::perm_options::add, ec);
  fs::remove_all(root, ec);
}

std::map<std::string, std::string> build_environment(const TaskNode& node, const StagedDirectory& staged,
                                                     const EvalContext& ctx) {
  std::map<std::string, std::string> env{
      {"HOME", staged.outdir.string()},
      {"TMPDIR", staged.tmpdir.string()},
      {"PATH", kBasePath},
  };
  if (const Clause* clause = node.find_clause(ClauseKind::EnvVars)) {
    const Json defs = clause->payload.value("envDef", Json::object());
    for (const auto& [name, value] : defs.items()) {
      env[name] = stringify(interpolate(value.get<std::string>(), ctx));
    }
  }
  return env;
}

// ---------------------------------------------------------------------------
// Containers
// ---------------------------------------------------------------------------

std::string to_container_path(const std::string& text, const StagedDirectory& staged) {
  std::vector<std::pair<std::string, std::string>> table;
  for (const auto& [host, inside] : staged.mounts) table.emplace_back(host.string(), inside);
  table.emplace_back(staged.outdir.string(), kContainerOutdir);
  table.emplace_back(staged.tmpdir.string(), kContainerTmpdir);
  std::sort(table.begin(), table.end(), [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });

  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    bool replaced = false;
    for (const auto& [host, inside] : table) {
      if (host.empty() || text.compare(i, host.size(), host) != 0) continue;
      const std::size_t end = i + host.size();
      if (end < text.size() && text[end] != '/') continue;
      out += inside;
      i = end;
      replaced = true;
      break;
    }
    if (!replaced) out += text[i++];
  }
  return out;
}

std::vector<std::string> container_command(const AttemptPlan& plan, const std::string& container_cli) {
  const auto& s = plan.staged;
  std::vector<std::string> argv{container_cli, "run", "--rm"};
  if (plan.stdin_path) argv.push_back("-i");
  argv.insert(argv.end(), {"--workdir", kContainerOutdir});
  for (const auto& [host, inside] : s.mounts) {
    argv.insert(argv.end(), {"-v", host.string() + ":" + inside + ":ro"});
  }
  argv.insert(argv.end(), {"-v", s.outdir.string() + ":" + kContainerOutdir + ":rw"});
  argv.insert(argv.end(), {"-v", s.tmpdir.string() + ":" + kContainerTmpdir + ":rw"});
  for (const auto& [k, v] : plan.env) argv.insert(argv.end(), {"--env", k + "=" + to_container_path(v, s)});
  argv.push_back(plan.container_image.value());
  for (const auto& a : plan.argv) argv.push_back(to_container_path(a, s));
  return argv;
}

bool container_runtime_available(const std::string& container_cli) {
  if (container_cli.find('/') != std::string::npos) return access(container_cli.c_str(), X_OK) == 0;
  std::string path = kBasePath;
  if (const char* host = std::getenv("PATH")) path = std::string(host) + ":" + path;
  std::stringstream dirs(path);
  std::string dir;
  while (std::getline(dirs, dir, ':')) {
    if (!dir.empty() && access((fs::path(dir) / container_cli).c_str(), X_OK) == 0) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Process launch
// ---------------------------------------------------------------------------

namespace {

std::optional<std::string> find_executable(const std::string& name, const fs::path& cwd, const std::string& path) {
  auto runnable = [](const fs::path& p) {
    struct stat st{};
    return stat(p.c_str(), &st) == 0 && S_ISREG(st.st_mode) && (st.st_mode & 0111) != 0;
  };
  if (name.find('/') != std::string::npos) {
    fs::path p = name;
    if (p.is_relative()) p = cwd / p;
    if (runnable(p)) return p.string();
    return std::nullopt;
  }
  std::stringstream dirs(path);
  std::string dir;
  while (std::getline(dirs, dir, ':')) {
    if (dir.empty()) continue;
    fs::path p = fs::path(dir) / name;
    if (runnable(p)) return p.string();
  }
  return std::nullopt;
}

// Child side, between fork and exec: async-signal-safe calls only.
void drop_dac_overrides() {
  prctl(PR_CAPBSET_DROP, CAP_DAC_OVERRIDE, 0, 0, 0);
  prctl(PR_CAPBSET_DROP, CAP_FOWNER, 0, 0, 0);
  __user_cap_header_struct header{_LINUX_CAPABILITY_VERSION_3, 0};
  __user_cap_data_struct data[2]{};
  if (syscall(SYS_capget, &header, data) != 0) return;
  for (int cap : {CAP_DAC_OVERRIDE, CAP_FOWNER}) {
    const unsigned bit = 1u << (cap % 32);
    data[cap / 32].effective &= ~bit;
    data[cap / 32].permitted &= ~bit;
    data[cap / 32].inheritable &= ~bit;
  }
  syscall(SYS_capset, &header, data);
}

[[noreturn]] void child_fail(int report_fd, int err) {
  ssize_t ignored = write(report_fd, &err, sizeof err);
  (void)ignored;
  _exit(127);
}

int open_output(const fs::path& p) {
  return open(p.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
}

int decode_status(int status) {
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
  return -1;
}

}  // namespace

LaunchResult PosixLauncher::launch(const LaunchSpec& spec) const {
  LaunchResult result;
  if (spec.argv.empty()) {
    result.launch_error = "empty command line";
    return result;
  }
  auto path_it = spec.env.find("PATH");
  const auto exe = find_executable(spec.argv[0], spec.cwd, path_it != spec.env.end() ? path_it->second : kBasePath);
  if (!exe) {
    result.launch_error = "executable not found: " + spec.argv[0];
    return result;
  }

  std::vector<std::string> env_strings;
  for (const auto& [k, v] : spec.env) env_strings.push_back(k + "=" + v);
  std::vector<char*> argv;
  for (const auto& a : spec.argv) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  std::vector<char*> envp;
  for (auto& e : env_strings) envp.push_back(e.data());
  envp.push_back(nullptr);
  const std::string stdin_path = spec.stdin_path ? spec.stdin_path->string() : "/dev/null";
  const std::string cwd = spec.cwd.string();
  const bool drop = spec.drop_privileges && geteuid() == 0;

  const int out_fd = open_output(spec.stdout_path);
  const int err_fd = open_output(spec.stderr_path);
  if (out_fd < 0 || err_fd < 0) {
    if (out_fd >= 0) close(out_fd);
    if (err_fd >= 0) close(err_fd);
    result.launch_error = std::string("cannot open capture files: ") + std::strerror(errno);
    return result;
  }
  int report[2];
  if (pipe2(report, O_CLOEXEC) != 0) {
    close(out_fd);
    close(err_fd);
    result.launch_error = std::string("pipe: ") + std::strerror(errno);
    result.transient = true;
    return result;
  }

  const pid_t pid = fork();
  if (pid == 0) {
    setpgid(0, 0);
    signal(SIGPIPE, SIG_DFL);
    sigset_t none;
    sigemptyset(&none);
    sigprocmask(SIG_SETMASK, &none, nullptr);
    const int in_fd = open(stdin_path.c_str(), O_RDONLY);
    if (in_fd < 0) child_fail(report[1], errno);
    if (dup2(in_fd, 0) < 0 || dup2(out_fd, 1) < 0 || dup2(err_fd, 2) < 0) child_fail(report[1], errno);
    if (chdir(cwd.c_str()) != 0) child_fail(report[1], errno);
    if (drop) drop_dac_overrides();
    execve(exe->c_str(), argv.data(), envp.data());
    child_fail(report[1], errno);
  }
  close(out_fd);
  close(err_fd);
  close(report[1]);
  if (pid < 0) {
    close(report[0]);
    result.launch_error = std::string("fork: ") + std::strerror(errno);
    result.transient = errno == EAGAIN || errno == ENOMEM;
    return result;
  }
  setpgid(pid, pid);

  int child_errno = 0;
  ssize_t n;
  do {
    n = read(report[0], &child_errno, sizeof child_errno);
  } while (n < 0 && errno == EINTR);
  close(report[0]);
  if (n > 0) {
    int status = 0;
    waitpid(pid, &status, 0);
    result.launch_error = "cannot execute " + spec.argv[0] + ": " + std::strerror(child_errno);
    result.transient = child_errno == ETXTBSY || child_errno == EAGAIN;
    return result;
  }

  int status = 0;
  const auto deadline = spec.timeout ? std::optional(std::chrono::steady_clock::now() + *spec.timeout) : std::nullopt;
  const int pidfd = static_cast<int>(syscall(SYS_pidfd_open, pid, 0));
  for (;;) {
    pid_t r = waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0 && errno != EINTR) break;
    int wait_ms = 50;
    if (deadline) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(*deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) {
        kill(-pid, SIGKILL);
        waitpid(pid, &status, 0);
        result.timed_out = true;
        break;
      }
      wait_ms = static_cast<int>(std::min<long long>(left.count(), 1000));
    }
    if (pidfd >= 0) {
      pollfd pfd{pidfd, POLLIN, 0};
      poll(&pfd, 1, wait_ms);
    } else {
      usleep(static_cast<useconds_t>(std::min(wait_ms, 10)) * 1000);
    }
  }
  if (pidfd >= 0) close(pidfd);
  // Reap the rest of the tool's process group.
  kill(-pid, SIGKILL);
  result.exit_code = result.timed_out ? -1 : decode_status(status);
  return result;
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

namespace {

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { signal(SIGPIPE, SIG_IGN); });
}

// Writes `source` into a named pipe once a reader appears. Gives up when
// `done` is set before any reader opened the pipe.
void feed_pipe(const fs::path& fifo, const fs::path& source, const std::atomic<bool>& done) {
  int fd = -1;
  while (fd < 0) {
    fd = open(fifo.c_str(), O_WRONLY | O_NONBLOCK | O_CLOEXEC);
    if (fd >= 0) break;
    if (errno != ENXIO || done.load()) return;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  fcntl(fd, F_SETFL, fcntl(fd, F_GETFL) & ~O_NONBLOCK);
  std::ifstream in(source, std::ios::binary);
  char buffer[1 << 16];
  while (in) {
    in.read(buffer, sizeof buffer);
    std::streamsize left = in.gcount();
    const char* p = buffer;
    while (left > 0) {
      ssize_t w = write(fd, p, static_cast<size_t>(left));
      if (w < 0) {
        if (errno == EINTR) continue;
        close(fd);
        return;  // reader went away
      }
      p += w;
      left -= w;
    }
  }
  close(fd);
}

}  // namespace

TaskAttempt execute(const AttemptPlan& plan, const RuntimeOptions& options) {
  ignore_sigpipe();
  TaskAttempt attempt;
  attempt.task_id = plan.task_id;
  attempt.attempt_number = plan.attempt_number;
  attempt.env = plan.env;
  attempt.stdout_path = plan.stdout_path;
  attempt.stderr_path = plan.stderr_path;
  attempt.container_image = plan.container_image;

  LaunchSpec spec;
  spec.cwd = plan.staged.outdir;
  spec.stdin_path = plan.stdin_path;
  spec.stdout_path = plan.stdout_path;
  spec.stderr_path = plan.stderr_path;
  if (plan.resources.wall_time_max) spec.timeout = std::chrono::seconds(*plan.resources.wall_time_max);
  if (plan.container_image) {
    spec.argv = container_command(plan, options.container_cli);
    spec.env = {{"HOME", plan.staged.outdir.string()}, {"PATH", kBasePath}};
    spec.drop_privileges = false;
  } else {
    spec.argv = plan.argv;
    spec.env = plan.env;
  }
  attempt.argv = spec.argv;

  std::atomic<bool> done{false};
  std::vector<std::thread> feeders;
  for (const auto& [fifo, source] : plan.staged.fifos) {
    feeders.emplace_back(feed_pipe, fifo, source, std::cref(done));
  }
  attempt.start_time = Clock::now();
  LaunchResult r = options.launcher->launch(spec);
  attempt.end_time = Clock::now();
  done = true;
  for (const auto& [fifo, source] : plan.staged.fifos) {
    // Unblock a feeder still waiting for a reader that never came.
    int fd = open(fifo.c_str(), O_RDONLY | O_NONBLOCK | O_CLOEXEC);
    if (fd >= 0) close(fd);
  }
  for (auto& t : feeders) t.join();

  attempt.exit_code = r.exit_code;
  if (r.launch_error) {
    attempt.outcome = r.transient ? Outcome::TemporaryFailure : Outcome::PermanentFailure;
    attempt.cause = r.transient ? FailureCause::LaunchRace : FailureCause::MissingExecutable;
    attempt.message = *r.launch_error;
  } else if (r.timed_out) {
    attempt.outcome = Outcome::TemporaryFailure;
    attempt.cause = FailureCause::Timeout;
    attempt.message = "wall time limit of " + std::to_string(plan.resources.wall_time_max.value_or(0)) + " s exceeded";
  } else if (plan.success_codes.contains(r.exit_code)) {
    attempt.outcome = Outcome::Success;
  } else {
    attempt.outcome = Outcome::PermanentFailure;
    attempt.cause = FailureCause::ExitStatus;
    attempt.message = "exit code " + std::to_string(r.exit_code);
  }
  return attempt;
}

// ---------------------------------------------------------------------------
// Outputs
// ---------------------------------------------------------------------------

namespace {

std::vector<fs::path> glob_outdir(const std::string& pattern, const fs::path& outdir) {
  if (pattern.empty() || pattern.front() == '/') {
    throw Error(ErrorCode::OutputMissing, "glob '" + pattern + "' must be relative to the output directory");
  }
  const std::string full = (outdir / pattern).string();
  glob_t g{};
  std::vector<fs::path> out;
  const int rc = ::glob(full.c_str(), GLOB_NOSORT, nullptr, &g);
  if (rc == 0) {
    const fs::path base = fs::weakly_canonical(outdir);
    for (std::size_t i = 0; i < g.gl_pathc; ++i) {
      const fs::path match = fs::weakly_canonical(g.gl_pathv[i]);
      const auto rel = match.lexically_relative(base);
      if (rel.empty() || *rel.begin() == "..") continue;
      out.push_back(match);
    }
  }
  globfree(&g);
  std::sort(out.begin(), out.end());
  return out;
}

Json capture_value(const fs::path& p, const OutputParameter& out) {
  if (fs::is_directory(p)) return capture_directory(p);
  FileValue file = FileValue::capture(p, out.format);
  file.streamable = out.streamable;
  return file.to_json();
}

Json read_primitive(const fs::path& p, const OutputParameter& out) {
  std::ifstream in(p, std::ios::binary);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Json parsed = Json::parse(text, nullptr, false);
  if (parsed.is_discarded()) {
    if (out.type.base != BaseType::String || out.type.array) {
      throw Error(ErrorCode::TypeError, "output '" + out.id + "': " + p.filename().string() + " does not hold JSON");
    }
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    parsed = text;
  }
  return parsed;
}

}  // namespace

std::map<std::string, Json> collect_outputs(const ToolDescription& tool, const StagedDirectory& staged,
                                            const TaskAttempt& attempt, const EvalContext& ctx) {
  std::map<std::string, Json> outputs;
  for (const auto& out : tool.outputs) {
    Json value;
    if (out.capture != Capture::None) {
      value = capture_value(out.capture == Capture::Stdout ? attempt.stdout_path : attempt.stderr_path, out);
    } else {
      const std::string pattern = stringify(interpolate(*out.glob, ctx));
      const auto matches = glob_outdir(pattern, staged.outdir);
      const bool files = out.type.base == BaseType::File || out.type.base == BaseType::Directory;
      if (files && out.type.array) {
        value = Json::array();
        for (const auto& m : matches) value.push_back(capture_value(m, out));
      } else if (matches.empty()) {
        if (!out.type.optional) {
          throw Error(ErrorCode::OutputMissing, "output '" + out.id + "': glob '" + pattern + "' matched nothing");
        }
        value = nullptr;
      } else if (matches.size() > 1) {
        throw Error(ErrorCode::OutputAmbiguous, "output '" + out.id + "': glob '" + pattern + "' matched " +
                                                    std::to_string(matches.size()) + " files");
      } else {
        value = files ? capture_value(matches.front(), out) : read_primitive(matches.front(), out);
      }
    }
    if (!value_conforms(value, out.type)) {
      throw Error(ErrorCode::TypeError, "output '" + out.id + "' value " + value.dump() +
                                            " does not conform to type " + to_string(out.type));
    }
    outputs[out.id] = std::move(value);
  }
  return outputs;
}

// ---------------------------------------------------------------------------
// One attempt end to end
// ---------------------------------------------------------------------------

namespace {

FailureCause cause_of(const Error& e) {
  switch (e.code()) {
    case ErrorCode::StagingError: return FailureCause::StagingError;
    case ErrorCode::OutputMissing: return FailureCause::OutputMissing;
    case ErrorCode::OutputAmbiguous: return FailureCause::OutputAmbiguous;
    default: return FailureCause::ExpressionError;
  }
}

std::optional<std::string> container_for(const TaskNode& node, const RuntimeOptions& options) {
  if (!options.use_containers) return std::nullopt;
  bool required = false;
  const Clause* clause = node.find_clause(ClauseKind::Container, &required);
  if (!clause) return std::nullopt;
  // A hinted image is only used when a container runtime is present.
  if (!required && !container_runtime_available(options.container_cli)) return std::nullopt;
  return clause->payload.at("dockerPull").get<std::string>();
}

}  // namespace

AttemptResult run_attempt(const TaskNode& node, int attempt_number, const std::map<std::string, Json>& inputs,
                          const ResourceRequest& resources, const fs::path& work_root,
                          const RuntimeOptions& options) {
  AttemptResult result;
  TaskAttempt& attempt = result.attempt;
  attempt.task_id = node.id;
  attempt.attempt_number = attempt_number;
  auto fail = [&](FailureCause cause, const std::string& message) {
    attempt.outcome = Outcome::PermanentFailure;
    attempt.cause = cause;
    attempt.message = message;
    if (attempt.start_time == Clock::time_point{}) attempt.start_time = Clock::now();
    if (attempt.end_time == Clock::time_point{}) attempt.end_time = Clock::now();
    return result;
  };

  AttemptPlan plan;
  EvalContext ctx;
  const ToolDescription& tool = node.tool();
  try {
    plan.staged = stage(node, attempt_number, inputs, work_root, options);
    result.sandbox = plan.staged.root;
    ctx.inputs = plan.staged.inputs;
    ctx.runtime.cores = resources.cores;
    ctx.runtime.ram = resources.ram_mib;
    ctx.runtime.outdir = plan.staged.outdir.string();
    ctx.runtime.tmpdir = plan.staged.tmpdir.string();

    plan.task_id = node.id;
    plan.attempt_number = attempt_number;
    plan.argv = build_command_line(tool, ctx);
    if (plan.argv.empty()) return fail(FailureCause::MissingExecutable, "empty command line");
    plan.env = build_environment(node, plan.staged, ctx);
    plan.resources = resources;
    plan.container_image = container_for(node, options);
    plan.success_codes = tool.success_codes;
    if (tool.stdin_path) {
      Json in = interpolate(*tool.stdin_path, ctx);
      fs::path p = is_file_value(in) ? fs::path(in["path"].get<std::string>()) : fs::path(stringify(in));
      if (p.is_relative()) p = plan.staged.outdir / p;
      plan.stdin_path = p;
    }
    auto capture_path = [&](const std::optional<std::string>& name, Capture kind, const char* fallback) {
      if (name) {
        const std::string n = stringify(interpolate(*name, ctx));
        if (n.empty() || n.find('/') != std::string::npos) {
          throw Error(ErrorCode::StagingError, "invalid capture file name '" + n + "'");
        }
        return plan.staged.outdir / n;
      }
      for (const auto& o : tool.outputs) {
        if (o.capture == kind) return plan.staged.outdir / (o.id + (kind == Capture::Stdout ? ".stdout" : ".stderr"));
      }
      return plan.staged.root / fallback;
    };
    plan.stdout_path = capture_path(tool.stdout_name, Capture::Stdout, "stdout.log");
    plan.stderr_path = capture_path(tool.stderr_name, Capture::Stderr, "stderr.log");
  } catch (const Error& e) {
    return fail(cause_of(e), e.what());
  } catch (const std::exception& e) {
    return fail(FailureCause::StagingError, e.what());
  }

  attempt = execute(plan, options);
  if (attempt.outcome != Outcome::Success) return result;
  try {
    result.outputs = collect_outputs(tool, plan.staged, attempt, ctx);
  } catch (const Error& e) {
    attempt.outcome = Outcome::PermanentFailure;
    attempt.cause = cause_of(e);
    attempt.message = e.what();
  }
  return result;
}

}  // namespace miniwfl
