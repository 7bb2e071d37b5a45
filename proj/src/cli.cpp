#include "miniwfl/cli.hpp"

#include <pwd.h>
#include <sys/statvfs.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <set>
#include <thread>

#include "miniwfl/cache.hpp"
#include "miniwfl/error.hpp"
#include "miniwfl/planner.hpp"
#include "miniwfl/provenance.hpp"
#include "miniwfl/runtime.hpp"
#include "miniwfl/scheduler.hpp"
#include "miniwfl/upgrader.hpp"
#include "miniwfl/validator.hpp"

namespace miniwfl {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string workflow;
  std::string job;
  int parallel = 0;
  int retries = 0;
  std::string outdir = "out";
  std::string cache_dir;
  bool no_reuse = false;
  bool no_container = false;
  bool enable_streaming = false;
  bool quiet = false;
  std::string on_error = "stop";
  long long cores = 0;
  long long ram = 0;
  long long disk = 0;
  std::string target = "v1.2";
};

fs::path default_cache_dir() {
  const char* home = std::getenv("HOME");
  std::string h = home ? home : "";
  if (h.empty()) {
    if (const passwd* pw = getpwuid(geteuid())) h = pw->pw_dir;
  }
  return fs::path(h.empty() ? "." : h) / ".cache" / "miniwfl";
}

ResourceRequest machine_capacity(const Options& o, const fs::path& outdir) {
  ResourceRequest m;
  m.cores = o.cores > 0 ? o.cores : std::max(1u, std::thread::hardware_concurrency());
  if (o.ram > 0) {
    m.ram_mib = o.ram;
  } else {
    const long long pages = sysconf(_SC_PHYS_PAGES);
    const long long page = sysconf(_SC_PAGESIZE);
    m.ram_mib = pages > 0 && page > 0 ? pages / 1024 * page / 1024 : 1024;
  }
  if (o.disk > 0) {
    m.disk_mib = o.disk;
  } else {
    fs::path probe = fs::absolute(outdir);
    while (!probe.empty() && !fs::exists(probe) && probe != probe.root_path()) probe = probe.parent_path();
    struct statvfs st{};
    m.disk_mib = statvfs(probe.c_str(), &st) == 0
                     ? static_cast<long long>(st.f_bavail) * static_cast<long long>(st.f_frsize) / (1024 * 1024)
                     : 1024;
  }
  return m;
}

SupportMatrix support_for(const Options& o, const ResourceRequest& m) {
  SupportMatrix matrix = SupportMatrix::defaults(m.cores, m.ram_mib, m.disk_mib);
  if (o.no_container) matrix.supported_requirement_kinds.erase(ClauseKind::Container);
  return matrix;
}

Diagnostic load_failure(const Error& e, const std::string& location) {
  return Diagnostic{Severity::Error, to_string(e.code()), location, e.what()};
}

void print_diagnostics(const std::vector<Diagnostic>& diagnostics, std::ostream& os) {
  for (const auto& d : diagnostics) os << d.to_json().dump() << "\n";
}

// Loads and validates; prints diagnostics to `diag`. Returns nullopt when the
// document is unusable.
std::optional<Document> load_checked(const Options& o, const SupportMatrix& matrix, std::ostream& diag,
                                     bool print_warnings) {
  Document doc;
  try {
    doc = load_document(o.workflow);
  } catch (const Error& e) {
    print_diagnostics({load_failure(e, o.workflow)}, diag);
    return std::nullopt;
  }
  auto diagnostics = validate(doc, matrix);
  if (!print_warnings && !has_errors(diagnostics)) return doc;
  print_diagnostics(diagnostics, diag);
  if (has_errors(diagnostics)) return std::nullopt;
  return doc;
}

// Copies produced files into the output directory; a basename already used
// by this run goes under a subdirectory named after the output.
Json deliver(const Json& value, const fs::path& outdir, const std::string& output_id, std::set<std::string>& taken) {
  if (is_file_value(value) || is_directory_value(value)) {
    const fs::path source = value["path"].get<std::string>();
    const std::string basename = value.value("basename", source.filename().string());
    fs::path target = outdir / basename;
    if (!taken.insert(target.string()).second) {
      target = outdir / output_id / basename;
      for (int n = 2; !taken.insert(target.string()).second; ++n) {
        target = outdir / (output_id + "_" + std::to_string(n)) / basename;
      }
    }
    fs::create_directories(target.parent_path());
    std::error_code ec;
    fs::remove_all(target, ec);
    fs::copy(source, target, fs::copy_options::recursive);
    fs::permissions(target, fs::perms::owner_write, fs::perm_options::add);
    Json out = value;
    out["path"] = fs::absolute(target).lexically_normal().string();
    return out;
  }
  if (value.is_array()) {
    Json out = Json::array();
    for (const auto& item : value) out.push_back(deliver(item, outdir, output_id, taken));
    return out;
  }
  return value;
}

int cmd_run(const Options& o, const CliHooks& hooks, std::ostream& out, std::ostream& err) {
  const fs::path outdir = o.outdir;
  const ResourceRequest machine = machine_capacity(o, outdir);
  auto doc = load_checked(o, support_for(o, machine), err, !o.quiet);
  if (!doc) return kExitInvalid;

  JobOrder job;
  const fs::path doc_dir = fs::absolute(o.workflow).parent_path();
  try {
    job = o.job.empty() ? load_job_order(Json::object(), document_inputs(*doc), fs::current_path(), doc_dir)
                        : load_job_order_file(o.job, document_inputs(*doc), doc_dir);
  } catch (const Error& e) {
    print_diagnostics({load_failure(e, o.job.empty() ? o.workflow : o.job)}, err);
    return kExitInvalid;
  }

  DataflowGraph graph;
  try {
    graph = plan(*doc, job);
  } catch (const Error& e) {
    print_diagnostics({load_failure(e, o.workflow)}, err);
    return e.code() == ErrorCode::PlanError ? kExitInvalid : kExitFailed;
  }

  RunConfig cfg;
  cfg.run_id = new_run_id();
  cfg.parallelism = o.parallel > 0 ? o.parallel : static_cast<int>(machine.cores);
  cfg.retries = o.retries;
  cfg.machine = machine;
  cfg.enable_reuse = !o.no_reuse;
  cfg.on_error = o.on_error == "continue" ? OnError::Continue : OnError::Stop;
  cfg.work_dir = fs::absolute(outdir / ".miniwfl" / "work" / cfg.run_id);

  std::optional<Cache> cache;
  if (cfg.enable_reuse) cache.emplace(o.cache_dir.empty() ? default_cache_dir() : fs::path(o.cache_dir));
  Services services;
  services.runtime.use_containers = !o.no_container;
  services.runtime.enable_streaming = o.enable_streaming;
  if (hooks.launcher) services.runtime.launcher = hooks.launcher;
  if (!hooks.container_cli.empty()) services.runtime.container_cli = hooks.container_cli;
  services.cache = cache ? &*cache : nullptr;
  if (!o.quiet) {
    services.on_event = [&err](const Event& e) { err << e.to_json().dump() << "\n"; };
  }
  services.on_warning = [&err](const std::string& w) { err << "warning: " << w << "\n"; };

  RunResult result = run(std::move(graph), cfg, services);

  Json delivered = Json::object();
  try {
    std::set<std::string> taken;
    for (const auto& [id, value] : result.outputs) delivered[id] = deliver(value, outdir, id, taken);
  } catch (const std::exception& e) {
    err << "error: cannot copy outputs into " << outdir.string() << ": " << e.what() << "\n";
    result.status = RunStatus::PermanentFail;
  }
  ProvenanceContext context{canonical_digest(*doc), job.values};
  try {
    const fs::path record = write_provenance(result, context, outdir / "provenance");
    if (!o.quiet) err << "provenance: " << record.string() << "\n";
  } catch (const Error& e) {
    err << "warning: " << e.what() << "\n";
  }
  for (const auto& [id, rec] : result.tasks) {
    if (rec.state == TaskState::Failed) err << "task '" << id << "' failed: " << rec.message << "\n";
  }
  out << delivered.dump(2) << "\n";
  if (result.status == RunStatus::Success) {
    remove_sandbox(cfg.work_dir);
    std::error_code ec;
    fs::remove(cfg.work_dir.parent_path(), ec);  // only if empty
    fs::remove(cfg.work_dir.parent_path().parent_path(), ec);
    return kExitOk;
  }
  err << "run failed; working files kept in " << cfg.work_dir.string() << "\n";
  return kExitFailed;
}

int cmd_validate(const Options& o, std::ostream& out) {
  const ResourceRequest machine = machine_capacity(o, o.outdir);
  Document doc;
  try {
    doc = load_document(o.workflow);
  } catch (const Error& e) {
    print_diagnostics({load_failure(e, o.workflow)}, out);
    return kExitInvalid;
  }
  const auto diagnostics = validate(doc, support_for(o, machine));
  print_diagnostics(diagnostics, out);
  return has_errors(diagnostics) ? kExitInvalid : kExitOk;
}

int cmd_graph(const Options& o, std::ostream& out, std::ostream& err) {
  const ResourceRequest machine = machine_capacity(o, o.outdir);
  auto doc = load_checked(o, support_for(o, machine), err, false);
  if (!doc) return kExitInvalid;
  try {
    out << plan(*doc, JobOrder{}, PlanOptions{true}).to_dot();
  } catch (const Error& e) {
    print_diagnostics({load_failure(e, o.workflow)}, err);
    return kExitInvalid;
  }
  return kExitOk;
}

int cmd_upgrade(const Options& o, std::ostream& out, std::ostream& err) {
  Document doc;
  try {
    doc = load_document(o.workflow);
  } catch (const Error& e) {
    print_diagnostics({load_failure(e, o.workflow)}, err);
    return kExitInvalid;
  }
  try {
    out << canonical_serialize(upgrade(doc, o.target)) << "\n";
  } catch (const Error& e) {
    print_diagnostics({load_failure(e, o.workflow)}, err);
    return e.code() == ErrorCode::DowngradeError || e.code() == ErrorCode::UnknownVersion ? kExitUsage
                                                                                          : kExitInvalid;
  }
  return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return cli_main(argc, argv, out, err, CliHooks{});
}

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err, const CliHooks& hooks) {
  Options o;
  CLI::App app{"miniwfl: run, check and upgrade workflow documents", "miniwfl"};
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "Run a workflow or tool with a job order");
  run_cmd->add_option("workflow", o.workflow, "Workflow or tool document")->required();
  run_cmd->add_option("job", o.job, "Job order (YAML or JSON)");
  run_cmd->add_option("--parallel", o.parallel, "Maximum concurrent tasks (default: machine cores)")
      ->check(CLI::PositiveNumber);
  run_cmd->add_option("--retries", o.retries, "Re-executions after a temporary failure")
      ->check(CLI::NonNegativeNumber);
  run_cmd->add_option("--outdir", o.outdir, "Output directory")->capture_default_str();
  run_cmd->add_option("--cache-dir", o.cache_dir, "Result cache (default ~/.cache/miniwfl)");
  run_cmd->add_flag("--no-reuse", o.no_reuse, "Neither read nor write the result cache");
  run_cmd->add_flag("--no-container", o.no_container, "Run container-hinted tools on the host");
  run_cmd->add_flag("--enable-streaming", o.enable_streaming, "Stage streamable inputs as named pipes");
  run_cmd->add_flag("--quiet", o.quiet, "Print only the output object");
  run_cmd->add_option("--on-error", o.on_error, "stop or continue after a task fails")
      ->check(CLI::IsMember({"stop", "continue"}))
      ->capture_default_str();

  auto* validate_cmd = app.add_subcommand("validate", "Check a document and print diagnostics");
  validate_cmd->add_option("workflow", o.workflow, "Workflow or tool document")->required();
  validate_cmd->add_flag("--no-container", o.no_container, "Treat container requirements as unsupported");

  auto* graph_cmd = app.add_subcommand("graph", "Print the task graph in DOT");
  graph_cmd->add_option("workflow", o.workflow, "Workflow or tool document")->required();

  auto* upgrade_cmd = app.add_subcommand("upgrade", "Upgrade a document to a newer version");
  upgrade_cmd->add_option("workflow", o.workflow, "Workflow or tool document")->required();
  upgrade_cmd->add_option("--target", o.target, "Target version")->capture_default_str();

  for (auto* cmd : {run_cmd, validate_cmd, graph_cmd}) {
    cmd->add_option("--cores", o.cores, "Machine cores (default: detected)")->check(CLI::PositiveNumber);
    cmd->add_option("--ram", o.ram, "Machine RAM in MiB (default: detected)")->check(CLI::PositiveNumber);
    cmd->add_option("--disk", o.disk, "Machine disk in MiB (default: free space)")->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*run_cmd) return cmd_run(o, hooks, out, err);
    if (*validate_cmd) return cmd_validate(o, out);
    if (*graph_cmd) return cmd_graph(o, out, err);
    if (*upgrade_cmd) return cmd_upgrade(o, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailed;
  }
  return kExitUsage;
}

}  // namespace miniwfl
