#include <doctest.h>

#include <csignal>

#include <sys/stat.h>
#include <unistd.h>

#include <chrono>

#include "../support/corpus.hpp"
#include "helpers.hpp"
#include "miniwfl/error.hpp"
#include "miniwfl/runtime.hpp"

using namespace miniwfl;
using namespace miniwfl::testing;

namespace {

struct Planned {
  DataflowGraph graph;
  const TaskNode& node() const { return graph.node("main"); }
  std::map<std::string, Json> inputs() const { return graph.resolve_inputs(node()); }
};

Planned plan_tool(const std::string& text, const Json& job_raw, const fs::path& base_dir) {
  const Document doc = parse_document(text, (base_dir / "tool.cwl").string());
  const JobOrder job = load_job_order(job_raw, document_inputs(doc), base_dir, base_dir);
  return Planned{plan(doc, job)};
}

AttemptResult run_tool(const std::string& text, const Json& job_raw, const TempDir& dir,
                       const RuntimeOptions& options = {}) {
  Planned p = plan_tool(text, job_raw, dir.path());
  const ResourceRequest res = resolve_resources(p.node(), p.inputs(), ResourceRequest{8, 16384, 16384, std::nullopt});
  return run_attempt(p.node(), 1, p.inputs(), res, dir / "work", options);
}

std::vector<std::string> argv_of(const std::string& text, const Json& job_raw) {
  TempDir dir;
  Planned p = plan_tool(text, job_raw, dir.path());
  EvalContext ctx;
  ctx.inputs = p.inputs();
  return build_command_line(p.node().tool(), ctx);
}

using Args = std::vector<std::string>;

}  // namespace

TEST_CASE("command line: positions, prefixes and tie-breaks") {
  const char* tool = R"y(
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [prog, sub]
arguments:
  - {valueFrom: A, position: 2}
  - {valueFrom: "$(inputs.n)", prefix: --n, position: 1}
inputs:
  z: {type: string, inputBinding: {position: 2}}
  a: {type: string, inputBinding: {position: 2, prefix: -a}}
  first: {type: string, inputBinding: {position: 0}}
  flag: {type: boolean, inputBinding: {position: 3, prefix: --flag}}
  off: {type: boolean, inputBinding: {position: 3, prefix: --off}}
  list: {type: 'string[]', inputBinding: {position: 4, prefix: -l}}
  none: {type: 'string?', inputBinding: {position: 1, prefix: --none}}
  unbound: string
  n: int
outputs: {}
)y";
  const Json job{{"z", "Z"}, {"a", "AA"}, {"first", "F"}, {"flag", true}, {"off", false},
                 {"list", {"x", "y"}}, {"unbound", "U"}, {"n", 3}};
  // arguments sort before inputs at equal position; inputs tie-break on id
  CHECK(argv_of(tool, job) == Args{"prog", "sub", "F", "--n", "3", "A", "-a", "AA", "Z", "--flag", "-l", "x", "y"});
}

TEST_CASE("command line: files render as staged paths, numbers plainly") {
  TempDir dir;
  write_text(dir / "in.txt", "hello\n");
  const char* tool = R"y(
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [cat]
inputs:
  f: {type: File, inputBinding: {position: 1}}
  x: {type: float, inputBinding: {position: 2, prefix: -x}}
outputs: {}
)y";
  Planned p = plan_tool(tool, {{"f", "in.txt"}, {"x", 0.5}}, dir.path());
  const StagedDirectory s = stage(p.node(), 1, p.inputs(), dir / "work", {});
  EvalContext ctx;
  ctx.inputs = s.inputs;
  const auto argv = build_command_line(p.node().tool(), ctx);
  REQUIRE(argv.size() == 4);
  CHECK(argv[1] == (s.root / "inputs" / "0" / "in.txt").string());
  CHECK(argv[3] == "0.5");
  CHECK(read_text(argv[1]) == "hello\n");
  remove_sandbox(s.root);
  CHECK_FALSE(fs::exists(s.root));
}

TEST_CASE("staging: fresh sandboxes, read-only inputs") {
  TempDir dir;
  write_text(dir / "in.txt", "original\n");
  const char* tool = R"y(
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [sh, -c, 'echo tampered >> "$0"']
inputs:
  f: {type: File, inputBinding: {position: 1}}
outputs: {}
)y";
  const AttemptResult r = run_tool(tool, {{"f", "in.txt"}}, dir);
  CHECK(r.attempt.outcome == Outcome::PermanentFailure);
  CHECK(r.attempt.cause == FailureCause::ExitStatus);
  CHECK(read_text(dir / "in.txt") == "original\n");
  CHECK(read_text(r.sandbox / "inputs" / "0" / "in.txt") == "original\n");
  struct stat st{};
  REQUIRE(stat((r.sandbox / "inputs" / "0" / "in.txt").c_str(), &st) == 0);
  CHECK((st.st_mode & 0222) == 0);

  const AttemptResult again = run_tool(tool, {{"f", "in.txt"}}, dir);
  CHECK(again.sandbox != r.sandbox);
  CHECK(again.sandbox.filename().string().rfind("main.a1.", 0) == 0);
}

TEST_CASE("staging: checksum drift and basename collisions are staging errors") {
  TempDir dir;
  write_text(dir / "in.txt", "before\n");
  const char* tool = R"y(
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [cat]
inputs:
  f: {type: File, inputBinding: {position: 1}}
outputs: {}
)y";
  Planned p = plan_tool(tool, {{"f", "in.txt"}}, dir.path());
  write_text(dir / "in.txt", "after!\n");  // same size, new content
  try {
    stage(p.node(), 1, p.inputs(), dir / "work", {});
    FAIL("drift not detected");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::StagingError);
  }

  fs::create_directories(dir / "a");
  fs::create_directories(dir / "b");
  write_text(dir / "a" / "same.txt", "1");
  write_text(dir / "b" / "same.txt", "2");
  const char* listing = R"y(
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [ls]
requirements:
  InitialWorkDirRequirement:
    listing: [$(inputs.x), $(inputs.y)]
inputs: {x: File, y: File}
outputs: {}
)y";
  const AttemptResult r = run_tool(listing, {{"x", "a/same.txt"}, {"y", "b/same.txt"}}, dir);
  CHECK(r.attempt.cause == FailureCause::StagingError);
  CHECK(r.attempt.message.find("collision") != std::string::npos);
}

TEST_CASE("hermetic environment") {
  setenv("MINIWFL_TEST_LEAK", "secret", 1);
  TempDir dir;
  const AttemptResult r = run_tool(R"y(
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [env]
requirements:
  EnvVarRequirement: {envDef: {MODE: "fast-$(inputs.level)"}}
inputs: {level: int}
outputs: {out: stdout}
stdout: env.txt
)y", {{"level", 3}}, dir);
  REQUIRE(r.attempt.outcome == Outcome::Success);
  std::set<std::string> lines;
  std::istringstream in(read_text(r.outputs.at("out")["path"].get<std::string>()));
  for (std::string line; std::getline(in, line);) lines.insert(line);
  const fs::path out = r.sandbox / "outdir";
  CHECK(lines == std::set<std::string>{"HOME=" + out.string(), "TMPDIR=" + (r.sandbox / "tmp").string(),
                                       std::string("PATH=") + kBasePath, "MODE=fast-3"});
  CHECK(r.attempt.env.at("MODE") == "fast-3");
  unsetenv("MINIWFL_TEST_LEAK");
}

TEST_CASE("outputs: stdout naming, globs, missing and ambiguous") {
  TempDir dir;
  auto run = [&](const std::string& body) {
    return run_tool("cwlVersion: v1.2\nclass: CommandLineTool\n" + body, Json::object(), dir);
  };
  AttemptResult r = run("baseCommand: [echo, hi]\ninputs: {}\noutputs: {o: stdout}\n");
  REQUIRE(r.attempt.outcome == Outcome::Success);
  CHECK(r.outputs.at("o")["basename"] == "o.stdout");
  CHECK(r.outputs.at("o")["size"] == 3);

  r = run("baseCommand: [sh, -c, 'touch b.dat a.dat c.txt']\ninputs: {}\noutputs:\n  d: {type: 'File[]', outputBinding: {glob: '*.dat'}}\n");
  REQUIRE(r.attempt.outcome == Outcome::Success);
  REQUIRE(r.outputs.at("d").size() == 2);
  CHECK(r.outputs.at("d")[0]["basename"] == "a.dat");
  CHECK(r.outputs.at("d")[1]["basename"] == "b.dat");

  r = run("baseCommand: ['true']\ninputs: {}\noutputs:\n  d: {type: File, outputBinding: {glob: none.txt}}\n");
  CHECK(r.attempt.cause == FailureCause::OutputMissing);
  CHECK(r.attempt.outcome == Outcome::PermanentFailure);

  r = run("baseCommand: [touch, x1, x2]\ninputs: {}\noutputs:\n  d: {type: File, outputBinding: {glob: 'x*'}}\n");
  CHECK(r.attempt.cause == FailureCause::OutputAmbiguous);

  r = run("baseCommand: ['true']\ninputs: {}\noutputs:\n  d: {type: 'File?', outputBinding: {glob: none.txt}}\n");
  CHECK(r.attempt.outcome == Outcome::Success);
  CHECK(r.outputs.at("d").is_null());

  // globs never escape the output directory
  write_text(dir / "work" / "outside.txt", "x");
  r = run("baseCommand: ['true']\ninputs: {}\noutputs:\n  d: {type: 'File?', outputBinding: {glob: ../../outside.txt}}\n");
  CHECK(r.outputs.at("d").is_null());
}

TEST_CASE("exit codes, success codes and missing executables") {
  TempDir dir;
  auto run = [&](const std::string& body) {
    return run_tool("cwlVersion: v1.2\nclass: CommandLineTool\ninputs: {}\noutputs: {}\n" + body, Json::object(), dir);
  };
  AttemptResult r = run("baseCommand: [sh, -c, 'exit 3']\n");
  CHECK(r.attempt.exit_code == 3);
  CHECK(r.attempt.cause == FailureCause::ExitStatus);
  r = run("baseCommand: [sh, -c, 'exit 3']\nsuccessCodes: [0, 3]\n");
  CHECK(r.attempt.outcome == Outcome::Success);
  r = run("baseCommand: [definitely-not-a-program-xyz]\n");
  CHECK(r.attempt.cause == FailureCause::MissingExecutable);
  r = run("baseCommand: [sh, -c, 'kill -TERM $$']\n");
  CHECK(r.attempt.exit_code == 128 + SIGTERM);
}

TEST_CASE("wall-time limit kills the whole process group") {
  TempDir dir;
  const auto start = std::chrono::steady_clock::now();
  const AttemptResult r = run_tool(R"y(
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [sh, -c, 'sleep 30 & sleep 30']
requirements:
  ResourceRequirement: {wallTimeMax: 1}
inputs: {}
outputs: {}
)y", Json::object(), dir);
  const auto elapsed = std::chrono::steady_clock::now() - start;
  CHECK(r.attempt.cause == FailureCause::Timeout);
  CHECK(r.attempt.outcome == Outcome::TemporaryFailure);
  CHECK(elapsed < std::chrono::seconds(5));
}

TEST_CASE("streamable inputs arrive through a named pipe") {
  TempDir dir;
  std::string big;
  for (int i = 0; i < 50000; ++i) big += std::to_string(i) + "\n";
  write_text(dir / "big.txt", big);
  RuntimeOptions options;
  options.enable_streaming = true;
  const AttemptResult r = run_tool(R"y(
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [sh, -c, 'test -p "$0" && wc -l < "$0"']
inputs:
  f: {type: File, streamable: true, inputBinding: {position: 1}}
outputs: {o: stdout}
)y", {{"f", "big.txt"}}, dir, options);
  REQUIRE(r.attempt.outcome == Outcome::Success);
  CHECK(read_text(r.outputs.at("o")["path"].get<std::string>()) == "50000\n");
}

TEST_CASE("container invocation is built exactly") {
  AttemptPlan plan;
  plan.argv = {"grep", "-c", "x", "/w/s/inputs/0/a.txt", "/w/s/outdir/result"};
  plan.env = {{"HOME", "/w/s/outdir"}, {"PATH", kBasePath}, {"TMPDIR", "/w/s/tmp"}};
  plan.staged.root = "/w/s";
  plan.staged.outdir = "/w/s/outdir";
  plan.staged.tmpdir = "/w/s/tmp";
  plan.staged.mounts = {{"/w/s/inputs/0/a.txt", "/miniwfl/inputs/0/a.txt"}};
  plan.container_image = "alpine:3.19";
  CHECK(container_command(plan, "docker") ==
        Args{"docker", "run", "--rm", "--workdir", "/miniwfl/outdir",
             "-v", "/w/s/inputs/0/a.txt:/miniwfl/inputs/0/a.txt:ro",
             "-v", "/w/s/outdir:/miniwfl/outdir:rw", "-v", "/w/s/tmp:/tmp:rw",
             "--env", "HOME=/miniwfl/outdir", "--env", std::string("PATH=") + kBasePath, "--env", "TMPDIR=/tmp",
             "alpine:3.19", "grep", "-c", "x", "/miniwfl/inputs/0/a.txt", "/miniwfl/outdir/result"});
  plan.stdin_path = "/w/s/inputs/0/a.txt";
  const auto with_stdin = container_command(plan, "podman");
  CHECK(with_stdin[0] == "podman");
  CHECK(with_stdin[3] == "-i");
  CHECK(to_container_path("/w/s/outdirx", plan.staged) == "/w/s/outdirx");
}

TEST_CASE("container mode through a stand-in runtime matches direct mode") {
  TempDir dir;
  fs::copy_file(MINIWFL_FAKE_CONTAINER, dir / "fake-docker");
  fs::permissions(dir / "fake-docker", fs::perms::owner_all);
  write_text(dir / "words.txt", "pear\napple\nfig\n");
  const std::string tool = R"y(
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [sort]
HINTS
inputs:
  f: {type: File, inputBinding: {position: 1}}
outputs: {o: stdout}
stdout: sorted.txt
)y";
  auto with = [&](const std::string& clause) {
    std::string t = tool;
    t.replace(t.find("HINTS"), 5, clause);
    return t;
  };
  RuntimeOptions direct;
  direct.use_containers = false;
  const AttemptResult host = run_tool(with("hints: {DockerRequirement: {dockerPull: 'busybox:1'}}"), {{"f", "words.txt"}}, dir, direct);
  RuntimeOptions shim;
  shim.container_cli = (dir / "fake-docker").string();
  const AttemptResult boxed = run_tool(with("hints: {DockerRequirement: {dockerPull: 'busybox:1'}}"), {{"f", "words.txt"}}, dir, shim);
  REQUIRE(host.attempt.outcome == Outcome::Success);
  CAPTURE(boxed.attempt.message);
  CAPTURE(read_text(boxed.attempt.stderr_path));
  REQUIRE(boxed.attempt.outcome == Outcome::Success);
  CHECK(host.outputs.at("o")["checksum"] == boxed.outputs.at("o")["checksum"]);
  CHECK(boxed.attempt.container_image == "busybox:1");
  CHECK_FALSE(host.attempt.container_image);
  const std::string log = read_text(dir / "calls.log");
  CHECK(log.find("\"busybox:1\", \"sort\", \"/miniwfl/inputs/0/words.txt\"") != std::string::npos);

  // a required image with no runtime is a permanent, non-retryable failure
  RuntimeOptions missing;
  missing.container_cli = (dir / "no-such-runtime").string();
  const AttemptResult r = run_tool(with("requirements: {DockerRequirement: {dockerPull: 'busybox:1'}}"), {{"f", "words.txt"}}, dir, missing);
  CHECK(r.attempt.cause == FailureCause::MissingExecutable);
  // while a hinted one falls back to the host
  const AttemptResult fallback = run_tool(with("hints: {DockerRequirement: {dockerPull: 'busybox:1'}}"), {{"f", "words.txt"}}, dir, missing);
  CHECK(fallback.attempt.outcome == Outcome::Success);
}

TEST_CASE("task ids become safe directory names") {
  CHECK(sanitize_task_id("main") == "main");
  CHECK(sanitize_task_id("outer/inner[3]") == "outer--inner@3");
}
