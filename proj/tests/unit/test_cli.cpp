#include <doctest.h>

#include <sys/wait.h>

#include "../support/corpus.hpp"
#include "helpers.hpp"

using namespace miniwfl;
using namespace miniwfl::testing;

namespace {

fs::path corpus(const std::string& name) { return corpus_root() / name; }

int cli(const std::vector<std::string>& args, std::string* out = nullptr, std::string* err = nullptr) {
  return invoke_cli(args, out, err);
}

std::vector<Json> json_lines(const std::string& text) {
  std::vector<Json> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(Json::parse(line));
  }
  return out;
}

}  // namespace

TEST_CASE("validate: clean, unsupported requirement, unknown hint") {
  std::string out, err;
  CHECK(cli({"validate", corpus("01_grep_wc/workflow.cwl").string()}, &out) == kExitOk);
  CHECK(out.empty());

  CHECK(cli({"validate", corpus("14_unsupported_requirement/workflow.cwl").string()}, &out) == kExitInvalid);
  auto lines = json_lines(out);
  REQUIRE_FALSE(lines.empty());
  CHECK(lines[0]["code"] == "UnsupportedRequirement");

  CHECK(cli({"validate", corpus("13_hints_ignored/workflow.cwl").string()}, &out) == kExitOk);
  lines = json_lines(out);
  CHECK(std::count_if(lines.begin(), lines.end(), [](const Json& j) { return j["code"] == "UnsupportedHint"; }) == 1);
  for (const auto& l : lines) CHECK(l["severity"] == "warning");
}

TEST_CASE("validate: unreadable input and container switch-off") {
  std::string out;
  CHECK(cli({"validate", "/nonexistent/doc.cwl"}, &out) == kExitInvalid);
  TempDir dir;
  write_text(dir / "d.cwl", R"y(
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [echo]
requirements:
  DockerRequirement: {dockerPull: alpine}
inputs: {}
outputs: {}
)y");
  CHECK(cli({"validate", (dir / "d.cwl").string()}, &out) == kExitOk);
  CHECK(cli({"validate", "--no-container", (dir / "d.cwl").string()}, &out) == kExitInvalid);
  CHECK(out.find("UnsupportedRequirement") != std::string::npos);
}

TEST_CASE("run: exit codes for invalid job orders, cycles and failures") {
  TempDir dir;
  std::string out, err;
  const std::string outdir = (dir / "out").string();
  const std::string cache = (dir / "cache").string();
  CHECK(cli({"run", "--outdir", outdir, "--cache-dir", cache, corpus("34_missing_input/workflow.cwl").string(),
             corpus("34_missing_input/job.yaml").string()}, &out, &err) == kExitInvalid);
  CHECK(err.find("'file'") != std::string::npos);
  CHECK(cli({"run", "--outdir", outdir, "--cache-dir", cache, corpus("33_cycle/workflow.cwl").string(),
             corpus("33_cycle/job.yaml").string()}, &out, &err) == kExitInvalid);
  CHECK(err.find("CycleDetected") != std::string::npos);

  write_text(dir / "fail.cwl", "cwlVersion: v1.2\nclass: CommandLineTool\nbaseCommand: ['false']\ninputs: {}\noutputs: {}\n");
  CHECK(cli({"run", "--outdir", outdir, "--cache-dir", cache, (dir / "fail.cwl").string()}, &out, &err) == kExitFailed);
  CHECK(err.find("working files kept") != std::string::npos);
}

TEST_CASE("run: quiet output is exactly one JSON document") {
  TempDir dir;
  std::string out, err;
  REQUIRE(cli({"run", "--quiet", "--outdir", (dir / "out").string(), "--cache-dir", (dir / "cache").string(),
               corpus("01_grep_wc/workflow.cwl").string(), corpus("01_grep_wc/job.yaml").string()},
              &out, &err) == kExitOk);
  const Json result = Json::parse(out);  // throws on trailing garbage
  const fs::path delivered = result["count"]["path"].get<std::string>();
  CHECK(delivered == dir / "out" / "count.txt");
  CHECK(read_text(delivered) == "3\n");
  CHECK(fs::exists(dir / "out" / "provenance"));
  CHECK_FALSE(fs::exists(dir / "out" / ".miniwfl"));  // work dir removed on success
  CHECK(err.empty());
}

TEST_CASE("run: output name collisions go to per-output folders") {
  TempDir dir;
  write_text(dir / "two.cwl", R"y(
cwlVersion: v1.2
class: Workflow
inputs: {}
outputs:
  a: {type: File, outputSource: x/o}
  b: {type: File, outputSource: y/o}
steps:
  x: {run: &t {class: CommandLineTool, baseCommand: [echo, hi], inputs: {}, outputs: {o: stdout}, stdout: same.txt}, in: {}, out: [o]}
  y: {run: {class: CommandLineTool, baseCommand: [echo, ho], inputs: {}, outputs: {o: stdout}, stdout: same.txt}, in: {}, out: [o]}
)y");
  std::string out;
  REQUIRE(cli({"run", "--quiet", "--outdir", (dir / "out").string(), "--no-reuse", (dir / "two.cwl").string()}, &out) ==
          kExitOk);
  const Json result = Json::parse(out);
  CHECK(result["a"]["path"] == (dir / "out" / "same.txt").string());
  CHECK(result["b"]["path"] == (dir / "out" / "b" / "same.txt").string());
  CHECK(read_text(dir / "out" / "b" / "same.txt") == "ho\n");
}

TEST_CASE("graph: DOT on standard output") {
  std::string out, err;
  CHECK(cli({"graph", corpus("01_grep_wc/workflow.cwl").string()}, &out, &err) == kExitOk);
  CHECK(out.rfind("digraph", 0) == 0);
  CHECK(out.find("\"grep\" -> \"wc\"") != std::string::npos);
  CHECK(cli({"graph", corpus("15_scatter_basic/workflow.cwl").string()}, &out, &err) == kExitOk);
  CHECK(out.find("(scatter)") != std::string::npos);
  CHECK(cli({"graph", corpus("33_cycle/workflow.cwl").string()}, &out, &err) == kExitInvalid);
}

TEST_CASE("upgrade: identity, upgrade and downgrade") {
  std::string a, b, err;
  CHECK(cli({"upgrade", corpus("01_grep_wc/workflow.cwl").string()}, &a) == kExitOk);
  CHECK(cli({"upgrade", "--target", "v1.2", corpus("01_grep_wc/workflow.cwl").string()}, &b) == kExitOk);
  CHECK(a == b);
  CHECK(Json::parse(a)["cwlVersion"] == "v1.2");

  TempDir dir;
  std::string up;
  REQUIRE(cli({"upgrade", corpus("29_v10_upgrade/workflow.cwl").string()}, &up) == kExitOk);
  write_text(dir / "up.cwl", up);
  std::string diags;
  CHECK(cli({"validate", (dir / "up.cwl").string()}, &diags) == kExitOk);
  std::string again;
  CHECK(cli({"upgrade", (dir / "up.cwl").string()}, &again) == kExitOk);
  CHECK(again == up);

  CHECK(cli({"upgrade", "--target", "v1.0", corpus("01_grep_wc/workflow.cwl").string()}, &a, &err) == kExitUsage);
  CHECK(cli({"upgrade", "--target", "v7.0", corpus("01_grep_wc/workflow.cwl").string()}, &a, &err) == kExitUsage);
}

TEST_CASE("usage errors") {
  std::string out, err;
  CHECK(cli({}, &out, &err) == kExitUsage);
  CHECK(cli({"frobnicate"}, &out, &err) == kExitUsage);
  CHECK(cli({"run"}, &out, &err) == kExitUsage);
  CHECK(cli({"run", "--parallel", "0", "x.cwl"}, &out, &err) == kExitUsage);
  CHECK(cli({"run", "--on-error", "maybe", "x.cwl"}, &out, &err) == kExitUsage);
  CHECK(cli({"--help"}, &out, &err) == kExitOk);
  CHECK(out.find("run") != std::string::npos);
}

TEST_CASE("the installed binary honours the same contract") {
  std::string out;
  const std::string bin = MINIWFL_BINARY;
  CHECK(WEXITSTATUS(system((bin + " validate " + corpus("01_grep_wc/workflow.cwl").string() + " >/dev/null").c_str())) == 0);
  CHECK(WEXITSTATUS(system((bin + " validate " + corpus("14_unsupported_requirement/workflow.cwl").string() + " >/dev/null").c_str())) == 1);
  CHECK(WEXITSTATUS(system((bin + " bogus 2>/dev/null >/dev/null").c_str())) == 3);
}
