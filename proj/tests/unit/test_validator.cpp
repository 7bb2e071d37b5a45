#include <doctest.h>

#include <algorithm>

#include "miniwfl/error.hpp"
#include "miniwfl/validator.hpp"

using namespace miniwfl;

namespace {

const SupportMatrix kMatrix = SupportMatrix::defaults(4, 4096, 10000);

std::vector<Diagnostic> check(const std::string& text, const SupportMatrix& m = kMatrix) {
  return validate(parse_document(text, "/tmp/doc.cwl"), m);
}

std::vector<std::string> codes(const std::vector<Diagnostic>& ds) {
  std::vector<std::string> out;
  for (const auto& d : ds) out.push_back(d.code);
  return out;
}

bool has(const std::vector<Diagnostic>& ds, const std::string& code, Severity sev = Severity::Error) {
  return std::any_of(ds.begin(), ds.end(), [&](const Diagnostic& d) { return d.code == code && d.severity == sev; });
}

// Workflow around a single inline `echo` step; `extra` is spliced into the step.
std::string wf(const std::string& inputs, const std::string& step_in, const std::string& extra = "",
               const std::string& outputs = "{}", const std::string& version = "v1.2") {
  return "cwlVersion: " + version + R"(
class: Workflow
inputs: )" + inputs + R"(
outputs: )" + outputs + R"(
steps:
  s:
    run:
      class: CommandLineTool
      baseCommand: [echo]
      inputs:
        msg: {type: string, inputBinding: {position: 1}}
        opt: {type: 'int?'}
      outputs:
        out: stdout
    in: )" + step_in + R"(
    out: [out]
)" + extra;
}

const char* kCleanTool = R"y(
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [echo]
inputs:
  a: {type: string, inputBinding: {position: 1}}
outputs:
  o: stdout
)y";

}  // namespace

TEST_CASE("clean documents produce no diagnostics") {
  CHECK(check(kCleanTool).empty());
  CHECK(check(wf("{m: string}", "{msg: m}")).empty());
}

TEST_CASE("DuplicateId") {
  auto ds = check(R"y(
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [echo]
inputs:
  - {id: a, type: string}
  - {id: a, type: int}
outputs: {}
)y");
  CHECK(codes(ds) == std::vector<std::string>{"DuplicateId"});
  CHECK(ds[0].location == "/inputs/a");
}

TEST_CASE("DanglingReference") {
  CHECK(has(check(wf("{m: string}", "{msg: nope}")), "DanglingReference"));
  CHECK(has(check(wf("{m: string}", "{msg: m}", "", "{o: {type: File, outputSource: s/missing}}")), "DanglingReference"));
  CHECK(has(check(wf("{m: string}", "{msg: m}", "", "{o: {type: File, outputSource: ghost/out}}")), "DanglingReference"));
  // expression naming an undeclared input
  CHECK(has(check(R"doc(
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [echo]
arguments: ["$(inputs.ghost)"]
inputs: {}
outputs: {}
)doc"), "DanglingReference"));
}

TEST_CASE("TypeMismatch and FormatMismatch") {
  CHECK(has(check(wf("{m: int}", "{msg: m}")), "TypeMismatch"));
  CHECK(has(check(wf("{m: 'string?'}", "{msg: m}")), "TypeMismatch"));
  CHECK(has(check(wf("{m: string}", "{msg: m}", "", "{o: {type: string, outputSource: s/out}}")), "TypeMismatch"));
  const auto ds = check(R"y(
cwlVersion: v1.2
class: Workflow
$namespaces: {edam: http://edamontology.org/}
inputs:
  f: {type: File, format: edam:format_1929}
outputs: {}
steps:
  s:
    run:
      class: CommandLineTool
      baseCommand: [cat]
      inputs:
        x: {type: File, format: edam:format_1930}
      outputs: {}
    in: {x: f}
    out: []
)y");
  CHECK(codes(ds) == std::vector<std::string>{"FormatMismatch"});
}

TEST_CASE("UnboundInput") {
  const auto ds = check(wf("{}", "{}"));
  CHECK(codes(ds) == std::vector<std::string>{"UnboundInput"});
  CHECK(ds[0].location == "/steps/s/in/msg");
  // a step default satisfies the input
  CHECK(check(wf("{}", "{msg: {default: hi}}")).empty());
}

TEST_CASE("InvalidScatter") {
  CHECK(has(check(wf("{m: string}", "{msg: m}", "    scatter: other\n")), "InvalidScatter"));
  CHECK(check(wf("{m: 'string[]'}", "{msg: m}", "    scatter: msg\n")).empty());
  // scattering needs an array source
  CHECK(has(check(wf("{m: string}", "{msg: m}", "    scatter: msg\n")), "TypeMismatch"));
}

TEST_CASE("InvalidExpression") {
  auto ds = check(R"y(
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [echo]
arguments: ["$(inputs.a &&)"]
inputs: {a: boolean}
outputs: {}
)y");
  CHECK(codes(ds) == std::vector<std::string>{"InvalidExpression"});
  CHECK(has(check(wf("{m: string}", "{msg: m}", "    when: $(inputs.msg ==)\n")), "InvalidExpression"));
  CHECK(has(check(wf("{m: string}", "{msg: m}", "    when: $(inputs.zzz)\n")), "DanglingReference"));
}

TEST_CASE("UnsupportedRequirement versus UnsupportedHint") {
  const std::string req = R"y(
cwlVersion: v1.2
class: CommandLineTool
$namespaces: {acme: https://example.org/acme#}
baseCommand: [echo]
requirements:
  acme:Quantum: {}
inputs: {}
outputs: {}
)y";
  auto ds = check(req);
  CHECK(codes(ds) == std::vector<std::string>{"UnsupportedRequirement"});
  std::string hint = req;
  hint.replace(hint.find("requirements"), 12, "hints");
  ds = check(hint);
  REQUIRE(ds.size() == 1);
  CHECK(ds[0].code == "UnsupportedHint");
  CHECK(ds[0].severity == Severity::Warning);
  CHECK_FALSE(has_errors(ds));

  // a built-in kind the matrix switches off behaves like an unknown one
  SupportMatrix no_containers = kMatrix;
  no_containers.supported_requirement_kinds.erase(ClauseKind::Container);
  const std::string docker = R"y(
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [echo]
requirements:
  DockerRequirement: {dockerPull: alpine}
inputs: {}
outputs: {}
)y";
  CHECK(check(docker).empty());
  CHECK(codes(check(docker, no_containers)) == std::vector<std::string>{"UnsupportedRequirement"});
}

TEST_CASE("resources: requirements beyond capacity fail, hints are clamped") {
  const std::string base = R"y(
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [echo]
KIND:
  ResourceRequirement: {coresMin: 64}
inputs: {}
outputs: {}
)y";
  std::string req = base, hint = base;
  req.replace(req.find("KIND"), 4, "requirements");
  hint.replace(hint.find("KIND"), 4, "hints");
  CHECK(codes(check(req)) == std::vector<std::string>{"ResourceUnsatisfiable"});
  const auto ds = check(hint);
  REQUIRE(ds.size() == 1);
  CHECK(ds[0].code == "ResourceHintClamped");
  CHECK(ds[0].severity == Severity::Warning);
}

TEST_CASE("UnsupportedVersion and UnsupportedFeature") {
  CHECK(has(check(wf("{m: string}", "{msg: m}", "", "{}", "v9.9")), "UnsupportedVersion"));
  const auto ds = check(R"y(
cwlVersion: v1.2
class: Workflow
inputs: {xs: 'string[]'}
outputs: {}
steps:
  sub:
    scatter: m
    in: {m: xs}
    out: []
    run:
      class: Workflow
      inputs: {m: string}
      outputs: {}
      steps: []
)y");
  CHECK(has(ds, "UnsupportedFeature"));
}

TEST_CASE("CycleDetected lists the cycle once") {
  const auto ds = check(R"y(
cwlVersion: v1.2
class: Workflow
inputs: {}
outputs: {}
steps:
  a:
    run: &t
      class: CommandLineTool
      baseCommand: [echo]
      inputs: {x: string}
      outputs: {o: stdout}
    in: {x: c/o}
    out: [o]
  b:
    run: *t
    in: {x: a/o}
    out: [o]
  c:
    run: *t
    in: {x: b/o}
    out: [o]
)y");
  REQUIRE(std::count_if(ds.begin(), ds.end(), [](const Diagnostic& d) { return d.code == "CycleDetected"; }) == 1);
  const auto it = std::find_if(ds.begin(), ds.end(), [](const Diagnostic& d) { return d.code == "CycleDetected"; });
  for (const char* s : {"a", "b", "c"}) CHECK(it->message.find(s) != std::string::npos);
}

TEST_CASE("layering puts each step at its longest chain from the inputs") {
  const Document doc = parse_document(R"y(
cwlVersion: v1.2
class: Workflow
inputs: {m: string}
outputs: {}
steps:
  a: {run: &t {class: CommandLineTool, baseCommand: [echo], inputs: {x: string, y: 'string?'}, outputs: {o: stdout}}, in: {x: m}, out: [o]}
  b: {run: *t, in: {x: a/o}, out: [o]}
  c: {run: *t, in: {x: m, y: b/o}, out: [o]}
  d: {run: *t, in: {x: m}, out: [o]}
)y", "/tmp/l.cwl");
  const auto layers = layering(doc.workflow());
  REQUIRE(layers.size() == 3);
  CHECK(layers[0] == std::set<std::string>{"a", "d"});
  CHECK(layers[1] == std::set<std::string>{"b"});
  CHECK(layers[2] == std::set<std::string>{"c"});
  CHECK(check_acyclic(doc.workflow()).empty());
}

TEST_CASE("diagnostics serialize to one JSON object") {
  const Diagnostic d{Severity::Warning, "UnsupportedHint", "/hints/x", "ignored"};
  CHECK(d.to_json() == Json{{"severity", "warning"}, {"code", "UnsupportedHint"}, {"location", "/hints/x"},
                            {"message", "ignored"}});
  CHECK(split_source("step/out") == std::pair<std::string, std::string>{"step", "out"});
  CHECK(split_source("input") == std::pair<std::string, std::string>{"", "input"});
}
