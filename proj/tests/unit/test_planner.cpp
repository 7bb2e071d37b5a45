#include <doctest.h>

#include <algorithm>
#include <regex>

#include "../support/corpus.hpp"
#include "../support/dag.hpp"
#include "miniwfl/error.hpp"
#include "miniwfl/planner.hpp"
#include "miniwfl/validator.hpp"

using namespace miniwfl;
using namespace miniwfl::testing;

namespace {

Json seed_file(const TempDir& dir) {
  write_text(dir / "seed.txt", "seed\n");
  return Json{{"class", "File"}, {"path", (dir / "seed.txt").string()}};
}

Document from_json(const Json& j) { return document_from_json(j, "/tmp/generated.cwl"); }

const char* kScatter = R"y(
cwlVersion: v1.2
class: Workflow
inputs:
  xs: 'string[]'
  ys: 'string[]'
outputs:
  outs: {type: 'File[]', outputSource: s/out}
steps:
  s:
    run:
      class: CommandLineTool
      baseCommand: [echo]
      inputs:
        a: {type: string, inputBinding: {position: 1}}
        b: {type: string, inputBinding: {position: 2}}
      outputs:
        out: stdout
    scatter: [a, b]
    in: {a: xs, b: ys}
    out: [out]
)y";

}  // namespace

TEST_CASE("state transitions") {
  using S = TaskState;
  const S all[] = {S::Pending, S::Ready, S::Running, S::Succeeded, S::Failed, S::Skipped, S::Cached};
  const std::set<std::pair<S, S>> legal{{S::Pending, S::Ready}, {S::Pending, S::Skipped}, {S::Ready, S::Running},
                                        {S::Ready, S::Cached},  {S::Running, S::Succeeded}, {S::Running, S::Failed}};
  for (S a : all) {
    for (S b : all) {
      CAPTURE(to_string(a));
      CAPTURE(to_string(b));
      CHECK(transition_allowed(a, b) == legal.contains({a, b}));
    }
  }
}

TEST_CASE("layers match an independent longest-path computation on random DAGs") {
  std::mt19937 rng(7);
  TempDir dir;
  const Json seed = seed_file(dir);
  for (int round = 0; round < 100; ++round) {
    const RandomDag dag = random_dag(rng, 30, 0.15);
    const Document doc = from_json(dag_workflow(dag));
    REQUIRE(validate(doc, SupportMatrix::defaults(1, 1024, 1024)).empty());
    const auto layers = layering(doc.workflow());
    const auto depth = longest_path_depth(dag);
    for (std::size_t k = 0; k < layers.size(); ++k) {
      for (const auto& id : layers[k]) CHECK(depth[std::stoi(id.substr(1))] == static_cast<int>(k));
    }
    JobOrder job;
    job.values["seed"] = seed;
    const DataflowGraph g = plan(doc, job);
    CHECK(g.nodes().size() == dag.size());
    std::size_t edges = 0;
    for (const auto& d : dag.deps) edges += std::max<std::size_t>(d.size(), 0);
    CHECK(g.edges().size() == edges);
    for (int i = 0; i < static_cast<int>(dag.size()); ++i) {
      CHECK(g.layer(RandomDag::step_id(i)) == static_cast<std::size_t>(depth[i]));
    }
    // Only sources are ready before anything ran.
    std::vector<std::string> sources;
    for (int i = 0; i < static_cast<int>(dag.size()); ++i) {
      if (dag.deps[i].empty()) sources.push_back(RandomDag::step_id(i));
    }
    auto ready = g.ready_set();
    std::sort(ready.begin(), ready.end());
    std::sort(sources.begin(), sources.end());
    CHECK(ready == sources);
  }
}

TEST_CASE("cycle detection agrees with a depth-first search") {
  std::mt19937 rng(11);
  int injected = 0;
  for (int round = 0; round < 200; ++round) {
    RandomDag dag = random_dag(rng, 50, 0.1);
    const bool cyclic = inject_back_edge(rng, dag);
    injected += cyclic;
    CHECK(dfs_has_cycle(dag) == cyclic);
    const Document doc = from_json(dag_workflow(dag));
    const auto ds = check_acyclic(doc.workflow());
    CHECK(ds.size() == (cyclic ? 1u : 0u));
    if (cyclic) CHECK_THROWS_AS(layering(doc.workflow()), Error);
  }
  CHECK(injected > 150);
}

TEST_CASE("static scatter expands into indexed nodes, dot product") {
  const Document doc = parse_document(kScatter, "/tmp/s.cwl");
  JobOrder job;
  job.values = {{"xs", Json{"a", "b", "c"}}, {"ys", Json{"1", "2", "3"}}};
  const DataflowGraph g = plan(doc, job);
  REQUIRE(g.nodes().size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const TaskNode& n = g.node("s[" + std::to_string(i) + "]");
    CHECK(n.scatter_index == i);
    CHECK(n.bindings.at("a").value == job.values["xs"][i]);
    CHECK(n.bindings.at("b").value == job.values["ys"][i]);
  }
  CHECK(g.workflow_outputs().at("outs").kind == Binding::Kind::Gather);
  CHECK(g.workflow_outputs().at("outs").sources.size() == 3);
}

TEST_CASE("scatter of unequal lengths and empty scatter") {
  const Document doc = parse_document(kScatter, "/tmp/s.cwl");
  JobOrder job;
  job.values = {{"xs", Json{"a", "b"}}, {"ys", Json{"1"}}};
  try {
    plan(doc, job);
    FAIL("accepted unequal lengths");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ScatterLengthMismatch);
  }
  job.values = {{"xs", Json::array()}, {"ys", Json::array()}};
  const DataflowGraph g = plan(doc, job);
  CHECK(g.nodes().empty());
  CHECK(g.resolve(g.workflow_outputs().at("outs")) == Json::array());
}

TEST_CASE("expand_scatter directly") {
  TaskNode proto;
  proto.id = "s";
  proto.bindings["a"] = Binding::literal(nullptr);
  proto.bindings["k"] = Binding::literal("const");
  const auto nodes = expand_scatter(proto, {"a"}, {{"a", Json{1, 2}}});
  REQUIRE(nodes.size() == 2);
  CHECK(nodes[1].id == "s[1]");
  CHECK(nodes[1].bindings.at("a").value == 2);
  CHECK(nodes[1].bindings.at("k").value == "const");
  CHECK_THROWS_AS(expand_scatter(proto, {"a"}, {{"a", 5}}), Error);
}

TEST_CASE("sub-workflows are inlined with prefixed ids") {
  const Document doc = load_document(corpus_root() / "22_subworkflow" / "workflow.cwl");
  JobOrder job = load_job_order_file(corpus_root() / "22_subworkflow" / "job.yaml", document_inputs(doc));
  const DataflowGraph g = plan(doc, job);
  bool nested = false;
  for (const auto& n : g.nodes()) {
    nested |= n.id.find('/') != std::string::npos;
    CHECK(n.tool_document->is_tool());
  }
  CHECK(nested);
}

TEST_CASE("a tool plans as a one-node graph named main") {
  const Document doc = parse_document(R"y(
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [echo]
inputs: {m: {type: string, inputBinding: {position: 1}}}
outputs: {o: stdout}
)y", "/tmp/t.cwl");
  JobOrder job;
  job.values["m"] = "hi";
  const DataflowGraph g = plan(doc, job);
  REQUIRE(g.nodes().size() == 1);
  CHECK(g.nodes()[0].id == "main");
  CHECK(g.ready_set() == std::vector<std::string>{"main"});
}

TEST_CASE("graph export: chain, scatter annotation and shared ranks") {
  const Document chain = parse_document(R"y(
cwlVersion: v1.2
class: Workflow
inputs: {m: string}
outputs: {}
steps:
  first: {run: &t {class: CommandLineTool, baseCommand: [echo], inputs: {x: string}, outputs: {o: stdout}}, in: {x: m}, out: [o]}
  second: {run: {class: CommandLineTool, baseCommand: [cat], inputs: {f: File}, outputs: {o: stdout}}, in: {f: first/o}, out: [o]}
)y", "/tmp/c.cwl");
  const std::string dot = plan(chain, {}, PlanOptions{true}).to_dot();
  const std::regex node_re(R"(^\s*"[^"]+" \[label=)"), edge_re(R"(^\s*"[^"]+" -> "[^"]+")");
  int nodes = 0, edges = 0;
  std::istringstream lines(dot);
  for (std::string line; std::getline(lines, line);) {
    nodes += std::regex_search(line, node_re);
    edges += std::regex_search(line, edge_re);
  }
  CHECK(nodes == 2);
  CHECK(edges == 1);
  CHECK(dot.rfind("digraph", 0) == 0);

  const std::string scatter_dot = plan(parse_document(kScatter, "/tmp/s.cwl"), {}, PlanOptions{true}).to_dot();
  CHECK(scatter_dot.find("\"s\" [label=\"s\\n(scatter)") != std::string::npos);

  const Document fan = load_document(corpus_root() / "35_fan_out_collate" / "workflow.cwl");
  const DataflowGraph g = plan(fan, {}, PlanOptions{true});
  const std::string fan_dot = g.to_dot();
  const std::string search_rank = [&] {
    std::istringstream ls(fan_dot);
    for (std::string line; std::getline(ls, line);) {
      if (line.find("rank=same") != std::string::npos && line.find("find_16S_matches/search") != std::string::npos) return line;
    }
    return std::string();
  }();
  for (const char* s : {"find_16S_matches/search", "find_23S_matches/search", "find_5S_matches/search",
                        "find_5_8S_matches/search"}) {
    CHECK(search_rank.find(s) != std::string::npos);
    CHECK(g.layer(s) == g.layer("mask") + 1);
  }
  CHECK(search_rank.find("mask") == std::string::npos);
}

TEST_CASE("job orders: defaults, bare paths, missing and mistyped inputs") {
  TempDir dir;
  write_text(dir / "data.txt", "abc");
  const std::vector<InputParameter> inputs{
      {"f", parse_type("File"), {}, {}, {}, {}, false},
      {"n", parse_type("int"), {}, {}, Json(3), {}, false},
      {"opt", parse_type("string?"), {}, {}, {}, {}, false},
  };
  const JobOrder job = load_job_order(Json{{"f", "data.txt"}}, inputs, dir.path());
  CHECK(job.values.at("f")["size"] == 3);
  CHECK(job.values.at("f")["checksum"] ==
        "sha256$ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(job.values.at("n") == 3);
  CHECK((!job.values.contains("opt") || job.values.at("opt").is_null()));

  auto code_of = [&](const Json& raw) {
    try {
      load_job_order(raw, inputs, dir.path());
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find('\'') != std::string::npos);
      return e.code();
    }
    return ErrorCode::IOError;
  };
  CHECK(code_of(Json::object()) == ErrorCode::JobOrderError);
  CHECK(code_of(Json{{"f", "data.txt"}, {"n", "three"}}) == ErrorCode::JobOrderError);
  CHECK(code_of(Json{{"f", "absent.txt"}}) == ErrorCode::JobOrderError);
}

TEST_CASE("resources: defaults, expressions and hint clamping") {
  const Document doc = parse_document(R"y(
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [echo]
requirements:
  ResourceRequirement: {coresMin: $(inputs.threads), ramMin: 512}
hints:
  ResourceRequirement: {diskMin: 999999}
inputs: {threads: int}
outputs: {}
)y", "/tmp/r.cwl");
  JobOrder job;
  job.values["threads"] = 2;
  const DataflowGraph g = plan(doc, job);
  const ResourceRequest cap{4, 8192, 1000, std::nullopt};
  const ResourceRequest r = resolve_resources(g.node("main"), {{"threads", 2}}, cap);
  CHECK(r.cores == 2);
  CHECK(r.ram_mib == 512);
  CHECK(r.disk_mib == 0);  // the requirement clause wins whole; hint fields are not merged in

  const Document hinted = parse_document(
      "cwlVersion: v1.2\nclass: CommandLineTool\nbaseCommand: [echo]\nhints:\n  ResourceRequirement: {diskMin: 999999, coresMin: 16}\n"
      "inputs: {}\noutputs: {}\n", "/tmp/h.cwl");
  const ResourceRequest h = resolve_resources(plan(hinted, {}).node("main"), {}, cap);
  CHECK(h.disk_mib == 1000);
  CHECK(h.cores == 4);

  const Document bare = parse_document(
      "cwlVersion: v1.2\nclass: CommandLineTool\nbaseCommand: [echo]\ninputs: {}\noutputs: {}\n", "/tmp/b.cwl");
  const ResourceRequest d = resolve_resources(plan(bare, {}).node("main"), {}, cap);
  CHECK(d == ResourceRequest{1, 256, 0, std::nullopt});
}

TEST_CASE("guards skip and publish nulls") {
  const Document doc = load_document(corpus_root() / "20_when_false" / "workflow.cwl");
  JobOrder job = load_job_order_file(corpus_root() / "20_when_false" / "job.yaml", document_inputs(doc));
  DataflowGraph g = plan(doc, job);
  const auto ready = g.ready_set();
  REQUIRE_FALSE(ready.empty());
  const TaskNode& n = g.node(ready.front());
  REQUIRE_FALSE(n.guards.empty());
  CHECK(apply_guards(n, g) == GuardDecision::Skip);
  g.skip(n.id);
  CHECK(g.node(n.id).state == TaskState::Skipped);
  for (const auto& o : n.tool().outputs) CHECK(g.published({n.id, o.id}).is_null());
  CHECK_THROWS_AS(g.set_state(n.id, TaskState::Running), std::logic_error);
}
