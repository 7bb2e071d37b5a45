#include "miniwfl/planner.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "miniwfl/error.hpp"
#include "miniwfl/validator.hpp"

namespace miniwfl {

namespace fs = std::filesystem;

const char* to_string(TaskState state) {
  switch (state) {
    case TaskState::Pending: return "Pending";
    case TaskState::Ready: return "Ready";
    case TaskState::Running: return "Running";
    case TaskState::Succeeded: return "Succeeded";
    case TaskState::Failed: return "Failed";
    case TaskState::Skipped: return "Skipped";
    case TaskState::Cached: return "Cached";
  }
  return "Pending";
}

bool transition_allowed(TaskState from, TaskState to) {
  switch (from) {
    case TaskState::Pending: return to == TaskState::Ready || to == TaskState::Skipped;
    case TaskState::Ready: return to == TaskState::Running || to == TaskState::Cached;
    case TaskState::Running: return to == TaskState::Succeeded || to == TaskState::Failed;
    default: return false;
  }
}

// ---------------------------------------------------------------------------
// Job orders
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void job_error(const std::string& input, const std::string& what) {
  throw Error(ErrorCode::JobOrderError, "input '" + input + "': " + what);
}

fs::path file_location(const Json& value) {
  std::string path;
  if (value.is_string()) {
    path = value.get<std::string>();
  } else if (value.contains("path") && value["path"].is_string()) {
    path = value["path"].get<std::string>();
  } else if (value.contains("location") && value["location"].is_string()) {
    path = value["location"].get<std::string>();
  }
  if (path.rfind("file://", 0) == 0) path = path.substr(7);
  return path;
}

Json load_value(const Json& raw, DataType type, const InputParameter& param, const fs::path& base) {
  if (raw.is_null()) return nullptr;
  if (type.array) {
    if (!raw.is_array()) job_error(param.id, "expected an array for type " + to_string(type));
    Json out = Json::array();
    for (const auto& item : raw) out.push_back(load_value(item, type.element(), param, base));
    return out;
  }
  if (type.base != BaseType::File && type.base != BaseType::Directory) return raw;

  const bool is_object = raw.is_object();
  const std::string expected = type.base == BaseType::File ? "File" : "Directory";
  if (!(raw.is_string() || (is_object && raw.value("class", "") == expected))) {
    job_error(param.id, "expected a " + expected + " (object with class " + expected + " or a path)");
  }
  fs::path path = file_location(raw);
  if (path.empty()) job_error(param.id, expected + " value has no path");
  if (path.is_relative()) path = base / path;
  try {
    if (type.base == BaseType::Directory) return capture_directory(path);
    std::optional<std::string> format = param.format;
    if (is_object && raw.contains("format") && raw["format"].is_string()) {
      format = raw["format"].get<std::string>();
    }
    FileValue file = FileValue::capture(path, format);
    file.streamable = param.streamable;
    return file.to_json();
  } catch (const Error& e) {
    job_error(param.id, e.what());
  }
}

}  // namespace

JobOrder load_job_order(const Json& raw, const std::vector<InputParameter>& inputs,
                        const fs::path& base_dir, const fs::path& defaults_dir) {
  if (!raw.is_null() && !raw.is_object()) {
    throw Error(ErrorCode::JobOrderError, "job order must be a map of input ids to values");
  }
  JobOrder job;
  for (const auto& param : inputs) {
    Json value = nullptr;
    fs::path base = base_dir;
    if (raw.is_object() && raw.contains(param.id) && !raw[param.id].is_null()) {
      value = raw[param.id];
    } else if (param.default_value) {
      value = *param.default_value;
      if (!defaults_dir.empty()) base = defaults_dir;
    }
    if (value.is_null()) {
      if (!param.type.optional) job_error(param.id, "missing required input");
      job.values[param.id] = nullptr;
      continue;
    }
    Json loaded = load_value(value, param.type, param, base);
    if (!value_conforms(loaded, param.type)) {
      job_error(param.id, "value " + value.dump() + " does not conform to type " + to_string(param.type));
    }
    job.values[param.id] = std::move(loaded);
  }
  return job;
}

JobOrder load_job_order_file(const fs::path& path, const std::vector<InputParameter>& inputs,
                             const fs::path& defaults_dir) {
  FileLoader loader;
  std::string text;
  try {
    text = loader.fetch(path.string());
  } catch (const Error&) {
    throw Error(ErrorCode::JobOrderError, "job order not found: " + path.string());
  }
  Json raw;
  try {
    raw = load_structured_text(text);
  } catch (const Error& e) {
    throw Error(ErrorCode::JobOrderError, std::string("job order: ") + e.what());
  }
  return load_job_order(raw, inputs, fs::absolute(path).parent_path(), defaults_dir);
}

std::vector<InputParameter> document_inputs(const Document& doc) {
  std::vector<InputParameter> inputs = doc.is_tool() ? doc.tool().inputs : doc.workflow().inputs;
  for (auto& p : inputs) {
    p.position.reset();
    p.prefix.reset();
  }
  return inputs;
}

// ---------------------------------------------------------------------------
// Task nodes and the graph
// ---------------------------------------------------------------------------

const Clause* TaskNode::find_clause(ClauseKind kind, bool* required) const {
  for (const auto& c : requirements) {
    if (c.kind == kind) {
      if (required) *required = true;
      return &c;
    }
  }
  for (const auto& c : hints) {
    if (c.kind == kind) {
      if (required) *required = false;
      return &c;
    }
  }
  return nullptr;
}

void DataflowGraph::set_state(const std::string& id, TaskState to) {
  TaskNode& node = nodes_.at(index_.at(id));
  if (!transition_allowed(node.state, to)) {
    throw std::logic_error("illegal transition of task '" + id + "' from " + to_string(node.state) +
                           " to " + to_string(to));
  }
  node.state = to;
}

void DataflowGraph::publish(const std::string& task, const std::string& output, Json value) {
  published_[Endpoint{task, output}] = std::move(value);
}

void DataflowGraph::skip(const std::string& id) {
  set_state(id, TaskState::Skipped);
  for (const auto& out : node(id).tool().outputs) publish(id, out.id, nullptr);
}

std::optional<Json> DataflowGraph::resolve(const Binding& binding) const {
  Json value;
  switch (binding.kind) {
    case Binding::Kind::Value:
      value = binding.value;
      break;
    case Binding::Kind::Edge: {
      auto it = published_.find(binding.sources.front());
      if (it == published_.end()) return std::nullopt;
      value = it->second;
      break;
    }
    case Binding::Kind::Gather:
      value = Json::array();
      for (const auto& src : binding.sources) {
        auto it = published_.find(src);
        if (it == published_.end()) return std::nullopt;
        value.push_back(it->second);
      }
      break;
  }
  if (value.is_null() && binding.fallback) return *binding.fallback;
  return value;
}

bool DataflowGraph::available(const Binding& binding) const {
  return std::all_of(binding.sources.begin(), binding.sources.end(),
                     [&](const Endpoint& e) { return published_.contains(e); });
}

std::map<std::string, Json> DataflowGraph::resolve_inputs(const TaskNode& node) const {
  std::map<std::string, Json> out;
  for (const auto& [id, binding] : node.bindings) {
    auto value = resolve(binding);
    if (!value) throw Error(ErrorCode::PlanError, "input '" + id + "' of '" + node.id + "' is not available");
    out[id] = std::move(*value);
  }
  return out;
}

std::vector<std::string> DataflowGraph::ready_set() const {
  std::vector<std::size_t> ready;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const TaskNode& node = nodes_[i];
    if (node.state != TaskState::Pending) continue;
    bool ok = std::all_of(node.bindings.begin(), node.bindings.end(),
                          [&](const auto& kv) { return available(kv.second); }) &&
              std::all_of(node.scatter_bindings.begin(), node.scatter_bindings.end(),
                          [&](const auto& kv) { return available(kv.second); });
    for (const auto& guard : node.guards) {
      for (const auto& [id, binding] : guard.inputs) ok = ok && available(binding);
    }
    if (ok) ready.push_back(i);
  }
  std::sort(ready.begin(), ready.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(layers_[a], nodes_[a].id) < std::tie(layers_[b], nodes_[b].id);
  });
  std::vector<std::string> out;
  out.reserve(ready.size());
  for (auto i : ready) out.push_back(nodes_[i].id);
  return out;
}

void DataflowGraph::finalize() {
  index_.clear();
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!index_.emplace(nodes_[i].id, i).second) {
      throw Error(ErrorCode::PlanError, "duplicate task id '" + nodes_[i].id + "'");
    }
  }
  std::set<Edge> edges;
  auto add = [&](const Binding& b, const std::string& consumer, const std::string& input) {
    for (const auto& src : b.sources) edges.insert(Edge{src, consumer, input});
  };
  for (const auto& node : nodes_) {
    for (const auto& [id, b] : node.bindings) add(b, node.id, id);
    for (const auto& [id, b] : node.scatter_bindings) add(b, node.id, id);
    for (const auto& guard : node.guards) {
      for (const auto& [id, b] : guard.inputs) add(b, node.id, "when:" + id);
    }
  }
  edges_.assign(edges.begin(), edges.end());

  // Nodes are appended in dependency order, so one pass computes the longest
  // path from the workflow inputs.
  std::map<std::string, std::vector<std::string>> producers;
  for (const auto& e : edges_) {
    if (!index_.contains(e.from.task)) {
      throw Error(ErrorCode::PlanError, "edge from unknown task '" + e.from.task + "'");
    }
    producers[e.consumer].push_back(e.from.task);
  }
  layers_.assign(nodes_.size(), 0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (const auto& p : producers[nodes_[i].id]) {
      const std::size_t j = index_.at(p);
      if (j >= i) throw Error(ErrorCode::PlanError, "task '" + nodes_[i].id + "' precedes its producer");
      layers_[i] = std::max(layers_[i], layers_[j] + 1);
    }
  }
}

std::string DataflowGraph::to_dot() const {
  std::ostringstream out;
  out << "digraph workflow {\n  rankdir=TB;\n  node [shape=box];\n";
  for (const auto& node : nodes_) {
    out << "  \"" << node.id << "\" [label=\"" << node.id;
    if (!node.deferred_scatter.empty()) out << "\\n(scatter)";
    out << "\\n" << to_string(node.state) << "\"];\n";
  }
  for (const auto& e : edges_) {
    out << "  \"" << e.from.task << "\" -> \"" << e.consumer << "\" [label=\"" << e.from.output
        << "→" << e.input << "\"];\n";
  }
  std::map<std::size_t, std::vector<std::string>> by_layer;
  for (std::size_t i = 0; i < nodes_.size(); ++i) by_layer[layers_[i]].push_back(nodes_[i].id);
  for (const auto& [layer, ids] : by_layer) {
    out << "  { rank=same;";
    for (const auto& id : ids) out << " \"" << id << "\";";
    out << " }\n";
  }
  out << "}\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Planning
// ---------------------------------------------------------------------------

namespace {

// Later lists override earlier ones clause by clause (matched on class).
std::vector<Clause> merge_clauses(std::initializer_list<const std::vector<Clause>*> lists) {
  std::vector<Clause> out;
  for (const auto* list : lists) {
    for (const auto& c : *list) {
      auto it = std::find_if(out.begin(), out.end(),
                             [&](const Clause& e) { return e.class_name == c.class_name; });
      if (it != out.end()) {
        *it = c;
      } else {
        out.push_back(c);
      }
    }
  }
  return out;
}

std::vector<Clause> without_classes(std::vector<Clause> hints, const std::vector<Clause>& reqs) {
  std::erase_if(hints, [&](const Clause& h) {
    return std::any_of(reqs.begin(), reqs.end(), [&](const Clause& r) { return r.class_name == h.class_name; });
  });
  return hints;
}

Document wrap_tool(const Document& tool_doc) {
  auto shared = std::make_shared<const Document>(tool_doc);
  WorkflowDescription wf;
  wf.inputs = document_inputs(tool_doc);
  Step step;
  step.id = "main";
  step.run.path = tool_doc.base_uri;
  step.run.document = shared;
  for (const auto& p : tool_doc.tool().inputs) step.in.push_back(StepInput{p.id, p.id, std::nullopt});
  for (const auto& o : tool_doc.tool().outputs) {
    step.out.push_back(o.id);
    OutputParameter out;
    out.id = o.id;
    out.type = o.type;
    out.output_source = "main/" + o.id;
    out.format = o.format;
    wf.outputs.push_back(std::move(out));
  }
  wf.steps.push_back(std::move(step));
  Document doc;
  doc.version = tool_doc.version;
  doc.base_uri = tool_doc.base_uri;
  doc.body = std::move(wf);
  return doc;
}

}  // namespace

class GraphBuilder {
 public:
  explicit GraphBuilder(PlanOptions options) : options_(options) {}

  using Scope = std::map<std::string, Binding>;

  Scope inline_workflow(const WorkflowDescription& wf, const std::string& prefix, const Scope& inputs,
                        const std::vector<Guard>& guards, const std::vector<Clause>& reqs,
                        const std::vector<Clause>& hints) {
    std::map<std::string, Scope> step_outputs;
    auto lookup = [&](const std::string& source) -> Binding {
      auto [producer, output] = split_source(source);
      if (producer.empty()) {
        auto it = inputs.find(output);
        if (it == inputs.end()) throw Error(ErrorCode::PlanError, "unresolvable source '" + source + "'");
        return it->second;
      }
      auto sit = step_outputs.find(producer);
      if (sit == step_outputs.end() || !sit->second.contains(output)) {
        throw Error(ErrorCode::PlanError, "unresolvable source '" + prefix + source + "'");
      }
      return sit->second.at(output);
    };

    const auto wf_reqs = merge_clauses({&reqs, &wf.requirements});
    const auto wf_hints = merge_clauses({&hints, &wf.hints});

    for (const auto& layer : layering(wf)) {
      for (const auto& step_id : layer) {
        const Step& step = *wf.find_step(step_id);
        Scope step_in;
        for (const auto& in : step.in) {
          Binding b = Binding::literal(nullptr);
          if (in.source) {
            b = lookup(*in.source);
            if (!b.fallback && in.default_value) b.fallback = in.default_value;
          } else if (in.default_value) {
            b = Binding::literal(*in.default_value);
          }
          step_in[in.id] = std::move(b);
        }
        std::vector<Guard> step_guards = guards;
        if (step.when) {
          try {
            step_guards.push_back(Guard{parse_expr(*step.when), step_in, true});
          } catch (const ExprSyntaxError& e) {
            throw Error(ErrorCode::PlanError, "step '" + prefix + step.id + "': " + e.what());
          }
        }
        const Document& run = *step.run.document;
        const std::string id = prefix + step.id;
        if (run.is_workflow()) {
          const auto& sub = run.workflow();
          Scope sub_in;
          for (const auto& p : sub.inputs) sub_in[p.id] = bind_param(p, step_in);
          for (auto& g : step_guards) g.own = false;
          step_outputs[step.id] = inline_workflow(sub, id + "/", sub_in, step_guards,
                                                  merge_clauses({&wf_reqs, &step.requirements}),
                                                  merge_clauses({&wf_hints, &step.hints}));
          continue;
        }
        TaskNode node;
        node.id = id;
        node.tool_document = step.run.document;
        for (const auto& p : run.tool().inputs) node.bindings[p.id] = bind_param(p, step_in);
        node.guards = std::move(step_guards);
        node.requirements = merge_clauses({&wf_reqs, &run.tool().requirements, &step.requirements});
        node.hints = without_classes(merge_clauses({&wf_hints, &run.tool().hints, &step.hints}),
                                     node.requirements);
        step_outputs[step.id] = add_tool_node(std::move(node), step, step_in);
      }
    }

    Scope outputs;
    for (const auto& out : wf.outputs) outputs[out.id] = lookup(*out.output_source);
    return outputs;
  }

  DataflowGraph finish(Scope outputs) {
    graph_.workflow_outputs_ = std::move(outputs);
    graph_.finalize();
    return std::move(graph_);
  }

 private:
  static Binding bind_param(const InputParameter& p, const Scope& step_in) {
    auto it = step_in.find(p.id);
    Binding b = it != step_in.end() ? it->second : Binding::literal(nullptr);
    if (!b.fallback && p.default_value) b.fallback = p.default_value;
    return b;
  }

  Scope add_tool_node(TaskNode node, const Step& step, const Scope& step_in) {
    Scope outputs;
    if (step.scatter.empty()) {
      for (const auto& o : node.tool().outputs) outputs[o.id] = Binding::edge({node.id, o.id});
      graph_.nodes_.push_back(std::move(node));
      return outputs;
    }
    std::map<std::string, Binding> scattered;
    bool known = !options_.static_view;
    for (const auto& id : step.scatter) {
      const Binding& b = step_in.at(id);
      scattered[id] = b;
      known = known && b.kind == Binding::Kind::Value;
    }
    if (!known) {
      node.deferred_scatter = step.scatter;
      node.scatter_bindings = std::move(scattered);
      for (const auto& o : node.tool().outputs) outputs[o.id] = Binding::edge({node.id, o.id});
      graph_.nodes_.push_back(std::move(node));
      return outputs;
    }
    std::map<std::string, Json> bound;
    for (const auto& [id, b] : scattered) {
      bound[id] = b.value.is_null() && b.fallback ? *b.fallback : b.value;
    }
    auto elements = expand_scatter(node, step.scatter, bound);
    for (const auto& o : node.tool().outputs) {
      if (elements.empty()) {
        outputs[o.id] = Binding::literal(Json::array());
        continue;
      }
      Binding gather;
      gather.kind = Binding::Kind::Gather;
      for (const auto& e : elements) gather.sources.push_back({e.id, o.id});
      outputs[o.id] = std::move(gather);
    }
    for (auto& e : elements) graph_.nodes_.push_back(std::move(e));
    return outputs;
  }

  PlanOptions options_;
  DataflowGraph graph_;
};

DataflowGraph plan(const Document& doc, const JobOrder& job, PlanOptions options) {
  const Document wrapped = doc.is_tool() ? wrap_tool(doc) : doc;
  const auto& wf = wrapped.workflow();
  GraphBuilder builder(options);
  GraphBuilder::Scope inputs;
  for (const auto& p : wf.inputs) {
    Json value = nullptr;
    if (!options.static_view) {
      auto it = job.values.find(p.id);
      if (it != job.values.end()) value = it->second;
    }
    inputs[p.id] = Binding::literal(std::move(value));
  }
  auto outputs = builder.inline_workflow(wf, "", inputs, {}, {}, {});
  return builder.finish(std::move(outputs));
}

std::vector<TaskNode> expand_scatter(const TaskNode& prototype, const std::vector<std::string>& scatter,
                                     const std::map<std::string, Json>& bound) {
  std::optional<std::size_t> width;
  for (const auto& id : scatter) {
    auto it = bound.find(id);
    if (it == bound.end() || !it->second.is_array()) {
      throw Error(ErrorCode::TypeError, "scattered input '" + id + "' of '" + prototype.id + "' is not an array");
    }
    if (width && *width != it->second.size()) {
      throw Error(ErrorCode::ScatterLengthMismatch,
                  "scatter over '" + prototype.id + "' has inputs of lengths " + std::to_string(*width) +
                      " and " + std::to_string(it->second.size()));
    }
    width = it->second.size();
  }
  std::vector<TaskNode> out;
  out.reserve(width.value_or(0));
  for (std::size_t i = 0; i < width.value_or(0); ++i) {
    TaskNode node = prototype;
    node.id = prototype.id + "[" + std::to_string(i) + "]";
    node.deferred_scatter.clear();
    node.scatter_bindings.clear();
    node.scatter_index = i;
    node.state = TaskState::Pending;
    for (const auto& id : scatter) {
      const Json& element = bound.at(id)[i];
      if (auto it = node.bindings.find(id); it != node.bindings.end()) {
        it->second = Binding::literal(element);
      }
      for (auto& guard : node.guards) {
        if (!guard.own) continue;
        if (auto it = guard.inputs.find(id); it != guard.inputs.end()) it->second = Binding::literal(element);
      }
    }
    out.push_back(std::move(node));
  }
  return out;
}

GuardDecision apply_guard(const Guard& guard, const EvalContext& ctx) {
  Json result = eval_expr(guard.expression, ctx);
  if (!result.is_boolean()) {
    throw Error(ErrorCode::TypeError, "'when' condition " + guard.expression.source() +
                                          " produced " + result.dump() + ", not a boolean");
  }
  return result.get<bool>() ? GuardDecision::Proceed : GuardDecision::Skip;
}

GuardDecision apply_guards(const TaskNode& node, const DataflowGraph& graph) {
  for (const auto& guard : node.guards) {
    if (guard.own && !node.deferred_scatter.empty()) continue;  // evaluated per element
    EvalContext ctx;
    for (const auto& [id, binding] : guard.inputs) {
      auto value = graph.resolve(binding);
      if (!value) throw Error(ErrorCode::PlanError, "guard input '" + id + "' of '" + node.id + "' is not available");
      ctx.inputs[id] = std::move(*value);
    }
    if (apply_guard(guard, ctx) == GuardDecision::Skip) return GuardDecision::Skip;
  }
  return GuardDecision::Proceed;
}

ResourceRequest resolve_resources(const TaskNode& node, const std::map<std::string, Json>& inputs,
                                  const ResourceRequest& capacity) {
  ResourceRequest request;
  bool required = false;
  const Clause* clause = node.find_clause(ClauseKind::Resource, &required);
  if (!clause) return request;
  EvalContext ctx;
  ctx.inputs = inputs;
  ctx.runtime.cores = capacity.cores;
  ctx.runtime.ram = capacity.ram_mib;
  auto read = [&](const char* key) -> std::optional<long long> {
    if (!clause->payload.contains(key)) return std::nullopt;
    Json v = clause->payload[key];
    if (v.is_string()) v = interpolate(v.get<std::string>(), ctx);
    if (v.is_number_integer()) return v.get<long long>();
    if (v.is_number_float()) return static_cast<long long>(std::ceil(v.get<double>()));
    throw Error(ErrorCode::TypeError, std::string(key) + " of '" + node.id + "' evaluated to " + v.dump());
  };
  if (auto v = read("coresMin")) request.cores = *v;
  if (auto v = read("ramMin")) request.ram_mib = *v;
  if (auto v = read("diskMin")) request.disk_mib = *v;
  request.wall_time_max = read("wallTimeMax");
  if (!required) {
    request.cores = std::min(request.cores, capacity.cores);
    request.ram_mib = std::min(request.ram_mib, capacity.ram_mib);
    request.disk_mib = std::min(request.disk_mib, capacity.disk_mib);
  }
  return request;
}

}  // namespace miniwfl
