#include "miniwfl/validator.hpp"

#include <algorithm>
#include <functional>
#include <map>

#include "miniwfl/error.hpp"
#include "miniwfl/expression.hpp"

namespace miniwfl {

Json Diagnostic::to_json() const {
  return {{"severity", severity == Severity::Error ? "error" : "warning"},
          {"code", code},
          {"location", location},
          {"message", message}};
}

SupportMatrix SupportMatrix::defaults(long long cores, long long ram_mib, long long disk_mib) {
  SupportMatrix m;
  m.supported_requirement_kinds = {ClauseKind::Container, ClauseKind::Resource, ClauseKind::EnvVars,
                                   ClauseKind::InitialWorkDir, ClauseKind::WorkReuse};
  m.supported_versions = {"v1.0", "v1.1", "v1.2"};
  m.max_cores = cores;
  m.max_ram_mib = ram_mib;
  m.max_disk_mib = disk_mib;
  return m;
}

bool has_errors(const std::vector<Diagnostic>& diagnostics) {
  return std::any_of(diagnostics.begin(), diagnostics.end(),
                     [](const Diagnostic& d) { return d.severity == Severity::Error; });
}

std::pair<std::string, std::string> split_source(const std::string& source) {
  auto slash = source.find('/');
  if (slash == std::string::npos) return {"", source};
  return {source.substr(0, slash), source.substr(slash + 1)};
}

namespace {

using Dependencies = std::map<std::string, std::set<std::string>>;  // consumer -> producers

Dependencies step_dependencies(const WorkflowDescription& wf) {
  Dependencies deps;
  for (const auto& step : wf.steps) {
    auto& producers = deps[step.id];
    for (const auto& in : step.in) {
      if (!in.source) continue;
      auto [producer, output] = split_source(*in.source);
      if (!producer.empty() && wf.find_step(producer)) producers.insert(producer);
    }
  }
  return deps;
}

class Checker {
 public:
  explicit Checker(const SupportMatrix& matrix) : matrix_(matrix) {}

  std::vector<Diagnostic> take() { return std::move(out_); }

  void document(const Document& doc, const std::string& loc) {
    if (!matrix_.supported_versions.contains(doc.version)) {
      error("UnsupportedVersion", loc, "cwlVersion " + doc.version + " is not supported");
    }
    if (doc.is_tool()) {
      tool(doc.tool(), loc);
    } else {
      workflow(doc.workflow(), loc);
    }
  }

 private:
  void error(std::string code, std::string loc, std::string message) {
    out_.push_back({Severity::Error, std::move(code), std::move(loc), std::move(message)});
  }
  void warning(std::string code, std::string loc, std::string message) {
    out_.push_back({Severity::Warning, std::move(code), std::move(loc), std::move(message)});
  }

  void clauses(const std::vector<Clause>& list, bool required, const std::string& loc) {
    const std::string where = loc + (required ? "/requirements" : "/hints");
    for (const auto& c : list) {
      if (!matrix_.supported_requirement_kinds.contains(c.kind)) {
        if (required) {
          error("UnsupportedRequirement", where + "/" + c.class_name,
                "requirement " + c.class_name + " cannot be satisfied by this engine");
        } else {
          warning("UnsupportedHint", where + "/" + c.class_name,
                  "hint " + c.class_name + " is not supported and will be ignored");
        }
        continue;
      }
      if (c.kind == ClauseKind::Resource) resource(c, required, where);
    }
  }

  void resource(const Clause& c, bool required, const std::string& where) {
    struct Limit {
      const char* key;
      long long capacity;
    };
    for (const Limit& limit : {Limit{"coresMin", matrix_.max_cores}, Limit{"ramMin", matrix_.max_ram_mib},
                               Limit{"diskMin", matrix_.max_disk_mib}}) {
      const Json& v = c.payload.value(limit.key, Json());
      if (!v.is_number_integer()) continue;
      const long long wanted = v.get<long long>();
      if (wanted <= limit.capacity) continue;
      const std::string msg = std::string(limit.key) + " " + std::to_string(wanted) +
                              " exceeds machine capacity " + std::to_string(limit.capacity);
      if (required) {
        error("ResourceUnsatisfiable", where + "/" + c.class_name, msg);
      } else {
        warning("ResourceHintClamped", where + "/" + c.class_name, msg + "; clamped");
      }
    }
  }

  void expression_text(const std::string& text, const std::set<std::string>& known_inputs,
                       const std::string& loc) {
    try {
      for (const auto& id : check_interpolation(text)) {
        if (!known_inputs.contains(id)) {
          error("DanglingReference", loc, "expression references unknown input '" + id + "'");
        }
      }
    } catch (const ExprSyntaxError& e) {
      error("InvalidExpression", loc, e.what());
    }
  }

  void tool(const ToolDescription& tool, const std::string& loc) {
    std::set<std::string> ids;
    for (const auto& p : tool.inputs) {
      if (!ids.insert(p.id).second) error("DuplicateId", loc + "/inputs/" + p.id, "duplicate input id");
    }
    std::set<std::string> out_ids;
    for (const auto& p : tool.outputs) {
      if (!out_ids.insert(p.id).second) error("DuplicateId", loc + "/outputs/" + p.id, "duplicate output id");
      if (p.glob) expression_text(*p.glob, ids, loc + "/outputs/" + p.id);
    }
    for (std::size_t i = 0; i < tool.arguments.size(); ++i) {
      expression_text(tool.arguments[i].value, ids, loc + "/arguments/" + std::to_string(i));
    }
    for (const auto& [field, value] : {std::pair{"stdin", tool.stdin_path}, std::pair{"stdout", tool.stdout_name},
                                       std::pair{"stderr", tool.stderr_name}}) {
      if (value) expression_text(*value, ids, loc + "/" + field);
    }
    for (const auto* list : {&tool.requirements, &tool.hints}) {
      for (const auto& c : *list) clause_expressions(c, ids, loc);
    }
    clauses(tool.requirements, true, loc);
    clauses(tool.hints, false, loc);
  }

  void clause_expressions(const Clause& c, const std::set<std::string>& ids, const std::string& loc) {
    const std::string where = loc + "/" + c.class_name;
    switch (c.kind) {
      case ClauseKind::Resource:
        for (const auto& [key, v] : c.payload.items()) {
          if (v.is_string()) expression_text(v.get<std::string>(), ids, where + "/" + key);
        }
        break;
      case ClauseKind::EnvVars:
        for (const auto& [key, v] : c.payload["envDef"].items()) {
          expression_text(v.get<std::string>(), ids, where + "/" + key);
        }
        break;
      case ClauseKind::InitialWorkDir:
        for (const auto& entry : c.payload["listing"]) {
          expression_text(entry["entry"].get<std::string>(), ids, where);
          if (entry.contains("entryname")) expression_text(entry["entryname"].get<std::string>(), ids, where);
        }
        break;
      default:
        break;
    }
  }

  struct SourceInfo {
    DataType type;
    std::optional<std::string> format;
  };

  // Static type of a source reference, or nullopt (with a diagnostic) when it
  // does not resolve.
  std::optional<SourceInfo> source_info(const WorkflowDescription& wf, const std::string& source,
                                        const std::string& loc) {
    auto [producer, output] = split_source(source);
    if (producer.empty()) {
      const InputParameter* in = wf.find_input(output);
      if (!in) {
        error("DanglingReference", loc, "unknown workflow input '" + output + "'");
        return std::nullopt;
      }
      return SourceInfo{in->type, in->format};
    }
    const Step* step = wf.find_step(producer);
    if (!step) {
      error("DanglingReference", loc, "unknown step '" + producer + "'");
      return std::nullopt;
    }
    if (std::find(step->out.begin(), step->out.end(), output) == step->out.end()) {
      error("DanglingReference", loc, "step '" + producer + "' does not expose output '" + output + "'");
      return std::nullopt;
    }
    if (!step->run.resolved()) return std::nullopt;
    const Document& run = *step->run.document;
    const OutputParameter* param = run.is_tool() ? run.tool().find_output(output)
                                                 : nullptr;
    if (run.is_workflow()) {
      const auto& outs = run.workflow().outputs;
      auto it = std::find_if(outs.begin(), outs.end(), [&](const auto& o) { return o.id == output; });
      if (it != outs.end()) param = &*it;
    }
    if (!param) return std::nullopt;  // reported on the producing step
    SourceInfo info{param->type, param->format};
    if (!step->scatter.empty()) info.type = info.type.as_array();
    if (step->when) info.type = info.type.as_optional();
    return info;
  }

  void workflow(const WorkflowDescription& wf, const std::string& loc) {
    std::set<std::string> ids;
    for (const auto& p : wf.inputs) {
      if (!ids.insert(p.id).second) error("DuplicateId", loc + "/inputs/" + p.id, "duplicate input id");
    }
    std::set<std::string> seen;
    for (const auto& p : wf.outputs) {
      if (!seen.insert(p.id).second) error("DuplicateId", loc + "/outputs/" + p.id, "duplicate output id");
    }
    seen.clear();
    for (const auto& s : wf.steps) {
      if (!seen.insert(s.id).second) error("DuplicateId", loc + "/steps/" + s.id, "duplicate step id");
    }

    clauses(wf.requirements, true, loc);
    clauses(wf.hints, false, loc);
    for (const auto& step : wf.steps) this->step(wf, step, loc + "/steps/" + step.id);

    for (const auto& out : wf.outputs) {
      const std::string where = loc + "/outputs/" + out.id;
      auto info = source_info(wf, *out.output_source, where);
      if (!info) continue;
      if (!assignable(info->type, out.type)) {
        error("TypeMismatch", where,
              "source " + *out.output_source + " of type " + to_string(info->type) +
                  " is not assignable to " + to_string(out.type));
      }
    }
    for (auto& d : check_acyclic(wf)) {
      d.location = loc + d.location;
      out_.push_back(std::move(d));
    }
  }

  void step(const WorkflowDescription& wf, const Step& step, const std::string& loc) {
    std::set<std::string> in_ids;
    for (const auto& in : step.in) {
      if (!in_ids.insert(in.id).second) error("DuplicateId", loc + "/in/" + in.id, "duplicate step input");
    }
    std::set<std::string> out_ids;
    for (const auto& o : step.out) {
      if (!out_ids.insert(o).second) error("DuplicateId", loc + "/out/" + o, "duplicate step output");
    }
    for (const auto& id : step.scatter) {
      if (!in_ids.contains(id)) {
        error("InvalidScatter", loc + "/scatter", "scatter input '" + id + "' is not a step input");
      }
    }
    if (step.when) {
      std::string text = *step.when;
      try {
        for (const auto& id : parse_expr(text).referenced_inputs()) {
          if (!in_ids.contains(id)) {
            error("DanglingReference", loc + "/when", "'when' references '" + id + "' which is not a step input");
          }
        }
      } catch (const ExprSyntaxError& e) {
        error("InvalidExpression", loc + "/when", e.what());
      }
    }
    clauses(step.requirements, true, loc);
    clauses(step.hints, false, loc);

    if (!step.run.resolved()) {
      error("DanglingReference", loc + "/run", "run reference '" + step.run.path + "' is unresolved");
      return;
    }
    const Document& run = *step.run.document;
    document(run, loc + "/run");
    if (run.is_workflow() && !step.scatter.empty()) {
      error("UnsupportedFeature", loc + "/scatter", "scatter over a sub-workflow step is not supported");
    }

    const auto& params = run.is_tool() ? run.tool().inputs : run.workflow().inputs;
    for (const auto& o : step.out) {
      bool found = false;
      if (run.is_tool()) {
        found = run.tool().find_output(o) != nullptr;
      } else {
        const auto& outs = run.workflow().outputs;
        found = std::any_of(outs.begin(), outs.end(), [&](const auto& p) { return p.id == o; });
      }
      if (!found) error("DanglingReference", loc + "/out/" + o, "run target has no output '" + o + "'");
    }

    for (const auto& param : params) {
      const StepInput* in = step.find_input(param.id);
      const bool has_default = param.default_value || (in && in->default_value);
      if (!in || (!in->source && !in->default_value)) {
        if (!param.type.optional && !has_default) {
          error("UnboundInput", loc + "/in/" + param.id, "required input '" + param.id + "' is not connected");
        }
        continue;
      }
      if (!in->source) continue;
      const std::string where = loc + "/in/" + param.id;
      auto info = source_info(wf, *in->source, where);
      if (!info) continue;
      DataType source_type = info->type;
      const bool scattered = std::find(step.scatter.begin(), step.scatter.end(), param.id) != step.scatter.end();
      if (scattered) {
        if (!source_type.array || source_type.optional) {
          error("TypeMismatch", where,
                "scattered input needs an array source, got " + to_string(source_type));
          continue;
        }
        source_type = source_type.element();
      }
      DataType sink = param.type;
      if (has_default) sink = sink.as_optional();
      if (!assignable(source_type, sink)) {
        error("TypeMismatch", where,
              "source " + *in->source + " of type " + to_string(source_type) +
                  " is not assignable to " + to_string(param.type));
      }
      if (info->format && param.format && *info->format != *param.format) {
        error("FormatMismatch", where, "format " + *info->format + " does not match " + *param.format);
      }
    }
    for (const auto& in : step.in) {
      if (in.source) {
        bool declared = std::any_of(params.begin(), params.end(), [&](const auto& p) { return p.id == in.id; });
        if (!declared) source_info(wf, *in.source, loc + "/in/" + in.id);
      }
    }
  }

  const SupportMatrix& matrix_;
  std::vector<Diagnostic> out_;
};

}  // namespace

std::vector<Diagnostic> validate(const Document& doc, const SupportMatrix& matrix) {
  Checker checker(matrix);
  checker.document(doc, "");
  auto out = checker.take();
  for (auto& d : out) {
    if (d.location.empty()) d.location = "/";
  }
  return out;
}

std::vector<Diagnostic> check_acyclic(const WorkflowDescription& wf) {
  // producer -> consumers, in declaration order for reproducible reports
  std::map<std::string, std::vector<std::string>> consumers;
  for (const auto& [consumer, producers] : step_dependencies(wf)) {
    for (const auto& p : producers) consumers[p].push_back(consumer);
  }
  enum Color { White, Grey, Black };
  std::map<std::string, Color> color;
  std::vector<std::string> path;
  std::vector<std::string> cycle;

  std::function<bool(const std::string&)> visit = [&](const std::string& id) {
    color[id] = Grey;
    path.push_back(id);
    for (const auto& next : consumers[id]) {
      if (color[next] == Grey) {
        auto start = std::find(path.begin(), path.end(), next);
        cycle.assign(start, path.end());
        return true;
      }
      if (color[next] == White && visit(next)) return true;
    }
    path.pop_back();
    color[id] = Black;
    return false;
  };

  for (const auto& step : wf.steps) {
    if (color[step.id] == White && visit(step.id)) {
      std::string names;
      for (const auto& id : cycle) names += (names.empty() ? "" : " -> ") + id;
      Diagnostic d{Severity::Error, "CycleDetected", "/steps", "steps form a cycle: " + names};
      return {d};
    }
  }
  return {};
}

std::vector<std::set<std::string>> layering(const WorkflowDescription& wf) {
  auto cycles = check_acyclic(wf);
  if (!cycles.empty()) throw Error(ErrorCode::CycleDetected, cycles.front().message);
  const Dependencies deps = step_dependencies(wf);
  std::map<std::string, std::size_t> depth;
  std::function<std::size_t(const std::string&)> layer_of = [&](const std::string& id) -> std::size_t {
    if (auto it = depth.find(id); it != depth.end()) return it->second;
    std::size_t d = 0;
    for (const auto& p : deps.at(id)) d = std::max(d, layer_of(p) + 1);
    depth[id] = d;
    return d;
  };
  std::vector<std::set<std::string>> layers;
  for (const auto& step : wf.steps) {
    std::size_t d = layer_of(step.id);
    if (layers.size() <= d) layers.resize(d + 1);
    layers[d].insert(step.id);
  }
  return layers;
}

}  // namespace miniwfl
