#include "miniwfl/document.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

#include "miniwfl/digest.hpp"
#include "miniwfl/error.hpp"

namespace miniwfl {

namespace fs = std::filesystem;

const char* to_string(ClauseKind kind) {
  switch (kind) {
    case ClauseKind::Container: return "Container";
    case ClauseKind::Resource: return "Resource";
    case ClauseKind::EnvVars: return "EnvVars";
    case ClauseKind::InitialWorkDir: return "InitialWorkDir";
    case ClauseKind::WorkReuse: return "WorkReuse";
    case ClauseKind::Extension: return "Extension";
  }
  return "Extension";
}

bool operator==(const RunReference& a, const RunReference& b) {
  if (a.document && b.document) {
    return *a.document == *b.document;
  }
  return a.path == b.path && !a.document && !b.document;
}

bool operator==(const Document& a, const Document& b) {
  return a.version == b.version && a.body == b.body && a.extensions == b.extensions &&
         a.namespaces == b.namespaces && a.metadata == b.metadata;
}

const InputParameter* ToolDescription::find_input(std::string_view id) const {
  auto it = std::find_if(inputs.begin(), inputs.end(), [&](const auto& p) { return p.id == id; });
  return it == inputs.end() ? nullptr : &*it;
}

const OutputParameter* ToolDescription::find_output(std::string_view id) const {
  auto it = std::find_if(outputs.begin(), outputs.end(), [&](const auto& p) { return p.id == id; });
  return it == outputs.end() ? nullptr : &*it;
}

const StepInput* Step::find_input(std::string_view id) const {
  auto it = std::find_if(in.begin(), in.end(), [&](const auto& p) { return p.id == id; });
  return it == in.end() ? nullptr : &*it;
}

const InputParameter* WorkflowDescription::find_input(std::string_view id) const {
  auto it = std::find_if(inputs.begin(), inputs.end(), [&](const auto& p) { return p.id == id; });
  return it == inputs.end() ? nullptr : &*it;
}

const Step* WorkflowDescription::find_step(std::string_view id) const {
  auto it = std::find_if(steps.begin(), steps.end(), [&](const auto& s) { return s.id == id; });
  return it == steps.end() ? nullptr : &*it;
}

std::string Version::str() const {
  return "v" + std::to_string(major) + "." + std::to_string(minor);
}

std::optional<Version> parse_version(std::string_view text) {
  static const std::regex kPattern(R"(v(\d{1,4})\.(\d{1,4}))");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_match(text.begin(), text.end(), m, kPattern)) {
    return std::nullopt;
  }
  return Version{std::stoi(m[1].str()), std::stoi(m[2].str())};
}

// ---------------------------------------------------------------------------
// YAML/JSON text to Json
// ---------------------------------------------------------------------------

namespace {

Json scalar_to_json(const YAML::Node& node) {
  const std::string& text = node.Scalar();
  if (node.Tag() == "!") {
    return text;  // quoted
  }
  static const std::regex kInt(R"([-+]?[0-9]+)");
  static const std::regex kFloat(R"([-+]?(\.[0-9]+|[0-9]+(\.[0-9]*)?)([eE][-+]?[0-9]+)?)");
  if (text.empty() || text == "~" || text == "null" || text == "Null" || text == "NULL") {
    return nullptr;
  }
  if (text == "true" || text == "True" || text == "TRUE") return true;
  if (text == "false" || text == "False" || text == "FALSE") return false;
  if (std::regex_match(text, kInt)) {
    try {
      return std::stoll(text);
    } catch (const std::out_of_range&) {
      return text;
    }
  }
  if (std::regex_match(text, kFloat)) {
    return std::stod(text);
  }
  return text;
}

Json node_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Scalar:
      return scalar_to_json(node);
    case YAML::NodeType::Sequence: {
      Json out = Json::array();
      for (const auto& item : node) out.push_back(node_to_json(item));
      return out;
    }
    case YAML::NodeType::Map: {
      Json out = Json::object();
      for (const auto& kv : node) {
        out[kv.first.as<std::string>()] = node_to_json(kv.second);
      }
      return out;
    }
  }
  return nullptr;
}

}  // namespace

Json load_structured_text(std::string_view text) {
  try {
    YAML::Node root = YAML::Load(std::string(text));
    return node_to_json(root);
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::SyntaxError, std::string("malformed document: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

namespace {

bool is_identifier(std::string_view s) {
  static const std::regex kIdent(R"([A-Za-z_][A-Za-z0-9_]*)");
  return std::regex_match(s.begin(), s.end(), kIdent);
}

bool is_namespaced(std::string_view key) {
  auto colon = key.find(':');
  return colon != std::string_view::npos && colon > 0 && colon + 1 < key.size();
}

[[noreturn]] void schema_error(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::SchemaError, where + ": " + what);
}

// Rejects keys outside `known` unless they carry a namespace prefix.
void check_keys(const Json& obj, std::initializer_list<std::string_view> known,
                const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (std::find(known.begin(), known.end(), key) != known.end()) continue;
    if (is_namespaced(key)) continue;
    schema_error(where, "unknown key '" + key + "'");
  }
}

std::string strip_id(std::string id) {
  auto hash = id.rfind('#');
  if (hash != std::string::npos) id = id.substr(hash + 1);
  return id;
}

std::string require_identifier(const Json& value, const std::string& where) {
  if (!value.is_string()) schema_error(where, "identifier must be a string");
  std::string id = strip_id(value.get<std::string>());
  if (!is_identifier(id)) schema_error(where, "invalid identifier '" + id + "'");
  return id;
}

std::string require_string(const Json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj[key].is_string()) {
    schema_error(where, std::string("'") + key + "' must be a string");
  }
  return obj[key].get<std::string>();
}

std::optional<std::string> optional_string(const Json& obj, const char* key,
                                           const std::string& where) {
  if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
  if (obj[key].is_string()) return obj[key].get<std::string>();
  if (obj[key].is_array()) {
    std::string joined;
    for (const auto& part : obj[key]) {
      if (!part.is_string()) schema_error(where, std::string("'") + key + "' must be a string");
      if (!joined.empty()) joined += "\n";
      joined += part.get<std::string>();
    }
    return joined;
  }
  schema_error(where, std::string("'") + key + "' must be a string");
}

// Map form {id: spec} or list form [{id: ..., ...}] to list form. A map value
// that is not an object is shorthand for `shorthand_key: value`.
Json to_list_form(const Json& value, const char* shorthand_key, const std::string& where) {
  if (value.is_null()) return Json::array();
  if (value.is_array()) {
    for (const auto& item : value) {
      if (!item.is_object() || !item.contains("id")) {
        schema_error(where, "list entries must be objects with an 'id'");
      }
    }
    return value;
  }
  if (!value.is_object()) schema_error(where, "expected a list or a map");
  Json out = Json::array();
  for (const auto& [key, item] : value.items()) {
    Json entry = item.is_object() ? item : Json{{shorthand_key, item}};
    if (entry.contains("id") && strip_id(entry["id"].get<std::string>()) != key) {
      schema_error(where, "conflicting ids for '" + key + "'");
    }
    entry["id"] = key;
    out.push_back(std::move(entry));
  }
  return out;
}

DataType parse_type_value(const Json& value, const std::string& where) {
  if (value.is_string()) {
    return parse_type(value.get<std::string>());
  }
  if (value.is_array()) {
    // ["null", X] optional union.
    std::vector<Json> members;
    bool has_null = false;
    for (const auto& m : value) {
      if (m.is_string() && m.get<std::string>() == "null") {
        has_null = true;
      } else {
        members.push_back(m);
      }
    }
    if (members.size() != 1 || !has_null) {
      throw Error(ErrorCode::TypeSyntaxError,
                  where + ": only [\"null\", T] unions are supported");
    }
    DataType inner = parse_type_value(members.front(), where);
    if (inner.optional) {
      throw Error(ErrorCode::TypeSyntaxError, where + ": nested optional type");
    }
    return inner.as_optional();
  }
  if (value.is_object() && value.value("type", "") == "array" && value.contains("items")) {
    DataType items = parse_type_value(value["items"], where);
    if (items.array || items.optional) {
      throw Error(ErrorCode::TypeSyntaxError, where + ": nested array types are not supported");
    }
    return items.as_array();
  }
  throw Error(ErrorCode::TypeSyntaxError, where + ": unparseable type " + value.dump());
}

Json type_to_json(DataType type) { return to_string(type); }

bool is_expression_string(const Json& v) {
  return v.is_string() && v.get<std::string>().find("$(") != std::string::npos;
}

Json normalize_clause_payload(ClauseKind kind, const Json& raw, const std::string& where) {
  Json payload = raw;
  payload.erase("class");
  switch (kind) {
    case ClauseKind::Container: {
      check_keys(payload, {"dockerPull"}, where);
      require_string(payload, "dockerPull", where);
      break;
    }
    case ClauseKind::Resource: {
      check_keys(payload, {"coresMin", "ramMin", "diskMin", "wallTimeMax"}, where);
      for (const char* key : {"coresMin", "ramMin", "diskMin", "wallTimeMax"}) {
        if (!payload.contains(key)) continue;
        const Json& v = payload[key];
        if (v.is_number_integer() && v.get<long long>() >= 0) continue;
        if (is_expression_string(v)) continue;
        schema_error(where, std::string("'") + key + "' must be a nonnegative integer or expression");
      }
      break;
    }
    case ClauseKind::EnvVars: {
      check_keys(payload, {"envDef"}, where);
      Json defs = Json::object();
      const Json& src = payload.value("envDef", Json::object());
      if (src.is_object()) {
        for (const auto& [name, value] : src.items()) {
          if (!value.is_string()) schema_error(where, "envDef values must be strings");
          defs[name] = value;
        }
      } else if (src.is_array()) {
        for (const auto& item : src) {
          defs[require_string(item, "envName", where)] = require_string(item, "envValue", where);
        }
      } else {
        schema_error(where, "envDef must be a map or list");
      }
      payload = Json{{"envDef", defs}};
      break;
    }
    case ClauseKind::InitialWorkDir: {
      check_keys(payload, {"listing"}, where);
      Json listing = Json::array();
      if (!payload.contains("listing") || !payload["listing"].is_array()) {
        schema_error(where, "'listing' must be a list");
      }
      for (const auto& item : payload["listing"]) {
        if (item.is_string()) {
          listing.push_back(Json{{"entry", item}});
        } else if (item.is_object()) {
          check_keys(item, {"entryname", "entry"}, where);
          Json entry = {{"entry", require_string(item, "entry", where)}};
          if (item.contains("entryname")) entry["entryname"] = require_string(item, "entryname", where);
          listing.push_back(std::move(entry));
        } else {
          schema_error(where, "listing entries must be strings or objects");
        }
      }
      payload = Json{{"listing", listing}};
      break;
    }
    case ClauseKind::WorkReuse: {
      check_keys(payload, {"enableReuse"}, where);
      bool enabled = true;
      if (payload.contains("enableReuse")) {
        if (!payload["enableReuse"].is_boolean()) schema_error(where, "'enableReuse' must be boolean");
        enabled = payload["enableReuse"].get<bool>();
      }
      payload = Json{{"enableReuse", enabled}};
      break;
    }
    case ClauseKind::Extension:
      break;
  }
  return payload;
}

ClauseKind classify_clause(const std::string& class_name, Version version) {
  if (class_name == "DockerRequirement") return ClauseKind::Container;
  if (class_name == "ResourceRequirement") return ClauseKind::Resource;
  if (class_name == "EnvVarRequirement") return ClauseKind::EnvVars;
  if (class_name == "InitialWorkDirRequirement") return ClauseKind::InitialWorkDir;
  if (class_name == "WorkReuse" && version >= Version{1, 1}) return ClauseKind::WorkReuse;
  return ClauseKind::Extension;
}

std::vector<Clause> parse_clauses(const Json& value, Version version, const std::string& where) {
  std::vector<Clause> out;
  if (value.is_null()) return out;
  Json list = Json::array();
  if (value.is_object()) {
    for (const auto& [name, payload] : value.items()) {
      Json entry = payload.is_object() ? payload : Json::object();
      entry["class"] = name;
      list.push_back(std::move(entry));
    }
  } else if (value.is_array()) {
    list = value;
  } else {
    schema_error(where, "expected a list or a map of clauses");
  }
  for (const auto& raw : list) {
    if (!raw.is_object()) schema_error(where, "clause must be an object");
    Clause clause;
    clause.class_name = require_string(raw, "class", where);
    clause.kind = classify_clause(clause.class_name, version);
    clause.payload = normalize_clause_payload(clause.kind, raw, where + "/" + clause.class_name);
    out.push_back(std::move(clause));
  }
  return out;
}

std::optional<int> optional_int(const Json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
  if (!obj[key].is_number_integer()) schema_error(where, std::string("'") + key + "' must be an integer");
  return obj[key].get<int>();
}

InputParameter parse_input(const Json& raw, bool tool_level, const std::string& where_parent) {
  InputParameter p;
  p.id = require_identifier(raw.at("id"), where_parent);
  const std::string where = where_parent + "/" + p.id;
  check_keys(raw, {"id", "type", "inputBinding", "default", "format", "streamable", "label", "doc"},
             where);
  if (!raw.contains("type")) schema_error(where, "input has no type");
  p.type = parse_type_value(raw["type"], where);
  if (raw.contains("inputBinding") && !raw["inputBinding"].is_null()) {
    if (!tool_level) schema_error(where, "inputBinding is only valid on tool inputs");
    const Json& binding = raw["inputBinding"];
    if (!binding.is_object()) schema_error(where, "inputBinding must be an object");
    check_keys(binding, {"position", "prefix"}, where);
    p.position = optional_int(binding, "position", where);
    p.prefix = optional_string(binding, "prefix", where);
    if (!p.position) p.position = 0;
  }
  if (raw.contains("default")) p.default_value = raw["default"];
  p.format = optional_string(raw, "format", where);
  if (raw.contains("streamable")) {
    if (!raw["streamable"].is_boolean()) schema_error(where, "'streamable' must be boolean");
    p.streamable = raw["streamable"].get<bool>();
    if (p.streamable && p.type.base != BaseType::File) {
      schema_error(where, "streamable is only valid on File inputs");
    }
  }
  return p;
}

OutputParameter parse_tool_output(const Json& raw, const std::string& where_parent) {
  OutputParameter p;
  p.id = require_identifier(raw.at("id"), where_parent);
  const std::string where = where_parent + "/" + p.id;
  check_keys(raw, {"id", "type", "outputBinding", "format", "streamable", "label", "doc"}, where);
  if (!raw.contains("type")) schema_error(where, "output has no type");
  const Json& type = raw["type"];
  if (type == "stdout" || type == "stderr") {
    p.type = DataType{BaseType::File};
    p.capture = type == "stdout" ? Capture::Stdout : Capture::Stderr;
  } else {
    p.type = parse_type_value(type, where);
  }
  if (raw.contains("outputBinding") && !raw["outputBinding"].is_null()) {
    const Json& binding = raw["outputBinding"];
    check_keys(binding, {"glob"}, where);
    p.glob = optional_string(binding, "glob", where);
  }
  if (p.capture != Capture::None && p.glob) {
    schema_error(where, "a captured stream output cannot also declare a glob");
  }
  if (p.capture == Capture::None && !p.glob) {
    schema_error(where, "tool output needs a glob or a stdout/stderr capture");
  }
  p.format = optional_string(raw, "format", where);
  if (raw.contains("streamable")) p.streamable = raw["streamable"].get<bool>();
  return p;
}

OutputParameter parse_workflow_output(const Json& raw, const std::string& where_parent) {
  OutputParameter p;
  p.id = require_identifier(raw.at("id"), where_parent);
  const std::string where = where_parent + "/" + p.id;
  check_keys(raw, {"id", "type", "outputSource", "format", "label", "doc"}, where);
  if (!raw.contains("type")) schema_error(where, "output has no type");
  p.type = parse_type_value(raw["type"], where);
  Json source = raw.value("outputSource", Json());
  if (source.is_array() && source.size() == 1) source = source[0];
  if (!source.is_string()) schema_error(where, "workflow output needs exactly one outputSource");
  p.output_source = strip_id(source.get<std::string>());
  p.format = optional_string(raw, "format", where);
  return p;
}

std::vector<std::string> string_list(const Json& value, const std::string& where,
                                     const char* what) {
  std::vector<std::string> out;
  if (value.is_null()) return out;
  if (value.is_string()) {
    out.push_back(value.get<std::string>());
    return out;
  }
  if (!value.is_array()) schema_error(where, std::string(what) + " must be a string or list");
  for (const auto& item : value) {
    if (!item.is_string()) schema_error(where, std::string(what) + " entries must be strings");
    out.push_back(item.get<std::string>());
  }
  return out;
}

ToolDescription parse_tool(const Json& raw, Version version, const std::string& where) {
  check_keys(raw, {"class", "cwlVersion", "id", "label", "doc", "author", "$namespaces", "$schemas",
                   "baseCommand", "arguments", "inputs", "outputs", "requirements", "hints",
                   "stdin", "stdout", "stderr", "successCodes"},
             where);
  ToolDescription tool;
  tool.base_command = string_list(raw.value("baseCommand", Json()), where, "baseCommand");
  if (raw.contains("arguments")) {
    if (!raw["arguments"].is_array()) schema_error(where, "arguments must be a list");
    for (const auto& item : raw["arguments"]) {
      Argument arg;
      if (item.is_string()) {
        arg.value = item.get<std::string>();
        arg.position = 0;
      } else if (item.is_object()) {
        check_keys(item, {"position", "prefix", "valueFrom"}, where + "/arguments");
        arg.position = optional_int(item, "position", where).value_or(0);
        arg.prefix = optional_string(item, "prefix", where);
        arg.value = require_string(item, "valueFrom", where + "/arguments");
      } else {
        schema_error(where, "arguments entries must be strings or objects");
      }
      tool.arguments.push_back(std::move(arg));
    }
  }
  for (const auto& item : to_list_form(raw.value("inputs", Json()), "type", where + "/inputs")) {
    tool.inputs.push_back(parse_input(item, true, where + "/inputs"));
  }
  for (const auto& item : to_list_form(raw.value("outputs", Json()), "type", where + "/outputs")) {
    tool.outputs.push_back(parse_tool_output(item, where + "/outputs"));
  }
  tool.requirements = parse_clauses(raw.value("requirements", Json()), version, where + "/requirements");
  tool.hints = parse_clauses(raw.value("hints", Json()), version, where + "/hints");
  tool.stdin_path = optional_string(raw, "stdin", where);
  tool.stdout_name = optional_string(raw, "stdout", where);
  tool.stderr_name = optional_string(raw, "stderr", where);
  if (raw.contains("successCodes")) {
    if (!raw["successCodes"].is_array()) schema_error(where, "successCodes must be a list");
    tool.success_codes.clear();
    for (const auto& code : raw["successCodes"]) {
      if (!code.is_number_integer()) schema_error(where, "successCodes entries must be integers");
      tool.success_codes.insert(code.get<int>());
    }
  }
  return tool;
}

Step parse_step(const Json& raw, Version version, const std::string& base_uri,
                const std::string& where_parent) {
  Step step;
  step.id = require_identifier(raw.at("id"), where_parent);
  const std::string where = where_parent + "/" + step.id;
  check_keys(raw, {"id", "run", "in", "out", "scatter", "scatterMethod", "when", "requirements",
                   "hints", "label", "doc"},
             where);
  if (!raw.contains("run")) schema_error(where, "step has no 'run'");
  const Json& run = raw["run"];
  if (run.is_string()) {
    step.run.path = run.get<std::string>();
  } else if (run.is_object()) {
    step.run.document = std::make_shared<const Document>(
        document_from_json(run, base_uri, version.str()));
  } else {
    schema_error(where, "'run' must be a path or an inline document");
  }

  for (const auto& item : to_list_form(raw.value("in", Json()), "source", where + "/in")) {
    StepInput input;
    input.id = require_identifier(item.at("id"), where + "/in");
    check_keys(item, {"id", "source", "default"}, where + "/in/" + input.id);
    if (item.contains("source") && !item["source"].is_null()) {
      Json source = item["source"];
      if (source.is_array() && source.size() == 1) source = source[0];
      if (!source.is_string()) schema_error(where + "/in/" + input.id, "source must be a single reference");
      input.source = strip_id(source.get<std::string>());
    }
    if (item.contains("default")) input.default_value = item["default"];
    step.in.push_back(std::move(input));
  }
  if (raw.contains("out")) {
    if (!raw["out"].is_array()) schema_error(where, "'out' must be a list");
    for (const auto& item : raw["out"]) {
      if (item.is_string()) {
        step.out.push_back(require_identifier(item, where + "/out"));
      } else if (item.is_object() && item.contains("id")) {
        step.out.push_back(require_identifier(item["id"], where + "/out"));
      } else {
        schema_error(where, "'out' entries must be ids");
      }
    }
  }

  for (auto& id : string_list(raw.value("scatter", Json()), where, "scatter")) {
    step.scatter.push_back(strip_id(id));
  }
  if (raw.contains("scatterMethod")) {
    if (raw["scatterMethod"] != "dotproduct") {
      schema_error(where, "only scatterMethod 'dotproduct' is supported");
    }
    if (step.scatter.empty()) schema_error(where, "scatterMethod without scatter");
  }
  if (raw.contains("when") && !raw["when"].is_null()) {
    if (version < Version{1, 2}) {
      schema_error(where, "'when' requires cwlVersion v1.2 or later (document is " + version.str() + ")");
    }
    if (!raw["when"].is_string()) schema_error(where, "'when' must be an expression string");
    step.when = raw["when"].get<std::string>();
  }
  step.requirements = parse_clauses(raw.value("requirements", Json()), version, where + "/requirements");
  step.hints = parse_clauses(raw.value("hints", Json()), version, where + "/hints");
  return step;
}

WorkflowDescription parse_workflow(const Json& raw, Version version, const std::string& base_uri,
                                   const std::string& where) {
  check_keys(raw, {"class", "cwlVersion", "id", "label", "doc", "author", "$namespaces", "$schemas",
                   "inputs", "outputs", "steps", "requirements", "hints"},
             where);
  WorkflowDescription wf;
  for (const auto& item : to_list_form(raw.value("inputs", Json()), "type", where + "/inputs")) {
    wf.inputs.push_back(parse_input(item, false, where + "/inputs"));
  }
  for (const auto& item : to_list_form(raw.value("outputs", Json()), "type", where + "/outputs")) {
    wf.outputs.push_back(parse_workflow_output(item, where + "/outputs"));
  }
  for (const auto& item : to_list_form(raw.value("steps", Json()), "run", where + "/steps")) {
    wf.steps.push_back(parse_step(item, version, base_uri, where + "/steps"));
  }
  wf.requirements = parse_clauses(raw.value("requirements", Json()), version, where + "/requirements");
  wf.hints = parse_clauses(raw.value("hints", Json()), version, where + "/hints");
  return wf;
}

}  // namespace

Document document_from_json(const Json& raw, const std::string& base_uri,
                            std::optional<std::string> inherited_version) {
  const std::string where = base_uri.empty() ? "<document>" : base_uri;
  if (!raw.is_object()) schema_error(where, "document must be a map");
  Document doc;
  doc.base_uri = base_uri;
  if (raw.contains("cwlVersion")) {
    if (!raw["cwlVersion"].is_string()) schema_error(where, "cwlVersion must be a string");
    doc.version = raw["cwlVersion"].get<std::string>();
  } else if (inherited_version) {
    doc.version = *inherited_version;
  } else {
    schema_error(where, "missing cwlVersion");
  }
  auto version = parse_version(doc.version);
  if (!version) schema_error(where, "malformed cwlVersion '" + doc.version + "'");

  if (!raw.contains("class") || !raw["class"].is_string()) schema_error(where, "missing class");
  const std::string cls = raw["class"].get<std::string>();
  if (cls == "CommandLineTool") {
    doc.body = parse_tool(raw, *version, where);
  } else if (cls == "Workflow") {
    doc.body = parse_workflow(raw, *version, base_uri, where);
  } else {
    schema_error(where, "unsupported class '" + cls + "'");
  }

  for (const auto& [key, value] : raw.items()) {
    if (is_namespaced(key)) doc.extensions[key] = value;
  }
  if (raw.contains("$namespaces")) {
    if (!raw["$namespaces"].is_object()) schema_error(where, "$namespaces must be a map");
    for (const auto& [prefix, iri] : raw["$namespaces"].items()) {
      if (!iri.is_string()) schema_error(where, "$namespaces values must be strings");
      doc.namespaces[prefix] = iri.get<std::string>();
    }
  }
  doc.metadata.label = optional_string(raw, "label", where);
  doc.metadata.doc = optional_string(raw, "doc", where);
  doc.metadata.author = optional_string(raw, "author", where);
  return doc;
}

Document parse_document(std::string_view text, const std::string& base_uri) {
  return document_from_json(load_structured_text(text), base_uri);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

Json clauses_to_json(const std::vector<Clause>& clauses) {
  Json out = Json::array();
  for (const auto& c : clauses) {
    Json entry = c.payload;
    entry["class"] = c.class_name;
    out.push_back(std::move(entry));
  }
  return out;
}

Json input_to_json(const InputParameter& p) {
  Json out = {{"id", p.id}, {"type", type_to_json(p.type)}};
  if (p.position || p.prefix) {
    Json binding = Json::object();
    if (p.position) binding["position"] = *p.position;
    if (p.prefix) binding["prefix"] = *p.prefix;
    out["inputBinding"] = binding;
  }
  if (p.default_value) out["default"] = *p.default_value;
  if (p.format) out["format"] = *p.format;
  if (p.streamable) out["streamable"] = true;
  return out;
}

Json output_to_json(const OutputParameter& p) {
  Json out = {{"id", p.id}};
  if (p.capture == Capture::Stdout) {
    out["type"] = "stdout";
  } else if (p.capture == Capture::Stderr) {
    out["type"] = "stderr";
  } else {
    out["type"] = type_to_json(p.type);
  }
  if (p.glob) out["outputBinding"] = {{"glob", *p.glob}};
  if (p.output_source) out["outputSource"] = *p.output_source;
  if (p.format) out["format"] = *p.format;
  if (p.streamable) out["streamable"] = true;
  return out;
}

}  // namespace

Json to_json(const Document& doc) {
  Json out = Json::object();
  out["cwlVersion"] = doc.version;
  out["class"] = doc.class_name();
  if (doc.metadata.label) out["label"] = *doc.metadata.label;
  if (doc.metadata.doc) out["doc"] = *doc.metadata.doc;
  if (doc.metadata.author) out["author"] = *doc.metadata.author;
  if (!doc.namespaces.empty()) out["$namespaces"] = doc.namespaces;
  for (const auto& [key, value] : doc.extensions) out[key] = value;

  Json inputs = Json::array();
  Json outputs = Json::array();
  if (doc.is_tool()) {
    const auto& tool = doc.tool();
    out["baseCommand"] = tool.base_command;
    if (!tool.arguments.empty()) {
      Json args = Json::array();
      for (const auto& a : tool.arguments) {
        Json entry = {{"valueFrom", a.value}};
        if (a.position) entry["position"] = *a.position;
        if (a.prefix) entry["prefix"] = *a.prefix;
        args.push_back(std::move(entry));
      }
      out["arguments"] = args;
    }
    for (const auto& p : tool.inputs) inputs.push_back(input_to_json(p));
    for (const auto& p : tool.outputs) outputs.push_back(output_to_json(p));
    out["requirements"] = clauses_to_json(tool.requirements);
    out["hints"] = clauses_to_json(tool.hints);
    if (tool.stdin_path) out["stdin"] = *tool.stdin_path;
    if (tool.stdout_name) out["stdout"] = *tool.stdout_name;
    if (tool.stderr_name) out["stderr"] = *tool.stderr_name;
    out["successCodes"] = std::vector<int>(tool.success_codes.begin(), tool.success_codes.end());
  } else {
    const auto& wf = doc.workflow();
    for (const auto& p : wf.inputs) inputs.push_back(input_to_json(p));
    for (const auto& p : wf.outputs) outputs.push_back(output_to_json(p));
    Json steps = Json::array();
    for (const auto& s : wf.steps) {
      Json step = {{"id", s.id}};
      step["run"] = s.run.resolved() ? to_json(*s.run.document) : Json(s.run.path);
      Json in = Json::array();
      for (const auto& i : s.in) {
        Json entry = {{"id", i.id}};
        if (i.source) entry["source"] = *i.source;
        if (i.default_value) entry["default"] = *i.default_value;
        in.push_back(std::move(entry));
      }
      step["in"] = in;
      step["out"] = s.out;
      if (!s.scatter.empty()) step["scatter"] = s.scatter;
      if (s.when) step["when"] = *s.when;
      step["requirements"] = clauses_to_json(s.requirements);
      step["hints"] = clauses_to_json(s.hints);
      steps.push_back(std::move(step));
    }
    out["steps"] = steps;
    out["requirements"] = clauses_to_json(wf.requirements);
    out["hints"] = clauses_to_json(wf.hints);
  }
  out["inputs"] = inputs;
  out["outputs"] = outputs;
  return out;
}

std::string canonical_serialize(const Document& doc) {
  // nlohmann::json objects are key-ordered maps, so dump() is already sorted.
  return to_json(doc).dump(-1, ' ', false, Json::error_handler_t::replace);
}

std::string canonical_digest(const Document& doc) {
  return sha256_hex(canonical_serialize(doc));
}

// ---------------------------------------------------------------------------
// Reference resolution
// ---------------------------------------------------------------------------

std::string FileLoader::locate(const std::string& base_uri, const std::string& reference) const {
  fs::path ref(reference);
  if (ref.is_relative() && !base_uri.empty()) {
    ref = fs::path(base_uri).parent_path() / ref;
  }
  std::error_code ec;
  fs::path absolute = fs::absolute(ref, ec);
  return (ec ? ref : absolute).lexically_normal().string();
}

std::string FileLoader::fetch(const std::string& key) const {
  std::ifstream in(key, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::NotFound, "document not found: " + key);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

namespace {

Document resolve_impl(const Document& doc, const DocumentLoader& loader,
                      std::vector<std::string>& stack) {
  if (!doc.is_workflow()) return doc;
  Document out = doc;
  auto& wf = std::get<WorkflowDescription>(out.body);
  for (auto& step : wf.steps) {
    if (step.run.resolved()) {
      step.run.document = std::make_shared<const Document>(resolve_impl(*step.run.document, loader, stack));
      continue;
    }
    const std::string key = loader.locate(doc.base_uri, step.run.path);
    if (std::find(stack.begin(), stack.end(), key) != stack.end()) {
      std::string chain;
      for (const auto& k : stack) chain += k + " -> ";
      throw Error(ErrorCode::IncludeCycle, "include cycle: " + chain + key);
    }
    std::string text;
    try {
      text = loader.fetch(key);
    } catch (const Error& e) {
      throw Error(ErrorCode::NotFound, "step '" + step.id + "' runs missing document '" +
                                           step.run.path + "' (" + key + ")");
    }
    Document child = parse_document(text, key);
    stack.push_back(key);
    step.run.document = std::make_shared<const Document>(resolve_impl(child, loader, stack));
    stack.pop_back();
  }
  return out;
}

}  // namespace

Document resolve_references(const Document& doc, const DocumentLoader& loader) {
  std::vector<std::string> stack;
  if (!doc.base_uri.empty()) stack.push_back(loader.locate("", doc.base_uri));
  return resolve_impl(doc, loader, stack);
}

Document load_document(const fs::path& path, const DocumentLoader& loader) {
  const std::string key = loader.locate("", path.string());
  return resolve_references(parse_document(loader.fetch(key), key), loader);
}

}  // namespace miniwfl
