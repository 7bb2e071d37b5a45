#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "miniwfl/types.hpp"
#include "miniwfl/value.hpp"

namespace miniwfl {

enum class ClauseKind { Container, Resource, EnvVars, InitialWorkDir, WorkReuse, Extension };

const char* to_string(ClauseKind kind);

// One entry of a requirements or hints list. `payload` holds every key of
// the clause except "class", already normalized to a single shape per kind:
//   Container      {"dockerPull": image}
//   Resource       {"coresMin"?, "ramMin"?, "diskMin"?, "wallTimeMax"?}
//   EnvVars        {"envDef": {name: value, ...}}
//   InitialWorkDir {"listing": [{"entryname"?, "entry"}, ...]}
//   WorkReuse      {"enableReuse": bool}
// Extension clauses keep their payload verbatim.
struct Clause {
  ClauseKind kind = ClauseKind::Extension;
  std::string class_name;
  Json payload = Json::object();

  bool operator==(const Clause&) const = default;
};

struct InputParameter {
  std::string id;
  DataType type;
  std::optional<int> position;
  std::optional<std::string> prefix;
  std::optional<Json> default_value;
  std::optional<std::string> format;
  bool streamable = false;

  bool operator==(const InputParameter&) const = default;
};

enum class Capture { None, Stdout, Stderr };

struct OutputParameter {
  std::string id;
  DataType type;
  std::optional<std::string> glob;
  Capture capture = Capture::None;
  std::optional<std::string> output_source;
  std::optional<std::string> format;
  bool streamable = false;

  bool operator==(const OutputParameter&) const = default;
};

// Extra command-line token not tied to an input. `value` may interpolate.
struct Argument {
  std::optional<int> position;
  std::optional<std::string> prefix;
  std::string value;

  bool operator==(const Argument&) const = default;
};

struct ToolDescription {
  std::vector<std::string> base_command;
  std::vector<Argument> arguments;
  std::vector<InputParameter> inputs;
  std::vector<OutputParameter> outputs;
  std::vector<Clause> requirements;
  std::vector<Clause> hints;
  std::optional<std::string> stdin_path;
  std::optional<std::string> stdout_name;
  std::optional<std::string> stderr_name;
  std::set<int> success_codes{0};

  bool operator==(const ToolDescription&) const = default;

  const InputParameter* find_input(std::string_view id) const;
  const OutputParameter* find_output(std::string_view id) const;
};

struct Document;
using DocumentPtr = std::shared_ptr<const Document>;

// A step's `run` target. Unresolved references carry only `path`; after
// resolve_references `document` is set.
struct RunReference {
  std::string path;
  DocumentPtr document;

  bool resolved() const { return document != nullptr; }
  friend bool operator==(const RunReference& a, const RunReference& b);
};

struct StepInput {
  std::string id;
  std::optional<std::string> source;  // "input" or "step/output"
  std::optional<Json> default_value;

  bool operator==(const StepInput&) const = default;
};

struct Step {
  std::string id;
  RunReference run;
  std::vector<StepInput> in;
  std::vector<std::string> out;
  std::vector<std::string> scatter;
  std::optional<std::string> when;
  std::vector<Clause> requirements;
  std::vector<Clause> hints;

  bool operator==(const Step&) const = default;

  const StepInput* find_input(std::string_view id) const;
};

struct WorkflowDescription {
  std::vector<InputParameter> inputs;
  std::vector<OutputParameter> outputs;
  std::vector<Step> steps;
  std::vector<Clause> requirements;
  std::vector<Clause> hints;

  bool operator==(const WorkflowDescription&) const = default;

  const InputParameter* find_input(std::string_view id) const;
  const Step* find_step(std::string_view id) const;
};

struct Metadata {
  std::optional<std::string> label;
  std::optional<std::string> doc;
  std::optional<std::string> author;

  bool operator==(const Metadata&) const = default;
};

struct Version {
  int major = 0;
  int minor = 0;

  auto operator<=>(const Version&) const = default;
  std::string str() const;
};

/// Accepts "v<major>.<minor>" only.
std::optional<Version> parse_version(std::string_view text);

struct Document {
  std::string version;
  std::variant<ToolDescription, WorkflowDescription> body;
  std::map<std::string, Json> extensions;
  std::map<std::string, std::string> namespaces;
  Metadata metadata;
  // Where the document was read from; used to resolve relative run paths.
  // Not part of the document's identity.
  std::string base_uri;

  bool is_tool() const { return std::holds_alternative<ToolDescription>(body); }
  bool is_workflow() const { return std::holds_alternative<WorkflowDescription>(body); }
  const ToolDescription& tool() const { return std::get<ToolDescription>(body); }
  const WorkflowDescription& workflow() const { return std::get<WorkflowDescription>(body); }
  const char* class_name() const { return is_tool() ? "CommandLineTool" : "Workflow"; }

  friend bool operator==(const Document& a, const Document& b);
};

/// YAML or JSON text to a JSON value (YAML 1.2 core schema scalars; quoted
/// scalars always stay strings). Throws Error(SyntaxError).
Json load_structured_text(std::string_view text);

/// Parses and normalizes a document. `inherited_version` applies to inline
/// run documents that omit cwlVersion.
Document parse_document(std::string_view text, const std::string& base_uri);
Document document_from_json(const Json& raw, const std::string& base_uri,
                            std::optional<std::string> inherited_version = std::nullopt);

/// Normalized form: list-form parameters, explicit ids, resolved run
/// documents inlined. Parsing this form yields an equal Document.
Json to_json(const Document& doc);

/// Compact JSON with sorted keys, the input of canonical_digest.
std::string canonical_serialize(const Document& doc);

/// 64-hex SHA-256 over canonical_serialize.
std::string canonical_digest(const Document& doc);

class DocumentLoader {
 public:
  virtual ~DocumentLoader() = default;
  /// Turns a run reference into an absolute key relative to `base_uri`.
  virtual std::string locate(const std::string& base_uri, const std::string& reference) const = 0;
  /// Fetches the text behind a key. Throws Error(NotFound).
  virtual std::string fetch(const std::string& key) const = 0;
};

class FileLoader final : public DocumentLoader {
 public:
  std::string locate(const std::string& base_uri, const std::string& reference) const override;
  std::string fetch(const std::string& key) const override;
};

/// Replaces every step.run path by its parsed document, recursively.
/// Throws Error(NotFound) or Error(IncludeCycle).
Document resolve_references(const Document& doc, const DocumentLoader& loader);

/// parse_document + resolve_references on a file.
Document load_document(const std::filesystem::path& path,
                       const DocumentLoader& loader = FileLoader{});

}  // namespace miniwfl
