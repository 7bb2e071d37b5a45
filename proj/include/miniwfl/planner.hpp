#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "miniwfl/document.hpp"
#include "miniwfl/expression.hpp"

namespace miniwfl {

// Concrete values for one run, keyed by workflow input id. File values are
// captured (absolute path, size, checksum) when the job order is loaded.
struct JobOrder {
  std::map<std::string, Json> values;
};

/// Reads a YAML/JSON job order. Relative File paths resolve against
/// `base_dir`; bare strings are accepted for File-typed inputs. Defaults are
/// applied, then every non-optional input must be present and conform.
/// File paths inside document defaults resolve against `defaults_dir`.
/// Throws Error(JobOrderError) naming the offending input.
JobOrder load_job_order(const Json& raw, const std::vector<InputParameter>& inputs,
                        const std::filesystem::path& base_dir,
                        const std::filesystem::path& defaults_dir = {});
JobOrder load_job_order_file(const std::filesystem::path& path,
                             const std::vector<InputParameter>& inputs,
                             const std::filesystem::path& defaults_dir = {});

/// Workflow-level inputs of a document; a tool's own inputs for a tool.
std::vector<InputParameter> document_inputs(const Document& doc);

enum class TaskState { Pending, Ready, Running, Succeeded, Failed, Skipped, Cached };

const char* to_string(TaskState state);
bool transition_allowed(TaskState from, TaskState to);

struct Endpoint {
  std::string task;
  std::string output;

  auto operator<=>(const Endpoint&) const = default;
};

// Where a task input's value comes from. A Gather collects one output from
// each element of a statically expanded scatter, in index order.
struct Binding {
  enum class Kind { Value, Edge, Gather };

  Kind kind = Kind::Value;
  Json value;
  std::vector<Endpoint> sources;
  std::optional<Json> fallback;  // substituted when the delivered value is null

  static Binding literal(Json v) { return {Kind::Value, std::move(v), {}, std::nullopt}; }
  static Binding edge(Endpoint from) { return {Kind::Edge, nullptr, {std::move(from)}, std::nullopt}; }
};

// A `when` condition and the step inputs it may read.
struct Guard {
  Expression expression;
  std::map<std::string, Binding> inputs;
  // Set on the node's own step condition; scattered nodes evaluate it per
  // element. Guards inherited from an enclosing sub-workflow step are not.
  bool own = false;
};

// Effective resource minima for admission. Values come from a Resource
// clause (literal or expression) or the defaults 1 core, 256 MiB, 0 MiB.
struct ResourceRequest {
  long long cores = 1;
  long long ram_mib = 256;
  long long disk_mib = 0;
  std::optional<long long> wall_time_max;  // seconds

  bool operator==(const ResourceRequest&) const = default;
};

struct TaskNode {
  std::string id;              // "step", "parent/child", "step[3]"
  DocumentPtr tool_document;   // always a CommandLineTool
  std::map<std::string, Binding> bindings;
  std::vector<Guard> guards;   // outermost first; all must hold
  std::vector<Clause> requirements;
  std::vector<Clause> hints;
  // Non-empty on a scatter node whose width is only known at run time; the
  // scheduler expands it once its inputs are published.
  std::vector<std::string> deferred_scatter;
  std::map<std::string, Binding> scatter_bindings;
  std::optional<std::size_t> scatter_index;
  TaskState state = TaskState::Pending;

  const ToolDescription& tool() const { return tool_document->tool(); }
  /// Requirement or hint of `kind`, requirement first.
  const Clause* find_clause(ClauseKind kind, bool* required = nullptr) const;
};

struct Edge {
  Endpoint from;
  std::string consumer;
  std::string input;  // guard inputs appear as "when:<id>"

  auto operator<=>(const Edge&) const = default;
};

// The planned, flattened workflow. Node and edge sets are fixed after plan();
// only node states and published values change.
class DataflowGraph {
 public:
  const std::vector<TaskNode>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::map<std::string, Binding>& workflow_outputs() const { return workflow_outputs_; }

  const TaskNode& node(const std::string& id) const { return nodes_.at(index_.at(id)); }
  bool contains(const std::string& id) const { return index_.contains(id); }
  std::size_t layer(const std::string& id) const { return layers_.at(index_.at(id)); }

  /// Validated state change. Throws std::logic_error on an illegal transition.
  void set_state(const std::string& id, TaskState to);
  void publish(const std::string& task, const std::string& output, Json value);
  /// Marks the task Skipped and publishes null for every tool output.
  void skip(const std::string& id);

  bool is_published(const Endpoint& e) const { return published_.contains(e); }
  const Json& published(const Endpoint& e) const { return published_.at(e); }

  /// Value of a binding from published outputs; nullopt while unavailable.
  std::optional<Json> resolve(const Binding& binding) const;
  bool available(const Binding& binding) const;

  /// Resolved tool inputs of a task (all bindings must be available).
  std::map<std::string, Json> resolve_inputs(const TaskNode& node) const;

  /// Pending nodes whose bindings and guard inputs are all available,
  /// ordered by (layer, id).
  std::vector<std::string> ready_set() const;

  /// Graphviz text: nodes labeled with id and state, edges output->input,
  /// one rank group per layer.
  std::string to_dot() const;

 private:
  friend class GraphBuilder;
  void finalize();

  std::vector<TaskNode> nodes_;
  std::map<std::string, std::size_t> index_;
  std::vector<Edge> edges_;
  std::map<std::string, Binding> workflow_outputs_;
  std::map<Endpoint, Json> published_;
  std::vector<std::size_t> layers_;
};

struct PlanOptions {
  // Plan without a job order: inputs stay unbound and every scatter is
  // deferred. Used for the static graph view.
  bool static_view = false;
};

/// Flattens a resolved, validated workflow (or a single tool, wrapped as a
/// one-step workflow with step id "main") into a DataflowGraph.
/// Throws Error(PlanError) or Error(ScatterLengthMismatch).
DataflowGraph plan(const Document& doc, const JobOrder& job, PlanOptions options = {});

/// One node per element of the scattered inputs (dot product). `bound` holds
/// the concrete arrays. Throws Error(ScatterLengthMismatch) on unequal
/// lengths and Error(TypeError) when a scattered value is not an array.
std::vector<TaskNode> expand_scatter(const TaskNode& prototype, const std::vector<std::string>& scatter,
                                     const std::map<std::string, Json>& bound);

enum class GuardDecision { Proceed, Skip };

/// Evaluates one `when` condition. Non-boolean results raise Error(TypeError).
GuardDecision apply_guard(const Guard& guard, const EvalContext& ctx);

/// Evaluates all guards of a node against published values.
GuardDecision apply_guards(const TaskNode& node, const DataflowGraph& graph);

/// Resource request of a node given its resolved inputs, with hints clamped
/// to `capacity`.
ResourceRequest resolve_resources(const TaskNode& node, const std::map<std::string, Json>& inputs,
                                  const ResourceRequest& capacity);

}  // namespace miniwfl
