#pragma once

#include <set>
#include <string>
#include <vector>

#include "miniwfl/document.hpp"

namespace miniwfl {

enum class Severity { Error, Warning };

// Codes (see docs/dialect.md): DuplicateId, DanglingReference, TypeMismatch,
// FormatMismatch, UnboundInput, InvalidScatter, InvalidExpression,
// UnsupportedFeature, UnsupportedRequirement, UnsupportedVersion,
// ResourceUnsatisfiable, CycleDetected; warnings UnsupportedHint and
// ResourceHintClamped.
struct Diagnostic {
  Severity severity = Severity::Error;
  std::string code;
  std::string location;
  std::string message;

  Json to_json() const;
  bool operator==(const Diagnostic&) const = default;
};

struct SupportMatrix {
  std::set<ClauseKind> supported_requirement_kinds;
  std::set<std::string> supported_versions;
  long long max_cores = 1;
  long long max_ram_mib = 1;
  long long max_disk_mib = 1;

  /// Every built-in clause kind, v1.0 to v1.2, and the given capacity.
  static SupportMatrix defaults(long long cores, long long ram_mib, long long disk_mib);
};

/// All diagnostics for a resolved document, sub-documents included.
std::vector<Diagnostic> validate(const Document& doc, const SupportMatrix& matrix);

/// Empty iff the step dependency relation is acyclic; otherwise exactly one
/// CycleDetected diagnostic listing one cycle's steps in dependency order.
std::vector<Diagnostic> check_acyclic(const WorkflowDescription& wf);

/// Layer k holds the steps whose longest dependency chain from the workflow
/// inputs has k edges. Throws Error(CycleDetected).
std::vector<std::set<std::string>> layering(const WorkflowDescription& wf);

bool has_errors(const std::vector<Diagnostic>& diagnostics);

/// Splits "step/output" into its parts; a bare "input" yields an empty step.
std::pair<std::string, std::string> split_source(const std::string& source);

}  // namespace miniwfl
