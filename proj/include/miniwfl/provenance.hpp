#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "miniwfl/scheduler.hpp"

namespace miniwfl {

inline constexpr const char* kEngineName = "miniwfl";
inline constexpr const char* kEngineVersion = "0.1.0";

// Run-level facts the scheduler does not know.
struct ProvenanceContext {
  std::string workflow_digest;
  std::map<std::string, Json> job_order;
};

/// The provenance record of a finished run (schema in docs/provenance.md).
/// Files appear by checksum and size only; the record is a pure function of
/// its arguments.
Json provenance_record(const RunResult& result, const ProvenanceContext& context);

/// Writes the record to <sink>/<runId>.json. Throws Error(IOError).
std::filesystem::path write_provenance(const RunResult& result, const ProvenanceContext& context,
                                       const std::filesystem::path& sink);

}  // namespace miniwfl
