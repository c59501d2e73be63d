#pragma once

#include <chrono>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "hiva/errors.hpp"
#include "hiva/llm.hpp"

namespace hiva {

struct ToolSchema {
    std::string name;
    std::string description;
    int version = 1;
    std::string source;  // python, must define the entry point
    std::string entry_point = "tool_function";
    std::vector<std::string> constraints;
};

struct ExecutionPolicy {
    std::chrono::milliseconds timeout{30000};
    int max_retries = 3;
    std::set<std::string> denylist{"os", "subprocess"};
    std::string interpreter = "python3";
};

struct SandboxResult {
    std::string output;
    bool succeeded = false;
    int attempts = 0;
    std::chrono::milliseconds elapsed{0};
};

// Token-level import scan (import X / from X import ...) against the policy
// denylist, plus an entry-point presence check. Not a parser; dynamic
// imports are out of scope and the denylist documents the boundary.
void validate_tool_source(const ToolSchema& schema, const ExecutionPolicy& policy);

// Runs the tool in an external interpreter process: source plus a harness
// that feeds stdin to the entry point and prints the result between
// sentinel lines (see README for the exact format). Timeouts and crashes
// are retried up to max_retries; attempts <= max_retries + 1.
SandboxResult execute_tool(const ToolSchema& schema, const std::string& input,
                           const ExecutionPolicy& policy);

// First fenced code block of a completion (``` or ```python).
std::string extract_code_block(const std::string& completion);

// New tool from a description: one codegen completion, wrapped as version 1
// and validated.
ToolSchema synthesize_tool(LlmBackend& llm, const BackendPolicy& backend_policy,
                           const std::string& description, const std::string& examples,
                           const ExecutionPolicy& policy);

// Rewrite of an existing tool from feedback; the entry point must survive
// and the version increments.
ToolSchema refine_tool(LlmBackend& llm, const BackendPolicy& backend_policy,
                       const ToolSchema& schema, const std::string& feedback,
                       const ExecutionPolicy& policy);

// Versioned, synchronized tool store with per-tool attempt/success counters.
class ToolRegistry {
public:
    struct Entry {
        ToolSchema schema;
        int attempts = 0;
        int successes = 0;
    };

    ToolRegistry() = default;
    ToolRegistry(ToolRegistry&& other) noexcept;
    ToolRegistry& operator=(ToolRegistry&& other) noexcept;

    void register_tool(const ToolSchema& schema);
    ToolSchema latest(const std::string& name) const;              // UnknownTool
    ToolSchema get(const std::string& name, int version) const;    // UnknownTool
    void record_attempt(const std::string& name, int version, bool success);
    std::vector<Entry> entries() const;
    bool has(const std::string& name) const;

    nlohmann::json to_json() const;
    static ToolRegistry from_json(const nlohmann::json& doc);
    void save(const std::string& path) const;
    static ToolRegistry load(const std::string& path);

private:
    mutable std::mutex mu_;
    std::vector<Entry> entries_;
};

}  // namespace hiva
