#pragma once

#include <stdexcept>
#include <string>

namespace hiva {

// Base for everything thrown by this library. Callers that only want
// "did it work" can catch this; tests catch the concrete types below.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// graph-core
struct CycleDetected : Error {
    CycleDetected() : Error("agent graph contains a cycle") {}
};
struct UnknownNode : Error {
    explicit UnknownNode(const std::string& id) : Error("unknown node: " + id) {}
};
struct WouldCreateCycle : Error {
    WouldCreateCycle() : Error("topology action rejected: would create a cycle") {}
};

// knowledge
struct EmptyText : Error {
    EmptyText() : Error("cannot embed empty text") {}
};
struct Unreachable : Error {
    explicit Unreachable(const std::string& id) : Error("concept unreachable from root: " + id) {}
};
struct UnknownAgent : Error {
    explicit UnknownAgent(const std::string& id) : Error("agent not registered in knowledge graph: " + id) {}
};
struct BadWeights : Error {
    BadWeights() : Error("mismatch weights must be non-negative and sum to 1") {}
};

// kabb-routing
struct NoSuccessors : Error {
    explicit NoSuccessors(const std::string& id) : Error("node has no successors: " + id) {}
};

// llm-backend
struct TransportError : Error {  // retryable: timeouts, connection resets, 5xx
    explicit TransportError(const std::string& msg) : Error(msg) {}
};
struct Exhausted : Error {
    explicit Exhausted(const std::string& msg) : Error(msg) {}
};
struct NoScriptMatch : Error {
    explicit NoScriptMatch(const std::string& prompt_head)
        : Error("no scripted rule matches request: " + prompt_head) {}
};
struct TagNotFound : Error {
    explicit TagNotFound(const std::string& tag) : Error("tag not found in completion: " + tag) {}
};
struct MissingField : Error {
    explicit MissingField(const std::string& name) : Error("template field missing: " + name) {}
};

// tools
struct RestrictedImport : Error {
    explicit RestrictedImport(const std::string& mod) : Error("restricted import: " + mod) {}
};
struct MissingEntryPoint : Error {
    explicit MissingEntryPoint(const std::string& name) : Error("tool source does not define " + name) {}
};
struct EntryPointChanged : Error {
    explicit EntryPointChanged(const std::string& name)
        : Error("refined tool no longer defines " + name) {}
};
struct NoCodeBlock : Error {
    NoCodeBlock() : Error("completion contains no fenced code block") {}
};
struct TimedOutExhausted : Error {
    explicit TimedOutExhausted(const std::string& msg) : Error(msg) {}
};
struct CrashedExhausted : Error {
    explicit CrashedExhausted(const std::string& msg) : Error(msg) {}
};
struct UnknownTool : Error {
    explicit UnknownTool(const std::string& name) : Error("tool not in registry: " + name) {}
};

// environments
struct NoNumberFound : Error {
    NoNumberFound() : Error("output contains no numeric token") {}
};
struct SandboxFailure : Error {
    explicit SandboxFailure(const std::string& msg) : Error(msg) {}
};

// execution
struct DisconnectedAggregator : Error {
    DisconnectedAggregator() : Error("no node routed to the aggregator this pass") {}
};
struct EmptyAggregation : Error {
    EmptyAggregation() : Error("aggregate called with no inputs") {}
};
struct InvalidAgent : Error {
    explicit InvalidAgent(const std::string& id) : Error("agent has no system prompt: " + id) {}
};

// cli / engine
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};
struct SchemaMismatch : Error {
    explicit SchemaMismatch(const std::string& msg) : Error(msg) {}
};

}  // namespace hiva
