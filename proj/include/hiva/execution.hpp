#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "hiva/environment.hpp"
#include "hiva/graph.hpp"
#include "hiva/llm.hpp"
#include "hiva/routing.hpp"
#include "hiva/tools.hpp"

namespace hiva {

struct ExecutionTrace {
    std::vector<NodeId> activated;                       // topological order
    std::map<NodeId, std::string> inputs;                // delivered instructions
    std::map<NodeId, std::string> outputs;               // y_i per node
    std::vector<std::pair<NodeId, NodeId>> routed_edges; // in routing order
    int llm_calls = 0;
    std::set<NodeId> aggregate_inputs;                   // nodes feeding the aggregator
};

// Everything a pass needs besides the graph: the backend, the sandbox for
// tool-equipped nodes, and the optional routing distance.
struct ForwardContext {
    LlmBackend& llm;
    BackendPolicy backend_policy;
    ToolRegistry* tools = nullptr;
    ExecutionPolicy tool_policy;
    DistanceFn dist;
};

struct ForwardResult {
    std::string final_output;
    ExecutionTrace trace;
};

// One ForwardInstruction completion turning (x_i, y_i) into the successor's
// instruction. InvalidAgent when the successor has no system prompt.
std::string generate_instruction(LlmBackend& llm, const BackendPolicy& policy,
                                 const std::string& pred_input, const std::string& pred_output,
                                 const AgentNode& successor);

// One Aggregation completion over the collected outputs (EmptyAggregation
// when nothing was routed).
std::string aggregate(LlmBackend& llm, const BackendPolicy& policy,
                      const std::vector<std::pair<NodeId, std::string>>& inputs, const Task& task);

// Executes the graph on a task: source receives the instruction, nodes run
// in topological order (tool call or one completion), successors are picked
// by Thompson sampling, outputs routed to the aggregator are fused into the
// final answer. Edge usage counters (R_ij) are incremented on the graph.
ForwardResult forward_pass(AgentGraph& graph, const Task& task, ForwardContext& ctx,
                           const RoutingParams& params, Rng& rng);

nlohmann::json trace_to_json(const ExecutionTrace& trace, int iteration,
                             const std::string& final_output);

}  // namespace hiva
