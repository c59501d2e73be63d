#pragma once

#include <map>
#include <string>
#include <vector>

#include "hiva/environment.hpp"
#include "hiva/execution.hpp"
#include "hiva/graph.hpp"
#include "hiva/knowledge.hpp"
#include "hiva/llm.hpp"
#include "hiva/routing.hpp"
#include "hiva/tools.hpp"

namespace hiva {

constexpr int kMaxSuccessors = 5;  // ADD veto threshold

struct TextualGradient {
    NodeId target;
    std::string system_prompt_feedback;
    std::string tool_feedback;
    std::string overall_feedback;
};

struct LossSignal {
    Outcome outcome;
    std::string gradient_seed;  // "SATISFACTORY" on success, else a diagnosis
};

// Evaluates the final output. On success the seed is the literal
// "SATISFACTORY" and no completion is made; on failure one GlobalGradient
// completion turns the environment feedback into the seed.
LossSignal compute_loss(const Task& task, const std::string& final_output, LlmBackend& llm,
                        const BackendPolicy& policy, const ExecutionPolicy& sandbox = {});

// The aggregator's gradient: the seed passes through untouched.
TextualGradient seed_gradient(const NodeId& aggregator, const std::string& seed);

// One AgentFeedback completion over the successors' combined feedback,
// split into the three sections. y_i is part of the operation's contract
// but the published template does not reference it.
TextualGradient local_gradient(LlmBackend& llm, const BackendPolicy& policy,
                               const AgentNode& node,
                               const std::vector<TextualGradient>& successor_grads,
                               const std::string& y_i);

struct SemanticUpdateResult {
    AgentNode node;
    bool prompt_changed = false;
    bool tool_changed = false;
};

// f_P: prompt update first (when prompt feedback exists), then tool
// refinement (when tool feedback exists and the node has a tool). Malformed
// completions get one re-ask; the re-ask budget is shared, so a prompt
// re-ask skips the tool refinement for this round.
SemanticUpdateResult semantic_update(LlmBackend& llm, const BackendPolicy& policy,
                                     const AgentNode& node, const TextualGradient& gradient,
                                     ToolRegistry* tools, const ExecutionPolicy& tool_policy);

// f_G: one TopologyDecision completion parsed into an action. ADD decisions
// are vetoed into NoChange once the node has kMaxSuccessors successors;
// unparseable output (after one re-ask) decays to NoChange.
TopologyAction decide_topology(LlmBackend& llm, const BackendPolicy& policy,
                               const AgentNode& node, const TextualGradient& gradient,
                               int successor_count, double parallelizability);

std::string describe(const TopologyAction& action);

// Binary reward from one SentimentReward completion: POSITIVE/NEUTRAL -> 1,
// CRITICAL -> 0, anything else -> 0.
int extract_reward(LlmBackend& llm, const BackendPolicy& policy,
                   const TextualGradient& gradient);

struct BackwardContext {
    LlmBackend& llm;
    BackendPolicy backend_policy;
    ToolRegistry* tools = nullptr;
    ExecutionPolicy tool_policy;
    const KnowledgeGraph* kg = nullptr;
    const TaskProfile* profile = nullptr;
    double parallelizability = 0.5;
};

struct EvolutionRecord {
    NodeId node;
    std::string action;
    int reward = 0;
    bool prompt_changed = false;
    bool tool_changed = false;
};

struct BackwardResult {
    AgentGraph graph;
    std::vector<EvolutionRecord> records;
};

// Reverse pass over the trace: local gradients in reverse topological
// order, f_P then f_G per node, belief updates for every node (activated
// with the reward indicator, idle decay-only), synergy and counters on
// routed edges, then repair and the iteration bump. The input graph is
// untouched; errors mid-pass therefore leave the caller's state intact.
// A successful outcome short-circuits: rewards 1, no completions at all.
BackwardResult backward_pass(const AgentGraph& graph, const ExecutionTrace& trace,
                             const LossSignal& loss, BackwardContext& ctx,
                             const RoutingParams& params);

}  // namespace hiva
