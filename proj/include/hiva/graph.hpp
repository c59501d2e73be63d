#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "hiva/errors.hpp"

namespace hiva {

using NodeId = std::string;

struct AgentNode {
    NodeId id;
    std::string system_prompt;
    std::optional<std::string> tool_ref;  // registry name, versions resolved at call time
    double alpha = 1.0;                   // Beta belief over usefulness
    double beta = 1.0;
    int created_at = 0;                   // graph iteration when the node appeared
};

struct EdgeState {
    NodeId from;
    NodeId to;
    double synergy = 1.0;   // C_syn; new edges start neutral, see team_synergy
    double edge_alpha = 1.0;
    double edge_beta = 1.0;
    int usage = 0;          // routing count R_ij, accumulated across passes
    int successes = 0;
    int attempts = 0;
};

// Topology actions produced by the evolution step.
struct NoChange {
    std::string reason;
};
struct AddParallel {
    std::string description;  // role of the new sibling agent
};
struct AddSerial {
    std::string description;  // role of the new intermediate agent
};
struct RemoveSuccessor {
    NodeId successor;
};
using TopologyAction = std::variant<NoChange, AddParallel, AddSerial, RemoveSuccessor>;

// Directed acyclic agent graph with a fixed source and aggregator.
// Nodes and edges keep insertion order; everything that iterates them is
// deterministic because of it.
struct AgentGraph {
    std::vector<AgentNode> nodes;
    std::vector<EdgeState> edges;
    NodeId source;
    NodeId aggregator;
    int iteration = 0;

    const AgentNode* find(const NodeId& id) const;
    AgentNode* find(const NodeId& id);
    const AgentNode& at(const NodeId& id) const;  // throws UnknownNode
    AgentNode& at(const NodeId& id);
    bool has_edge(const NodeId& from, const NodeId& to) const;
    EdgeState* find_edge(const NodeId& from, const NodeId& to);
    const EdgeState* find_edge(const NodeId& from, const NodeId& to) const;
    std::vector<NodeId> successors(const NodeId& id) const;
    std::vector<NodeId> predecessors(const NodeId& id) const;
    size_t in_degree(const NodeId& id) const;
    size_t out_degree(const NodeId& id) const;
};

// Minimal two-node graph: source -> aggregator.
AgentGraph make_initial_graph(const std::string& source_prompt,
                              const std::string& aggregator_prompt);

bool has_cycle(const AgentGraph& g);

// Kahn's algorithm. Deterministic: lowest insertion index first, source
// always first, aggregator deferred to the end. Throws CycleDetected.
std::vector<NodeId> topological_order(const AgentGraph& g);

// Applies one action at node `at` and returns the new graph. The input is
// untouched; a rejected action (WouldCreateCycle) leaves nothing to undo.
// New nodes get fresh beliefs (alpha = beta = 1) and created_at = iteration.
AgentGraph apply_topology_action(const AgentGraph& g, const NodeId& at,
                                 const TopologyAction& action);

// Iterates cycle-breaking, orphan pruning and low-success-rate edge pruning
// to a fixed point. Source and aggregator survive no matter what; if pruning
// disconnects them the source->aggregator edge is restored so the graph
// stays runnable.
AgentGraph repair_topology(const AgentGraph& g, double prune_threshold);

nlohmann::json graph_to_json(const AgentGraph& g);
AgentGraph graph_from_json(const nlohmann::json& doc);

}  // namespace hiva
