#pragma once

#include <array>
#include <functional>
#include <vector>

#include "hiva/graph.hpp"
#include "hiva/knowledge.hpp"
#include "hiva/random.hpp"

namespace hiva {

struct RoutingParams {
    double lambda = 1.0;           // knowledge distance penalty
    double eta = 0.5;              // synergy exponent
    double delta = 0.5;            // knowledge correction weight in belief updates
    double kappa = 0.1;            // time decay rate; gamma^dt = exp(-kappa*dt)
    int top_k = 2;                 // successors per routing decision
    double prune_threshold = 0.3;  // edge success-rate floor
    double synergy_rate = 0.1;     // synergy learning rate
    std::array<double, 4> weights{0.25, 0.25, 0.25, 0.25};  // mismatch blend

    // per-iteration decay factor 0.6, i.e. kappa = -ln 0.6
    static RoutingParams paper_decay();
};

struct RewardSignal {
    NodeId agent;
    int value = 0;        // binary reward r
    double km = 0.0;      // knowledge match
    double kd = 1.0;      // knowledge deficit
    bool selected = false;
    double delta_t = 1.0; // iterations since the agent's last update
};

// Distance of a candidate successor for the current task; empty function
// means "no knowledge available", distance 0 for everyone.
using DistanceFn = std::function<double(const NodeId&)>;

// Mean pairwise synergy over ordered pairs of the subset; 1.0 for subsets
// of size <= 1, missing edges contribute 0.
double team_synergy(const AgentGraph& g, const std::vector<NodeId>& subset);

// Posterior-mean form: (alpha/(alpha+beta)) * exp(-lambda*dist) * zeta^eta.
double selection_score(const AgentNode& agent, double dist, double zeta,
                       const RoutingParams& params);

// Thompson sampling over the successors of `from`: sample theta_j from each
// successor's Beta belief, weight by distance and team synergy, keep the
// top_k by sampled score (descending). Deterministic given the rng state.
std::vector<NodeId> thompson_select(const AgentGraph& g, const NodeId& from,
                                    const std::vector<NodeId>& selected_so_far,
                                    const RoutingParams& params, Rng& rng,
                                    const DistanceFn& dist = {});

// KABB update: alpha' = e^(-kappa*dt)*alpha + (r + delta*KM)*I,
//              beta'  = e^(-kappa*dt)*beta + ((1-r) + delta*KD)*I,
// both clamped to >= 1e-6.
AgentNode update_beliefs(const AgentNode& agent, const RewardSignal& signal,
                         const RoutingParams& params);

// KM = rho_overlap * cosine(agent prompt embedding, task embedding), KD = 1-KM.
std::pair<double, double> knowledge_match(const AgentNode& agent, const TaskProfile& task,
                                          double rho_overlap);

// synergy' = synergy + rate * (edge_alpha/(edge_alpha+edge_beta)) * contribution
EdgeState update_synergy(const EdgeState& edge, double contribution,
                         const RoutingParams& params);

}  // namespace hiva
