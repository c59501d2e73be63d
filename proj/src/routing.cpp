#include "hiva/routing.hpp"

#include <algorithm>
#include <cmath>

namespace hiva {

RoutingParams RoutingParams::paper_decay() {
    RoutingParams p;
    p.kappa = -std::log(0.6);
    return p;
}

double team_synergy(const AgentGraph& g, const std::vector<NodeId>& subset) {
    for (const auto& id : subset) g.at(id);
    const size_t n = subset.size();
    if (n <= 1) return 1.0;
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const EdgeState* e = g.find_edge(subset[i], subset[j]);
            total += e ? e->synergy : 0.0;
        }
    }
    return total / static_cast<double>(n * (n - 1));
}

double selection_score(const AgentNode& agent, double dist, double zeta,
                       const RoutingParams& params) {
    const double mean = agent.alpha / (agent.alpha + agent.beta);
    return mean * std::exp(-params.lambda * dist) * std::pow(zeta, params.eta);
}

std::vector<NodeId> thompson_select(const AgentGraph& g, const NodeId& from,
                                    const std::vector<NodeId>& selected_so_far,
                                    const RoutingParams& params, Rng& rng,
                                    const DistanceFn& dist) {
    const std::vector<NodeId> succ = g.successors(from);
    if (succ.empty()) throw NoSuccessors(from);

    struct Scored {
        NodeId id;
        double score;
        size_t order;
    };
    std::vector<Scored> scored;
    scored.reserve(succ.size());
    for (size_t i = 0; i < succ.size(); ++i) {
        const AgentNode& cand = g.at(succ[i]);
        const double theta = beta_sample(cand.alpha, cand.beta, rng);
        const double d = dist ? dist(cand.id) : 0.0;
        std::vector<NodeId> team = selected_so_far;
        team.push_back(cand.id);
        const double zeta = team_synergy(g, team);
        scored.push_back(
            {cand.id, theta * std::exp(-params.lambda * d) * std::pow(zeta, params.eta), i});
    }
    std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.order < b.order;  // ties: successor declaration order
    });

    const size_t k = std::min(static_cast<size_t>(std::max(params.top_k, 0)), scored.size());
    std::vector<NodeId> out;
    out.reserve(k);
    for (size_t i = 0; i < k; ++i) out.push_back(scored[i].id);
    return out;
}

AgentNode update_beliefs(const AgentNode& agent, const RewardSignal& signal,
                         const RoutingParams& params) {
    const double decay = std::exp(-params.kappa * signal.delta_t);
    const double ind = signal.selected ? 1.0 : 0.0;
    AgentNode next = agent;
    next.alpha = decay * agent.alpha + (static_cast<double>(signal.value) + params.delta * signal.km) * ind;
    next.beta = decay * agent.beta +
                ((1.0 - static_cast<double>(signal.value)) + params.delta * signal.kd) * ind;
    next.alpha = std::max(next.alpha, 1e-6);
    next.beta = std::max(next.beta, 1e-6);
    return next;
}

std::pair<double, double> knowledge_match(const AgentNode& agent, const TaskProfile& task,
                                          double rho_overlap) {
    double affinity = 0.0;
    if (!agent.system_prompt.empty() && !task.embedding.empty()) {
        try {
            affinity = cosine(embed_text(agent.system_prompt), task.embedding);
        } catch (const EmptyText&) {
            affinity = 0.0;
        }
    }
    double km = rho_overlap * affinity;
    km = std::min(1.0, std::max(0.0, km));
    return {km, 1.0 - km};
}

EdgeState update_synergy(const EdgeState& edge, double contribution,
                         const RoutingParams& params) {
    EdgeState next = edge;
    const double mean = edge.edge_alpha / (edge.edge_alpha + edge.edge_beta);
    next.synergy = edge.synergy + params.synergy_rate * mean * contribution;
    return next;
}

}  // namespace hiva
