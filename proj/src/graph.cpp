#include "hiva/graph.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace hiva {

const AgentNode* AgentGraph::find(const NodeId& id) const {
    for (const auto& n : nodes)
        if (n.id == id) return &n;
    return nullptr;
}

AgentNode* AgentGraph::find(const NodeId& id) {
    for (auto& n : nodes)
        if (n.id == id) return &n;
    return nullptr;
}

const AgentNode& AgentGraph::at(const NodeId& id) const {
    const AgentNode* n = find(id);
    if (!n) throw UnknownNode(id);
    return *n;
}

AgentNode& AgentGraph::at(const NodeId& id) {
    AgentNode* n = find(id);
    if (!n) throw UnknownNode(id);
    return *n;
}

bool AgentGraph::has_edge(const NodeId& from, const NodeId& to) const {
    return find_edge(from, to) != nullptr;
}

EdgeState* AgentGraph::find_edge(const NodeId& from, const NodeId& to) {
    for (auto& e : edges)
        if (e.from == from && e.to == to) return &e;
    return nullptr;
}

const EdgeState* AgentGraph::find_edge(const NodeId& from, const NodeId& to) const {
    for (const auto& e : edges)
        if (e.from == from && e.to == to) return &e;
    return nullptr;
}

std::vector<NodeId> AgentGraph::successors(const NodeId& id) const {
    std::vector<NodeId> out;
    for (const auto& e : edges)
        if (e.from == id) out.push_back(e.to);
    return out;
}

std::vector<NodeId> AgentGraph::predecessors(const NodeId& id) const {
    std::vector<NodeId> out;
    for (const auto& e : edges)
        if (e.to == id) out.push_back(e.from);
    return out;
}

size_t AgentGraph::in_degree(const NodeId& id) const { return predecessors(id).size(); }
size_t AgentGraph::out_degree(const NodeId& id) const { return successors(id).size(); }

AgentGraph make_initial_graph(const std::string& source_prompt,
                              const std::string& aggregator_prompt) {
    AgentGraph g;
    g.source = "source";
    g.aggregator = "aggregator";
    g.nodes.push_back({"source", source_prompt, std::nullopt, 1.0, 1.0, 0});
    g.nodes.push_back({"aggregator", aggregator_prompt, std::nullopt, 1.0, 1.0, 0});
    EdgeState e;
    e.from = "source";
    e.to = "aggregator";
    g.edges.push_back(e);
    return g;
}

bool has_cycle(const AgentGraph& g) {
    try {
        topological_order(g);
        return false;
    } catch (const CycleDetected&) {
        return true;
    }
}

std::vector<NodeId> topological_order(const AgentGraph& g) {
    std::map<NodeId, size_t> indeg;
    for (const auto& n : g.nodes) indeg[n.id] = 0;
    for (const auto& e : g.edges) indeg[e.to]++;

    std::vector<NodeId> order;
    std::vector<bool> emitted(g.nodes.size(), false);
    while (order.size() < g.nodes.size()) {
        // pick the lowest-index ready node; hold the aggregator back until
        // nothing else is ready so it lands last whenever the graph allows
        size_t pick = g.nodes.size();
        size_t agg_pick = g.nodes.size();
        for (size_t i = 0; i < g.nodes.size(); ++i) {
            if (emitted[i] || indeg[g.nodes[i].id] != 0) continue;
            if (g.nodes[i].id == g.source) {
                pick = i;
                break;
            }
            if (g.nodes[i].id == g.aggregator) {
                if (agg_pick == g.nodes.size()) agg_pick = i;
                continue;
            }
            if (pick == g.nodes.size()) pick = i;
        }
        if (pick == g.nodes.size()) pick = agg_pick;
        if (pick == g.nodes.size()) throw CycleDetected();
        emitted[pick] = true;
        const NodeId& id = g.nodes[pick].id;
        order.push_back(id);
        for (const auto& e : g.edges)
            if (e.from == id) indeg[e.to]--;
    }
    return order;
}

namespace {

// next unused "agent_N" id
NodeId fresh_node_id(const AgentGraph& g) {
    int max_n = 0;
    for (const auto& n : g.nodes) {
        if (n.id.rfind("agent_", 0) == 0) {
            try {
                max_n = std::max(max_n, std::stoi(n.id.substr(6)));
            } catch (...) {
            }
        }
    }
    return "agent_" + std::to_string(max_n + 1);
}

// "Data retrieval agent" -> "You are a data retrieval agent."
std::string prompt_from_description(const std::string& desc) {
    std::string d = desc;
    while (!d.empty() && (d.back() == '.' || d.back() == ' ')) d.pop_back();
    if (d.empty()) d = "specialist agent";
    if (d.rfind("You are", 0) == 0) return d + ".";
    d[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(d[0])));
    return "You are a " + d + ".";
}

EdgeState fresh_edge(const NodeId& from, const NodeId& to) {
    EdgeState e;
    e.from = from;
    e.to = to;
    return e;
}

}  // namespace

AgentGraph apply_topology_action(const AgentGraph& g, const NodeId& at,
                                 const TopologyAction& action) {
    g.at(at);  // UnknownNode if absent

    AgentGraph next = g;
    if (std::holds_alternative<NoChange>(action)) return next;

    if (const auto* rm = std::get_if<RemoveSuccessor>(&action)) {
        if (!next.has_edge(at, rm->successor)) throw UnknownNode(rm->successor);
        std::erase_if(next.edges,
                      [&](const EdgeState& e) { return e.from == at && e.to == rm->successor; });
        return next;
    }

    AgentNode node;
    node.id = fresh_node_id(next);
    node.created_at = next.iteration;

    if (const auto* ap = std::get_if<AddParallel>(&action)) {
        // new successor of `at`, feeding the aggregator alongside the
        // existing branches
        node.system_prompt = prompt_from_description(ap->description);
        next.nodes.push_back(node);
        next.edges.push_back(fresh_edge(at, node.id));
        if (node.id != next.aggregator && !next.has_edge(node.id, next.aggregator))
            next.edges.push_back(fresh_edge(node.id, next.aggregator));
    } else {
        const auto* as = std::get_if<AddSerial>(&action);
        // new node between `at` and all of its current successors
        node.system_prompt = prompt_from_description(as->description);
        next.nodes.push_back(node);
        std::vector<NodeId> succ = next.successors(at);
        std::erase_if(next.edges, [&](const EdgeState& e) { return e.from == at; });
        next.edges.push_back(fresh_edge(at, node.id));
        for (const auto& s : succ) next.edges.push_back(fresh_edge(node.id, s));
        if (succ.empty()) next.edges.push_back(fresh_edge(node.id, next.aggregator));
    }

    if (has_cycle(next)) throw WouldCreateCycle();
    return next;
}

namespace {

// DFS from the source; removes the first back edge found. Returns true if
// an edge was removed (caller loops until clean).
bool break_one_cycle(AgentGraph& g) {
    enum class Mark { White, Grey, Black };
    std::map<NodeId, Mark> mark;
    for (const auto& n : g.nodes) mark[n.id] = Mark::White;

    // iterative DFS, visiting every node so cycles off the main path are
    // found too
    for (const auto& root : g.nodes) {
        if (mark[root.id] != Mark::White) continue;
        std::vector<std::pair<NodeId, size_t>> stack{{root.id, 0}};
        mark[root.id] = Mark::Grey;
        while (!stack.empty()) {
            auto& [id, idx] = stack.back();
            std::vector<NodeId> succ = g.successors(id);
            if (idx >= succ.size()) {
                mark[id] = Mark::Black;
                stack.pop_back();
                continue;
            }
            NodeId child = succ[idx++];
            if (mark[child] == Mark::Grey) {
                std::erase_if(g.edges,
                              [&](const EdgeState& e) { return e.from == id && e.to == child; });
                return true;
            }
            if (mark[child] == Mark::White) {
                mark[child] = Mark::Grey;
                stack.emplace_back(child, 0);
            }
        }
    }
    return false;
}

}  // namespace

AgentGraph repair_topology(const AgentGraph& g, double prune_threshold) {
    AgentGraph r = g;

    while (break_one_cycle(r)) {
    }

    bool changed = true;
    while (changed) {
        changed = false;

        // orphan pruning: non-terminal nodes must sit on a path
        for (size_t i = 0; i < r.nodes.size();) {
            const NodeId id = r.nodes[i].id;
            if (id != r.source && id != r.aggregator &&
                (r.in_degree(id) == 0 || r.out_degree(id) == 0)) {
                std::erase_if(r.edges,
                              [&](const EdgeState& e) { return e.from == id || e.to == id; });
                r.nodes.erase(r.nodes.begin() + static_cast<long>(i));
                changed = true;
            } else {
                ++i;
            }
        }

        // edge pruning: drop edges whose observed success rate fell below
        // the threshold (untried edges are left alone)
        size_t before = r.edges.size();
        std::erase_if(r.edges, [&](const EdgeState& e) {
            return e.attempts > 0 &&
                   static_cast<double>(e.successes) / static_cast<double>(e.attempts) <
                       prune_threshold;
        });
        if (r.edges.size() != before) changed = true;
    }

    // keep the graph runnable: the terminals must stay connected
    if (r.out_degree(r.source) == 0 || r.in_degree(r.aggregator) == 0) {
        if (!r.has_edge(r.source, r.aggregator)) {
            EdgeState e;
            e.from = r.source;
            e.to = r.aggregator;
            r.edges.push_back(e);
        }
    }
    return r;
}

nlohmann::json graph_to_json(const AgentGraph& g) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : g.nodes) {
        nlohmann::json jn{{"id", n.id},
                          {"system_prompt", n.system_prompt},
                          {"alpha", n.alpha},
                          {"beta", n.beta},
                          {"created_at", n.created_at}};
        jn["tool_ref"] = n.tool_ref ? nlohmann::json(*n.tool_ref) : nlohmann::json(nullptr);
        nodes.push_back(jn);
    }
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : g.edges) {
        edges.push_back({{"from", e.from},
                         {"to", e.to},
                         {"synergy", e.synergy},
                         {"edge_alpha", e.edge_alpha},
                         {"edge_beta", e.edge_beta},
                         {"usage", e.usage},
                         {"successes", e.successes},
                         {"attempts", e.attempts}});
    }
    return nlohmann::json{{"nodes", nodes},
                          {"edges", edges},
                          {"source", g.source},
                          {"aggregator", g.aggregator},
                          {"iteration", g.iteration}};
}

AgentGraph graph_from_json(const nlohmann::json& doc) {
    AgentGraph g;
    try {
        g.source = doc.at("source").get<std::string>();
        g.aggregator = doc.at("aggregator").get<std::string>();
        g.iteration = doc.at("iteration").get<int>();
        for (const auto& jn : doc.at("nodes")) {
            AgentNode n;
            n.id = jn.at("id").get<std::string>();
            n.system_prompt = jn.at("system_prompt").get<std::string>();
            if (jn.contains("tool_ref") && !jn.at("tool_ref").is_null())
                n.tool_ref = jn.at("tool_ref").get<std::string>();
            n.alpha = jn.at("alpha").get<double>();
            n.beta = jn.at("beta").get<double>();
            n.created_at = jn.at("created_at").get<int>();
            g.nodes.push_back(n);
        }
        for (const auto& je : doc.at("edges")) {
            EdgeState e;
            e.from = je.at("from").get<std::string>();
            e.to = je.at("to").get<std::string>();
            e.synergy = je.at("synergy").get<double>();
            e.edge_alpha = je.at("edge_alpha").get<double>();
            e.edge_beta = je.at("edge_beta").get<double>();
            e.usage = je.at("usage").get<int>();
            e.successes = je.at("successes").get<int>();
            e.attempts = je.at("attempts").get<int>();
            g.edges.push_back(e);
        }
    } catch (const nlohmann::json::exception& ex) {
        throw SchemaMismatch(std::string("bad graph document: ") + ex.what());
    }
    return g;
}

}  // namespace hiva
