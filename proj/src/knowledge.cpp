#include "hiva/knowledge.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <set>

namespace hiva {

KgKind kg_kind_from_string(const std::string& s) {
    if (s == "Concept") return KgKind::Concept;
    if (s == "Agent") return KgKind::Agent;
    if (s == "Tool") return KgKind::Tool;
    throw SchemaMismatch("unknown KG node kind: " + s);
}

std::string to_string(KgKind k) {
    switch (k) {
        case KgKind::Concept: return "Concept";
        case KgKind::Agent: return "Agent";
        case KgKind::Tool: return "Tool";
    }
    return "Concept";
}

KgRelation kg_relation_from_string(const std::string& s) {
    if (s == "is_a") return KgRelation::IsA;
    if (s == "requires_skill") return KgRelation::RequiresSkill;
    if (s == "has_tool") return KgRelation::HasTool;
    throw SchemaMismatch("unknown KG relation: " + s);
}

std::string to_string(KgRelation r) {
    switch (r) {
        case KgRelation::IsA: return "is_a";
        case KgRelation::RequiresSkill: return "requires_skill";
        case KgRelation::HasTool: return "has_tool";
    }
    return "is_a";
}

const KgNode* KnowledgeGraph::find(const std::string& id) const {
    for (const auto& n : nodes)
        if (n.id == id) return &n;
    return nullptr;
}

namespace {

// FNV-1a, 64 bit
uint64_t fnv1a(const std::string& s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            tokens.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

}  // namespace

std::vector<double> embed_text(const std::string& text, int dim) {
    const std::vector<std::string> tokens = tokenize(text);
    if (tokens.empty()) throw EmptyText();
    std::vector<double> v(static_cast<size_t>(dim), 0.0);
    for (const auto& t : tokens) v[fnv1a(t) % static_cast<uint64_t>(dim)] += 1.0;
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty() || a.size() != b.size()) return 0.0;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

// BFS hop count; directed when `directed`, else either endpoint works.
int bfs_hops(const KnowledgeGraph& kg, const std::string& from, const std::string& to,
             bool directed) {
    if (from == to) return 0;
    std::map<std::string, int> dist{{from, 0}};
    std::deque<std::string> q{from};
    while (!q.empty()) {
        std::string cur = q.front();
        q.pop_front();
        for (const auto& e : kg.edges) {
            std::string next;
            if (e.from == cur)
                next = e.to;
            else if (!directed && e.to == cur)
                next = e.from;
            else
                continue;
            if (dist.count(next)) continue;
            dist[next] = dist[cur] + 1;
            if (next == to) return dist[next];
            q.push_back(next);
        }
    }
    return -1;
}

}  // namespace

int task_depth(const KnowledgeGraph& kg, const std::string& concept_id) {
    if (!kg.find(concept_id)) throw UnknownNode(concept_id);
    const int d = bfs_hops(kg, kg.root, concept_id, /*directed=*/true);
    if (d < 0) throw Unreachable(concept_id);
    return d;
}

std::vector<std::string> concept_set(const KnowledgeGraph& kg, const std::string& node_id) {
    std::vector<std::string> out;
    for (const auto& e : kg.edges) {
        if (e.from != node_id) continue;
        if (e.relation == KgRelation::HasTool) continue;
        const KgNode* t = kg.find(e.to);
        if (t && t->kind == KgKind::Concept) out.push_back(e.to);
    }
    return out;
}

namespace {

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    if (sa.empty() && sb.empty()) return 0.0;
    size_t inter = 0;
    for (const auto& x : sa) inter += sb.count(x);
    const size_t uni = sa.size() + sb.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

}  // namespace

MismatchVector mismatch_vector(const KnowledgeGraph& kg, const AgentNode& agent,
                               const TaskProfile& task, const std::vector<HistoryEntry>& history,
                               const KnowledgeParams& params) {
    const KgNode* agent_node = kg.find(agent.id);
    if (!agent_node || agent_node->kind != KgKind::Agent) throw UnknownAgent(agent.id);

    MismatchVector psi;

    // psi1: capability gap from concept overlap + embedding similarity
    const std::vector<std::string> agent_concepts = concept_set(kg, agent.id);
    const std::vector<std::string> task_concepts =
        task.primary_concept.empty() ? std::vector<std::string>{}
                                     : std::vector<std::string>{task.primary_concept};
    const double sim = cosine(agent_node->embedding, task.embedding);
    psi.psi1 = 1.0 - clamp01(0.5 * jaccard(agent_concepts, task_concepts) + 0.5 * sim);

    // psi2: structural effort, undirected hops agent -> task concept
    if (task.primary_concept.empty()) {
        psi.psi2 = 1.0;
    } else {
        const int hops = bfs_hops(kg, agent.id, task.primary_concept, /*directed=*/false);
        psi.psi2 = hops < 0 ? 1.0
                            : std::min(1.0, static_cast<double>(hops) /
                                                static_cast<double>(params.max_depth));
    }

    // psi3: failure rate on similar past tasks; no evidence reads as failure
    int similar = 0, succeeded = 0;
    for (const auto& h : history) {
        if (cosine(h.task_embedding, task.embedding) >= params.similarity_threshold) {
            similar++;
            if (h.success) succeeded++;
        }
    }
    psi.psi3 = similar == 0
                   ? 1.0
                   : 1.0 - static_cast<double>(succeeded) / static_cast<double>(similar);

    // psi4: is the agent's tool linked to the task concept?
    psi.psi4 = 1.0;
    if (agent.tool_ref && !task.primary_concept.empty()) {
        for (const auto& e : kg.edges) {
            if (e.from != task.primary_concept) continue;
            if (e.relation != KgRelation::HasTool && e.relation != KgRelation::RequiresSkill)
                continue;
            const KgNode* t = kg.find(e.to);
            if (t && (t->id == *agent.tool_ref || t->label == *agent.tool_ref)) {
                psi.psi4 = 0.0;
                break;
            }
        }
    }
    return psi;
}

double knowledge_distance(int depth, const MismatchVector& psi,
                          const std::array<double, 4>& weights) {
    double sum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw BadWeights();
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw BadWeights();
    const double blend = weights[0] * psi.psi1 + weights[1] * psi.psi2 + weights[2] * psi.psi3 +
                         weights[3] * psi.psi4;
    return std::log(1.0 + static_cast<double>(depth)) * blend;
}

KnowledgeGraph kg_from_json(const nlohmann::json& doc) {
    KnowledgeGraph kg;
    try {
        kg.root = doc.at("root").get<std::string>();
        for (const auto& jn : doc.at("nodes")) {
            KgNode n;
            n.id = jn.at("id").get<std::string>();
            n.kind = kg_kind_from_string(jn.at("kind").get<std::string>());
            n.label = jn.at("label").get<std::string>();
            n.embedding = embed_text(n.label);
            kg.nodes.push_back(n);
        }
        for (const auto& je : doc.at("edges")) {
            KgEdge e;
            e.from = je.at("from").get<std::string>();
            e.to = je.at("to").get<std::string>();
            e.relation = kg_relation_from_string(je.at("relation").get<std::string>());
            kg.edges.push_back(e);
        }
    } catch (const nlohmann::json::exception& ex) {
        throw SchemaMismatch(std::string("bad knowledge graph document: ") + ex.what());
    }
    return kg;
}

KnowledgeGraph load_knowledge_graph(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open knowledge graph file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& ex) {
        throw SchemaMismatch(std::string("bad knowledge graph file: ") + ex.what());
    }
    return kg_from_json(doc);
}

TaskProfile profile_task(const KnowledgeGraph* kg, const std::string& instruction,
                         const KnowledgeParams& params) {
    TaskProfile p;
    p.instruction = instruction;
    p.embedding = embed_text(instruction);
    if (!kg) return p;

    double best = -1.0;
    for (const auto& n : kg->nodes) {
        if (n.kind != KgKind::Concept) continue;
        const double sim = cosine(n.embedding, p.embedding);
        if (sim > best) {
            best = sim;
            p.primary_concept = n.id;
        }
    }
    if (p.primary_concept.empty()) return p;
    try {
        p.depth = task_depth(*kg, p.primary_concept);
    } catch (const Unreachable&) {
        p.depth = params.max_depth;
    }
    return p;
}

}  // namespace hiva
