#pragma once

#include <array>
#include <string>
#include <vector>

#include "json.hpp"

#include "hiva/errors.hpp"
#include "hiva/graph.hpp"

namespace hiva {

constexpr int kEmbeddingDim = 256;

enum class KgKind { Concept, Agent, Tool };
enum class KgRelation { IsA, RequiresSkill, HasTool };

KgKind kg_kind_from_string(const std::string& s);
std::string to_string(KgKind k);
KgRelation kg_relation_from_string(const std::string& s);
std::string to_string(KgRelation r);

struct KgNode {
    std::string id;
    KgKind kind = KgKind::Concept;
    std::string label;
    std::vector<double> embedding;  // of the label, filled on load
};

struct KgEdge {
    std::string from;
    std::string to;
    KgRelation relation = KgRelation::IsA;
};

struct KnowledgeGraph {
    std::vector<KgNode> nodes;
    std::vector<KgEdge> edges;
    std::string root;

    const KgNode* find(const std::string& id) const;
};

struct TaskProfile {
    std::string instruction;
    std::string primary_concept;  // KG node id; empty when no KG is loaded
    std::vector<double> embedding;
    int depth = 0;  // task_depth of the primary concept
};

struct MismatchVector {
    double psi1 = 0.0;  // capability gap
    double psi2 = 0.0;  // structural effort
    double psi3 = 0.0;  // historical failure
    double psi4 = 0.0;  // missing tool linkage
};

struct HistoryEntry {
    std::vector<double> task_embedding;
    bool success = false;
};

struct KnowledgeParams {
    double similarity_threshold = 0.75;  // "similar task" cutoff for psi3
    int max_depth = 10;                  // psi2 normalization
};

// Deterministic hashed bag-of-tokens embedding, unit L2 norm. Tokens are
// lowercased alphanumeric runs; each token hashes to one of dim buckets.
std::vector<double> embed_text(const std::string& text, int dim = kEmbeddingDim);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

// Shortest directed path length from the KG root to the concept.
int task_depth(const KnowledgeGraph& kg, const std::string& concept_id);

// Concept ids adjacent to a KG node (outgoing is_a / requires_skill edges
// whose target is a Concept).
std::vector<std::string> concept_set(const KnowledgeGraph& kg, const std::string& node_id);

MismatchVector mismatch_vector(const KnowledgeGraph& kg, const AgentNode& agent,
                               const TaskProfile& task, const std::vector<HistoryEntry>& history,
                               const KnowledgeParams& params = {});

// log(1 + depth) * sum_k w_k * psi_k
double knowledge_distance(int depth, const MismatchVector& psi,
                          const std::array<double, 4>& weights);

KnowledgeGraph kg_from_json(const nlohmann::json& doc);
KnowledgeGraph load_knowledge_graph(const std::string& path);

// Builds a profile for one task instruction. With a KG, the primary concept
// is the Concept node whose label embedding is closest to the instruction;
// unreachable concepts fall back to max_depth.
TaskProfile profile_task(const KnowledgeGraph* kg, const std::string& instruction,
                         const KnowledgeParams& params = {});

}  // namespace hiva
