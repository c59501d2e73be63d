#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hiva/environment.hpp"
#include "hiva/evolution.hpp"
#include "hiva/execution.hpp"
#include "hiva/graph.hpp"
#include "hiva/knowledge.hpp"
#include "hiva/llm.hpp"
#include "hiva/routing.hpp"
#include "hiva/tools.hpp"

namespace hiva {

struct BackendConfig {
    std::string mode = "scripted";  // "scripted" | "live"
    std::string script_path;        // scripted
    std::string base_url;           // live
    std::string model;              // live
    BackendPolicy policy;
};

struct RunConfig {
    int iterations = 1;
    uint64_t seed = 42;
    RoutingParams routing;
    KnowledgeParams knowledge;
    BackendConfig backend;
    ExecutionPolicy sandbox;
    std::string tasks_path;
    std::string kg_path;            // optional
    std::string tools_path;         // optional, preloaded registry
    std::string output_dir = "hiva_out";
    std::string task_loop = "per_task";  // or "round_robin"
    double parallelizability = 0.5;
    double price_per_kilotoken = 0.0;
    std::string source_prompt = "You are a general problem-solving agent.";
    std::string aggregator_prompt =
        "You are an aggregator agent. Synthesize the collected agent outputs into one final "
        "answer.";
};

RunConfig config_from_json(const nlohmann::json& doc);  // ConfigError on bad values
RunConfig load_config(const std::string& path);
nlohmann::json default_config_json();

struct RunMetrics {
    double accuracy = 0.0;
    double cost_efficiency = 0.0;
    long llm_calls = 0;
    double estimated_cost = 0.0;
    bool empty_outcomes = false;
};

// accuracy = mean success (empty outcome lists flagged and scored 0);
// cost_efficiency = accuracy * 100 / (estimated_cost + 0.01).
RunMetrics compute_metrics(const std::vector<Outcome>& outcomes, long llm_calls,
                           double estimated_cost);

// {"schema_version": 1, "graph": {...}}; load rejects other versions.
void save_state(const AgentGraph& graph, const std::string& path);
AgentGraph load_state(const std::string& path);

struct RunResult {
    AgentGraph graph;
    RunMetrics metrics;
};

// Full optimization run: single evolving graph over the task stream, one
// forward/loss/backward cycle per iteration, per-iteration trace files,
// state.json, evolution.jsonl and metrics.json under output_dir. With
// iterations == 0 each task gets one evaluation-only forward pass.
RunResult run_optimization(const RunConfig& config);

}  // namespace hiva
