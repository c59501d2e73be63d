#include "hiva/engine.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

namespace hiva {

namespace {

void apply_routing(const nlohmann::json& j, RoutingParams& p) {
    p.lambda = j.value("lambda", p.lambda);
    p.eta = j.value("eta", p.eta);
    p.delta = j.value("delta", p.delta);
    p.kappa = j.value("kappa", p.kappa);
    p.top_k = j.value("top_k", p.top_k);
    p.prune_threshold = j.value("prune_threshold", p.prune_threshold);
    p.synergy_rate = j.value("synergy_rate", p.synergy_rate);
    if (j.contains("weights")) {
        const auto w = j.at("weights").get<std::vector<double>>();
        if (w.size() != 4) throw ConfigError("routing.weights must have 4 entries");
        std::copy(w.begin(), w.end(), p.weights.begin());
    }
    if (j.value("paper_decay", false)) p.kappa = RoutingParams::paper_decay().kappa;
    if (p.top_k < 1) throw ConfigError("routing.top_k must be >= 1");
}

}  // namespace

RunConfig config_from_json(const nlohmann::json& doc) {
    RunConfig c;
    try {
        c.iterations = doc.value("iterations", c.iterations);
        c.seed = doc.value("seed", c.seed);
        c.tasks_path = doc.value("tasks_path", c.tasks_path);
        c.kg_path = doc.value("kg_path", c.kg_path);
        c.tools_path = doc.value("tools_path", c.tools_path);
        c.output_dir = doc.value("output_dir", c.output_dir);
        c.task_loop = doc.value("task_loop", c.task_loop);
        c.parallelizability = doc.value("parallelizability", c.parallelizability);
        c.price_per_kilotoken = doc.value("price_per_kilotoken", c.price_per_kilotoken);
        c.source_prompt = doc.value("source_prompt", c.source_prompt);
        c.aggregator_prompt = doc.value("aggregator_prompt", c.aggregator_prompt);
        if (doc.contains("routing")) apply_routing(doc.at("routing"), c.routing);
        if (doc.contains("knowledge")) {
            const auto& k = doc.at("knowledge");
            c.knowledge.similarity_threshold =
                k.value("similarity_threshold", c.knowledge.similarity_threshold);
            c.knowledge.max_depth = k.value("max_depth", c.knowledge.max_depth);
        }
        if (doc.contains("backend")) {
            const auto& b = doc.at("backend");
            c.backend.mode = b.value("mode", c.backend.mode);
            c.backend.script_path = b.value("script_path", c.backend.script_path);
            c.backend.base_url = b.value("base_url", c.backend.base_url);
            c.backend.model = b.value("model", c.backend.model);
            c.backend.policy.max_retries =
                b.value("max_retries", c.backend.policy.max_retries);
            c.backend.policy.timeout =
                std::chrono::milliseconds(b.value("timeout_ms", c.backend.policy.timeout.count()));
            c.backend.policy.backoff =
                std::chrono::milliseconds(b.value("backoff_ms", c.backend.policy.backoff.count()));
        }
        if (doc.contains("sandbox")) {
            const auto& s = doc.at("sandbox");
            c.sandbox.timeout = std::chrono::milliseconds(
                s.value("timeout_ms", c.sandbox.timeout.count()));
            c.sandbox.max_retries = s.value("max_retries", c.sandbox.max_retries);
            c.sandbox.interpreter = s.value("interpreter", c.sandbox.interpreter);
            if (s.contains("denylist")) {
                c.sandbox.denylist.clear();
                for (const auto& m : s.at("denylist"))
                    c.sandbox.denylist.insert(m.get<std::string>());
            }
        }
        c.sandbox.interpreter = doc.value("interpreter_cmd", c.sandbox.interpreter);
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(std::string("bad config: ") + ex.what());
    }
    if (c.iterations < 0) throw ConfigError("iterations must be >= 0");
    if (c.backend.mode != "scripted" && c.backend.mode != "live")
        throw ConfigError("backend.mode must be 'scripted' or 'live'");
    if (c.backend.mode == "scripted" && c.backend.script_path.empty())
        throw ConfigError("scripted backend requires backend.script_path");
    if (c.backend.mode == "live" && (c.backend.base_url.empty() || c.backend.model.empty()))
        throw ConfigError("live backend requires backend.base_url and backend.model");
    if (c.task_loop != "per_task" && c.task_loop != "round_robin")
        throw ConfigError("task_loop must be 'per_task' or 'round_robin'");
    if (c.tasks_path.empty()) throw ConfigError("tasks_path is required");
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(std::string("config is not valid JSON: ") + ex.what());
    }
    return config_from_json(doc);
}

nlohmann::json default_config_json() {
    const RunConfig c;
    return nlohmann::json{
        {"iterations", c.iterations},
        {"seed", c.seed},
        {"tasks_path", "tasks.jsonl"},
        {"kg_path", ""},
        {"output_dir", c.output_dir},
        {"task_loop", c.task_loop},
        {"interpreter_cmd", c.sandbox.interpreter},
        {"parallelizability", c.parallelizability},
        {"price_per_kilotoken", c.price_per_kilotoken},
        {"routing",
         {{"lambda", c.routing.lambda},
          {"eta", c.routing.eta},
          {"delta", c.routing.delta},
          {"kappa", c.routing.kappa},
          {"top_k", c.routing.top_k},
          {"prune_threshold", c.routing.prune_threshold},
          {"synergy_rate", c.routing.synergy_rate},
          {"weights", c.routing.weights}}},
        {"knowledge",
         {{"similarity_threshold", c.knowledge.similarity_threshold},
          {"max_depth", c.knowledge.max_depth}}},
        {"backend",
         {{"mode", "scripted"},
          {"script_path", "backend_script.json"},
          {"base_url", ""},
          {"model", ""},
          {"max_retries", c.backend.policy.max_retries},
          {"timeout_ms", c.backend.policy.timeout.count()},
          {"backoff_ms", c.backend.policy.backoff.count()}}},
        {"sandbox",
         {{"timeout_ms", c.sandbox.timeout.count()},
          {"max_retries", c.sandbox.max_retries},
          {"interpreter", c.sandbox.interpreter},
          {"denylist", std::vector<std::string>(c.sandbox.denylist.begin(),
                                                c.sandbox.denylist.end())}}}};
}

RunMetrics compute_metrics(const std::vector<Outcome>& outcomes, long llm_calls,
                           double estimated_cost) {
    RunMetrics m;
    m.llm_calls = llm_calls;
    m.estimated_cost = estimated_cost;
    if (outcomes.empty()) {
        m.empty_outcomes = true;
    } else {
        double hits = 0.0;
        for (const auto& o : outcomes) hits += o.success ? 1.0 : 0.0;
        m.accuracy = hits / static_cast<double>(outcomes.size());
    }
    m.cost_efficiency = m.accuracy * 100.0 / (estimated_cost + 0.01);
    return m;
}

void save_state(const AgentGraph& graph, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write state file: " + path);
    out << nlohmann::json{{"schema_version", 1}, {"graph", graph_to_json(graph)}}.dump(2)
        << "\n";
}

AgentGraph load_state(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open state file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& ex) {
        throw SchemaMismatch(std::string("state file is not valid JSON: ") + ex.what());
    }
    if (!doc.contains("schema_version") || !doc.at("schema_version").is_number_integer())
        throw SchemaMismatch("state file has no schema_version");
    const int version = doc.at("schema_version").get<int>();
    if (version != 1)
        throw SchemaMismatch("unsupported state schema_version " + std::to_string(version) +
                             " (expected 1)");
    if (!doc.contains("graph")) throw SchemaMismatch("state file has no graph document");
    return graph_from_json(doc.at("graph"));
}

namespace {

// counts every request actually sent and sizes them for cost estimation
class CountingBackend : public LlmBackend {
public:
    explicit CountingBackend(LlmBackend& inner) : inner_(inner) {}

    std::string complete_once(const ChatRequest& req) override {
        calls_++;
        chars_ += static_cast<long>(req.system.size() + req.user.size());
        const std::string resp = inner_.complete_once(req);
        chars_ += static_cast<long>(resp.size());
        return resp;
    }

    long calls() const { return calls_; }
    double estimated_cost(double price_per_kilotoken) const {
        // chars/4 per token, priced per kilotoken
        return static_cast<double>(chars_) / 4.0 / 1000.0 * price_per_kilotoken;
    }

private:
    LlmBackend& inner_;
    long calls_ = 0;
    long chars_ = 0;
};

MismatchVector fallback_mismatch(const AgentNode& node, const TaskProfile& profile,
                                 const std::vector<HistoryEntry>& history,
                                 const KnowledgeParams& kparams) {
    // agents outside the knowledge graph: embedding affinity plus history,
    // structure and tooling unknown (worst case)
    MismatchVector psi;
    double sim = 0.0;
    try {
        sim = cosine(embed_text(node.system_prompt), profile.embedding);
    } catch (const EmptyText&) {
    }
    psi.psi1 = 1.0 - std::min(1.0, std::max(0.0, 0.5 * sim));
    psi.psi2 = 1.0;
    int similar = 0, succeeded = 0;
    for (const auto& h : history) {
        if (cosine(h.task_embedding, profile.embedding) >= kparams.similarity_threshold) {
            similar++;
            if (h.success) succeeded++;
        }
    }
    psi.psi3 = similar == 0
                   ? 1.0
                   : 1.0 - static_cast<double>(succeeded) / static_cast<double>(similar);
    psi.psi4 = 1.0;
    return psi;
}

std::string trace_filename(int n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "trace_%06d.json", n);
    return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

}  // namespace

RunResult run_optimization(const RunConfig& config) {
    namespace fs = std::filesystem;

    const std::vector<Task> tasks = load_tasks(config.tasks_path);

    std::optional<KnowledgeGraph> kg;
    if (!config.kg_path.empty()) kg = load_knowledge_graph(config.kg_path);

    ToolRegistry tools;
    if (!config.tools_path.empty()) tools = ToolRegistry::load(config.tools_path);

    std::unique_ptr<LlmBackend> owned;
    if (config.backend.mode == "scripted") {
        owned = std::make_unique<ScriptedBackend>(
            ScriptedBackend::from_file(config.backend.script_path));
    } else {
        owned = std::make_unique<HttpBackend>(config.backend.base_url, config.backend.model,
                                              config.backend.policy.timeout);
    }
    CountingBackend backend(*owned);

    fs::create_directories(config.output_dir);
    std::ofstream evolution_log(fs::path(config.output_dir) / "evolution.jsonl");
    if (!evolution_log) throw IoError("cannot write evolution log in " + config.output_dir);

    AgentGraph graph = make_initial_graph(config.source_prompt, config.aggregator_prompt);
    Rng rng(config.seed);
    std::map<NodeId, std::vector<HistoryEntry>> history;
    std::map<std::string, Outcome> last_outcome;  // per task id
    int trace_counter = 0;

    const auto make_dist = [&](const TaskProfile& profile) -> DistanceFn {
        if (!kg) return {};  // depth 0 zeroes the distance anyway
        return [&, profile](const NodeId& id) -> double {
            const AgentNode* node = graph.find(id);
            if (!node) return 0.0;
            const auto& h = history[id];
            MismatchVector psi;
            try {
                psi = mismatch_vector(*kg, *node, profile, h, config.knowledge);
            } catch (const UnknownAgent&) {
                psi = fallback_mismatch(*node, profile, h, config.knowledge);
            }
            return knowledge_distance(profile.depth, psi, config.routing.weights);
        };
    };

    // one forward pass over `target`; writes the trace file
    const auto run_forward = [&](AgentGraph& target, const Task& task,
                                 const TaskProfile& profile) -> std::pair<ForwardResult, int> {
        ForwardContext fctx{backend, config.backend.policy, &tools, config.sandbox,
                            make_dist(profile)};
        const int at_iteration = target.iteration;
        ForwardResult fr = forward_pass(target, task, fctx, config.routing, rng);
        trace_counter++;
        write_text(fs::path(config.output_dir) / trace_filename(trace_counter),
                   trace_to_json(fr.trace, at_iteration, fr.final_output).dump(2) + "\n");
        return {std::move(fr), at_iteration};
    };

    const auto record_history = [&](const ExecutionTrace& trace, const TaskProfile& profile,
                                    bool success) {
        for (const auto& id : trace.activated)
            history[id].push_back({profile.embedding, success});
    };

    const auto run_iteration = [&](const Task& task) {
        const TaskProfile profile =
            profile_task(kg ? &*kg : nullptr, task.instruction, config.knowledge);
        auto [fr, at_iteration] = run_forward(graph, task, profile);
        const LossSignal loss =
            compute_loss(task, fr.final_output, backend, config.backend.policy, config.sandbox);

        BackwardContext bctx{backend,
                             config.backend.policy,
                             &tools,
                             config.sandbox,
                             kg ? &*kg : nullptr,
                             &profile,
                             config.parallelizability};
        BackwardResult br = backward_pass(graph, fr.trace, loss, bctx, config.routing);
        graph = std::move(br.graph);

        for (const auto& rec : br.records) {
            evolution_log << nlohmann::json{{"iteration", at_iteration},
                                            {"node", rec.node},
                                            {"action", rec.action},
                                            {"reward", rec.reward},
                                            {"prompt_changed", rec.prompt_changed},
                                            {"tool_changed", rec.tool_changed}}
                                 .dump()
                          << "\n";
        }
        record_history(fr.trace, profile, loss.outcome.success);
        last_outcome[task.id] = loss.outcome;
        save_state(graph, (fs::path(config.output_dir) / "state.json").string());
    };

    // evaluation-only pass on a scratch copy; the evolving graph stays as-is
    const auto run_eval_only = [&](const Task& task) {
        const TaskProfile profile =
            profile_task(kg ? &*kg : nullptr, task.instruction, config.knowledge);
        AgentGraph scratch = graph;
        auto [fr, at_iteration] = run_forward(scratch, task, profile);
        (void)at_iteration;
        Outcome o;
        try {
            o = evaluate(task, fr.final_output, config.sandbox);
        } catch (const NoNumberFound&) {
            o.feedback = "The output contained no numeric answer.";
        }
        record_history(fr.trace, profile, o.success);
        last_outcome[task.id] = o;
        save_state(graph, (fs::path(config.output_dir) / "state.json").string());
    };

    const auto with_context = [](int iteration, const std::string& task_id, const auto& fn) {
        try {
            fn();
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& ex) {
            throw Error("iteration " + std::to_string(iteration) + ", task '" + task_id +
                        "': " + ex.what());
        }
    };

    if (config.iterations == 0) {
        for (const auto& task : tasks)
            with_context(0, task.id, [&] { run_eval_only(task); });
    } else if (config.task_loop == "per_task") {
        for (const auto& task : tasks)
            for (int t = 0; t < config.iterations; ++t)
                with_context(graph.iteration, task.id, [&] { run_iteration(task); });
    } else {
        for (int t = 0; t < config.iterations; ++t)
            for (const auto& task : tasks)
                with_context(graph.iteration, task.id, [&] { run_iteration(task); });
    }

    std::vector<Outcome> outcomes;
    for (const auto& task : tasks)
        if (last_outcome.count(task.id)) outcomes.push_back(last_outcome.at(task.id));

    RunResult result;
    result.graph = graph;
    result.metrics = compute_metrics(outcomes, backend.calls(),
                                     backend.estimated_cost(config.price_per_kilotoken));

    nlohmann::json metrics_doc{{"accuracy", result.metrics.accuracy},
                               {"cost_efficiency", result.metrics.cost_efficiency},
                               {"llm_calls", result.metrics.llm_calls},
                               {"estimated_cost", result.metrics.estimated_cost}};
    write_text(fs::path(config.output_dir) / "metrics.json", metrics_doc.dump(2) + "\n");

    if (!tools.entries().empty())
        tools.save((fs::path(config.output_dir) / "tools.json").string());

    return result;
}

}  // namespace hiva
