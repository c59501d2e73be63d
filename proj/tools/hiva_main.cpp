#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hiva/engine.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_init(const std::string& output) {
    std::ofstream out(output);
    if (!out) {
        std::cerr << "error: cannot write " << output << "\n";
        return 3;
    }
    out << hiva::default_config_json().dump(2) << "\n";
    std::cout << "wrote default config to " << output << "\n";
    return 0;
}

int cmd_run(const std::string& config_path, int iterations_override, long long seed_override) {
    hiva::RunConfig config = hiva::load_config(config_path);
    if (iterations_override >= 0) config.iterations = iterations_override;
    if (seed_override >= 0) config.seed = static_cast<uint64_t>(seed_override);

    const hiva::RunResult result = hiva::run_optimization(config);

    std::printf("nodes: %zu  edges: %zu  iterations: %d\n", result.graph.nodes.size(),
                result.graph.edges.size(), result.graph.iteration);
    std::printf("accuracy: %.4f%s\n", result.metrics.accuracy,
                result.metrics.empty_outcomes ? " (no outcomes)" : "");
    std::printf("llm_calls: %ld\n", result.metrics.llm_calls);
    std::printf("estimated_cost: %.6f\n", result.metrics.estimated_cost);
    std::printf("cost_efficiency: %.4f\n", result.metrics.cost_efficiency);
    std::printf("outputs in %s\n", config.output_dir.c_str());
    return 0;
}

int cmd_inspect(const std::string& state_path) {
    const hiva::AgentGraph g = hiva::load_state(state_path);
    std::printf("iteration %d, %zu nodes, %zu edges\n", g.iteration, g.nodes.size(),
                g.edges.size());
    std::printf("source: %s  aggregator: %s\n", g.source.c_str(), g.aggregator.c_str());
    for (const auto& n : g.nodes) {
        const double mean = n.alpha / (n.alpha + n.beta);
        const std::string tool = n.tool_ref ? " tool=" + *n.tool_ref : "";
        std::printf("  node %-16s alpha=%.4f beta=%.4f mean=%.4f%s\n", n.id.c_str(), n.alpha,
                    n.beta, mean, tool.c_str());
    }
    for (const auto& e : g.edges) {
        std::printf("  edge %s -> %s  synergy=%.4f usage=%d", e.from.c_str(), e.to.c_str(),
                    e.synergy, e.usage);
        if (e.attempts > 0)
            std::printf(" success_rate=%.3f (%d/%d)",
                        static_cast<double>(e.successes) / e.attempts, e.successes, e.attempts);
        std::printf("\n");
    }
    return 0;
}

int cmd_export_trace(const std::string& run_dir, const std::string& output) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(run_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("trace_", 0) == 0 && name.size() > 5 &&
            name.substr(name.size() - 5) == ".json")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        std::cerr << "error: no trace files in " << run_dir << "\n";
        return 3;
    }
    nlohmann::json combined = nlohmann::json::array();
    for (const auto& f : files) {
        std::ifstream in(f);
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& ex) {
            std::cerr << "error: bad trace file " << f << ": " << ex.what() << "\n";
            return 3;
        }
        combined.push_back(doc);
    }
    if (output.empty() || output == "-") {
        std::cout << combined.dump(2) << "\n";
    } else {
        std::ofstream out(output);
        if (!out) {
            std::cerr << "error: cannot write " << output << "\n";
            return 3;
        }
        out << combined.dump(2) << "\n";
        std::cout << "wrote " << files.size() << " traces to " << output << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"self-evolving multi-agent workflow engine"};
    app.require_subcommand(1);

    std::string init_output = "hiva_config.json";
    auto* init = app.add_subcommand("init", "write a default config file");
    init->add_option("-o,--output", init_output, "where to write the config");

    std::string run_config;
    int run_iterations = -1;
    long long run_seed = -1;
    auto* run = app.add_subcommand("run", "execute an optimization run");
    run->add_option("--config", run_config, "config file (JSON)")->required();
    run->add_option("--iterations", run_iterations, "override iteration count");
    run->add_option("--seed", run_seed, "override rng seed");

    std::string inspect_state;
    auto* inspect = app.add_subcommand("inspect", "print a saved graph summary");
    inspect->add_option("--state", inspect_state, "state file to inspect")->required();

    std::string export_run, export_output;
    auto* export_trace = app.add_subcommand("export-trace", "bundle a run's trace files");
    export_trace->add_option("--run", export_run, "run output directory")->required();
    export_trace->add_option("-o,--output", export_output, "output file ('-' for stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*init) return cmd_init(init_output);
        if (*run) return cmd_run(run_config, run_iterations, run_seed);
        if (*inspect) return cmd_inspect(inspect_state);
        if (*export_trace) return cmd_export_trace(export_run, export_output);
    } catch (const hiva::ConfigError& ex) {
        std::cerr << "config error: " << ex.what() << "\n";
        return 2;
    } catch (const hiva::Error& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 3;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 3;
    }
    return 0;
}
