#include "hiva/execution.hpp"

#include <algorithm>

namespace hiva {

std::string generate_instruction(LlmBackend& llm, const BackendPolicy& policy,
                                 const std::string& pred_input, const std::string& pred_output,
                                 const AgentNode& successor) {
    if (successor.system_prompt.empty()) throw InvalidAgent(successor.id);
    const ChatRequest req =
        render_template(TemplateId::ForwardInstruction,
                        {{"input_instruction", pred_input},
                         {"tool_result", pred_output},
                         {"successor_system_prompt", successor.system_prompt},
                         {"successor_agent_id", successor.id}});
    return complete(llm, req, policy);
}

std::string aggregate(LlmBackend& llm, const BackendPolicy& policy,
                      const std::vector<std::pair<NodeId, std::string>>& inputs,
                      const Task& task) {
    if (inputs.empty()) throw EmptyAggregation();
    std::string combined;
    for (const auto& [id, text] : inputs) {
        combined += "[" + id + "]\n" + text + "\n";
    }
    if (!combined.empty()) combined.pop_back();
    const ChatRequest req = render_template(
        TemplateId::Aggregation, {{"instruction", task.instruction}, {"outputs", combined}});
    return complete(llm, req, policy);
}

ForwardResult forward_pass(AgentGraph& graph, const Task& task, ForwardContext& ctx,
                           const RoutingParams& params, Rng& rng) {
    ForwardResult result;
    ExecutionTrace& trace = result.trace;

    const std::vector<NodeId> order = topological_order(graph);

    trace.inputs[graph.source] = task.instruction;
    std::vector<NodeId> selected_so_far{graph.source};

    for (const NodeId& id : order) {
        if (id == graph.aggregator) continue;  // fused after the loop
        auto in_it = trace.inputs.find(id);
        if (in_it == trace.inputs.end()) continue;  // nothing routed here
        const AgentNode& node = graph.at(id);
        const std::string& x_i = in_it->second;

        // y_i: tool execution when equipped, one completion otherwise
        std::string y_i;
        if (node.tool_ref) {
            if (!ctx.tools) throw UnknownTool(*node.tool_ref + " (no registry; node " + id + ")");
            ToolSchema tool;
            try {
                tool = ctx.tools->latest(*node.tool_ref);
            } catch (const UnknownTool&) {
                throw UnknownTool(*node.tool_ref + " (node " + id + ")");
            }
            bool ok = false;
            try {
                y_i = execute_tool(tool, x_i, ctx.tool_policy).output;
                ok = true;
            } catch (const Error&) {
                ctx.tools->record_attempt(tool.name, tool.version, false);
                throw;
            }
            if (ok) ctx.tools->record_attempt(tool.name, tool.version, true);
        } else {
            if (node.system_prompt.empty()) throw InvalidAgent(id);
            ChatRequest req;
            req.system = node.system_prompt;
            req.user = x_i;
            y_i = complete(ctx.llm, req, ctx.backend_policy);
            trace.llm_calls++;
        }
        trace.activated.push_back(id);
        trace.outputs[id] = y_i;

        // route to successors
        std::vector<NodeId> chosen;
        try {
            chosen = thompson_select(graph, id, selected_so_far, params, rng, ctx.dist);
        } catch (const NoSuccessors&) {
            continue;  // dead end; repair handles these between iterations
        }
        for (const NodeId& next : chosen) {
            EdgeState* edge = graph.find_edge(id, next);
            if (edge) edge->usage++;
            trace.routed_edges.emplace_back(id, next);
            if (std::find(selected_so_far.begin(), selected_so_far.end(), next) ==
                selected_so_far.end())
                selected_so_far.push_back(next);
            if (next == graph.aggregator) {
                trace.aggregate_inputs.insert(id);
                continue;  // the aggregator consumes y_i directly
            }
            const std::string instr =
                generate_instruction(ctx.llm, ctx.backend_policy, x_i, y_i, graph.at(next));
            trace.llm_calls++;
            auto [slot, fresh] = trace.inputs.try_emplace(next, "");
            if (!fresh) slot->second += "\n\n";
            slot->second += "[from " + id + "]\n" + instr;
        }
    }

    if (trace.aggregate_inputs.empty()) throw DisconnectedAggregator();

    // aggregation inputs in topological order of the contributing nodes
    std::vector<std::pair<NodeId, std::string>> agg_inputs;
    for (const NodeId& id : trace.activated)
        if (trace.aggregate_inputs.count(id)) agg_inputs.emplace_back(id, trace.outputs.at(id));

    result.final_output = aggregate(ctx.llm, ctx.backend_policy, agg_inputs, task);
    trace.llm_calls++;
    trace.activated.push_back(graph.aggregator);
    trace.outputs[graph.aggregator] = result.final_output;
    return result;
}

nlohmann::json trace_to_json(const ExecutionTrace& trace, int iteration,
                             const std::string& final_output) {
    nlohmann::json routed = nlohmann::json::array();
    for (const auto& [from, to] : trace.routed_edges)
        routed.push_back({{"from", from}, {"to", to}});
    return nlohmann::json{{"iteration", iteration},
                          {"activated", trace.activated},
                          {"routed_edges", routed},
                          {"llm_calls", trace.llm_calls},
                          {"final", final_output}};
}

}  // namespace hiva
