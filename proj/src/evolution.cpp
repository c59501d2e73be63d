#include "hiva/evolution.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

namespace hiva {

LossSignal compute_loss(const Task& task, const std::string& final_output, LlmBackend& llm,
                        const BackendPolicy& policy, const ExecutionPolicy& sandbox) {
    LossSignal loss;
    try {
        loss.outcome = evaluate(task, final_output, sandbox);
    } catch (const NoNumberFound&) {
        loss.outcome.success = false;
        loss.outcome.score = 0.0;
        loss.outcome.feedback = "The output contained no numeric answer.";
    }
    if (loss.outcome.success) {
        loss.gradient_seed = "SATISFACTORY";
        return loss;
    }
    const ChatRequest req =
        render_template(TemplateId::GlobalGradient,
                        {{"final_result", final_output},
                         {"environment_feedback", loss.outcome.feedback}});
    loss.gradient_seed = complete(llm, req, policy);
    return loss;
}

TextualGradient seed_gradient(const NodeId& aggregator, const std::string& seed) {
    TextualGradient g;
    g.target = aggregator;
    g.overall_feedback = seed;
    return g;
}

namespace {

std::string gradient_summary(const TextualGradient& g) {
    std::string s;
    for (const std::string* part :
         {&g.system_prompt_feedback, &g.tool_feedback, &g.overall_feedback}) {
        if (part->empty()) continue;
        if (!s.empty()) s += " ";
        s += *part;
    }
    return s;
}

}  // namespace

TextualGradient local_gradient(LlmBackend& llm, const BackendPolicy& policy,
                               const AgentNode& node,
                               const std::vector<TextualGradient>& successor_grads,
                               const std::string& y_i) {
    (void)y_i;  // the published feedback template carries only role + feedback
    std::string combined;
    for (const auto& g : successor_grads) {
        if (!combined.empty()) combined += "\n";
        combined += "Agent " + g.target + ": " + gradient_summary(g);
    }
    const ChatRequest req = render_template(
        TemplateId::AgentFeedback,
        {{"system_prompt", node.system_prompt}, {"combined_feedback", combined}});
    const FeedbackSections sections = parse_sections(complete(llm, req, policy));
    TextualGradient grad;
    grad.target = node.id;
    grad.system_prompt_feedback = sections.system_prompt_feedback;
    grad.tool_feedback = sections.tool_feedback;
    grad.overall_feedback = sections.overall_feedback;
    return grad;
}

SemanticUpdateResult semantic_update(LlmBackend& llm, const BackendPolicy& policy,
                                     const AgentNode& node, const TextualGradient& gradient,
                                     ToolRegistry* tools, const ExecutionPolicy& tool_policy) {
    SemanticUpdateResult result;
    result.node = node;
    bool reask_spent = false;

    // prompt update takes precedence over tool refinement
    if (!gradient.system_prompt_feedback.empty()) {
        ChatRequest req = render_template(
            TemplateId::PromptUpdate,
            {{"system_prompt", node.system_prompt},
             {"system_prompt_feedback", gradient.system_prompt_feedback}});
        std::string improved;
        try {
            improved = parse_tagged(complete(llm, req, policy), "IMPROVED_VARIABLE");
        } catch (const TagNotFound&) {
            reask_spent = true;
            req.user += "\nRespond only with the improved prompt inside "
                        "<IMPROVED_VARIABLE></IMPROVED_VARIABLE> tags.";
            try {
                improved = parse_tagged(complete(llm, req, policy), "IMPROVED_VARIABLE");
            } catch (const TagNotFound&) {
                improved.clear();  // keep the old prompt
            }
        }
        if (!improved.empty() && improved != node.system_prompt) {
            result.node.system_prompt = improved;
            result.prompt_changed = true;
        }
    }

    if (!gradient.tool_feedback.empty() && node.tool_ref && tools && !reask_spent) {
        ToolSchema current;
        try {
            current = tools->latest(*node.tool_ref);
        } catch (const UnknownTool&) {
            return result;  // dangling tool_ref; nothing to refine
        }
        try {
            tools->register_tool(
                refine_tool(llm, policy, current, gradient.tool_feedback, tool_policy));
            result.tool_changed = true;
        } catch (const NoCodeBlock&) {
            // one re-ask with an explicit format reminder
            try {
                tools->register_tool(refine_tool(
                    llm, policy, current,
                    gradient.tool_feedback + "\nReturn only a fenced python code block.",
                    tool_policy));
                result.tool_changed = true;
            } catch (const Error&) {
            }
        } catch (const Error&) {
            // EntryPointChanged / RestrictedImport: drop the refinement
        }
    }
    return result;
}

namespace {

// first occurrence of any option verb; payload is the rest of its line
bool parse_action(const std::string& text, TopologyAction& out) {
    struct Verb {
        const char* token;
        int kind;
    };
    static const Verb verbs[] = {{"ADD_PARALLEL:", 0},
                                 {"ADD_SERIAL:", 1},
                                 {"REMOVE_SUCCESSOR:", 2},
                                 {"NO_CHANGE:", 3}};
    size_t best = std::string::npos;
    int kind = -1;
    size_t token_len = 0;
    for (const auto& v : verbs) {
        const size_t p = text.find(v.token);
        if (p != std::string::npos && p < best) {
            best = p;
            kind = v.kind;
            token_len = std::string(v.token).size();
        }
    }
    if (kind < 0) return false;
    size_t end = text.find('\n', best);
    if (end == std::string::npos) end = text.size();
    std::string payload = text.substr(best + token_len, end - best - token_len);
    const size_t b = payload.find_first_not_of(" \t");
    const size_t e = payload.find_last_not_of(" \t\r");
    payload = b == std::string::npos ? "" : payload.substr(b, e - b + 1);
    switch (kind) {
        case 0: out = AddParallel{payload}; break;
        case 1: out = AddSerial{payload}; break;
        case 2: out = RemoveSuccessor{payload}; break;
        default: out = NoChange{payload}; break;
    }
    return true;
}

}  // namespace

TopologyAction decide_topology(LlmBackend& llm, const BackendPolicy& policy,
                               const AgentNode& node, const TextualGradient& gradient,
                               int successor_count, double parallelizability) {
    const std::string feedback = gradient.overall_feedback.empty()
                                     ? gradient_summary(gradient)
                                     : gradient.overall_feedback;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", parallelizability);
    ChatRequest req = render_template(TemplateId::TopologyDecision,
                                      {{"system_prompt", node.system_prompt},
                                       {"feedback", feedback},
                                       {"successor_count", std::to_string(successor_count)},
                                       {"parallelizability", buf}});
    TopologyAction action = NoChange{"unparseable topology decision"};
    if (!parse_action(complete(llm, req, policy), action)) {
        req.user += "\nRespond with exactly one option line.";
        parse_action(complete(llm, req, policy), action);
    }
    const bool is_add = std::holds_alternative<AddParallel>(action) ||
                        std::holds_alternative<AddSerial>(action);
    if (is_add && successor_count >= kMaxSuccessors)
        return NoChange{"successor limit reached"};
    return action;
}

std::string describe(const TopologyAction& action) {
    if (const auto* nc = std::get_if<NoChange>(&action))
        return nc->reason.empty() ? "no_change" : "no_change: " + nc->reason;
    if (const auto* ap = std::get_if<AddParallel>(&action)) return "add_parallel: " + ap->description;
    if (const auto* as = std::get_if<AddSerial>(&action)) return "add_serial: " + as->description;
    return "remove_successor: " + std::get<RemoveSuccessor>(action).successor;
}

namespace {

bool word_at(const std::string& text, size_t pos, size_t len) {
    const auto boundary = [&](size_t i) {
        return !(std::isalnum(static_cast<unsigned char>(text[i])) || text[i] == '_');
    };
    if (pos > 0 && !boundary(pos - 1)) return false;
    if (pos + len < text.size() && !boundary(pos + len)) return false;
    return true;
}

}  // namespace

int extract_reward(LlmBackend& llm, const BackendPolicy& policy,
                   const TextualGradient& gradient) {
    const std::string feedback = gradient.overall_feedback.empty()
                                     ? gradient_summary(gradient)
                                     : gradient.overall_feedback;
    const ChatRequest req =
        render_template(TemplateId::SentimentReward, {{"feedback", feedback}});
    const std::string resp = complete(llm, req, policy);

    struct Label {
        const char* word;
        int reward;
    };
    static const Label labels[] = {{"POSITIVE", 1}, {"NEUTRAL", 1}, {"CRITICAL", 0}};
    size_t best = std::string::npos;
    int reward = 0;  // unparseable reads as failure, conservatively
    for (const auto& l : labels) {
        const std::string w = l.word;
        size_t p = resp.find(w);
        while (p != std::string::npos && !word_at(resp, p, w.size()))
            p = resp.find(w, p + 1);
        if (p != std::string::npos && p < best) {
            best = p;
            reward = l.reward;
        }
    }
    return reward;
}

BackwardResult backward_pass(const AgentGraph& graph, const ExecutionTrace& trace,
                             const LossSignal& loss, BackwardContext& ctx,
                             const RoutingParams& params) {
    AgentGraph g = graph;  // the caller's graph stays intact if we throw
    BackwardResult result;
    const bool success = loss.outcome.success;

    const std::set<NodeId> activated(trace.activated.begin(), trace.activated.end());
    std::map<NodeId, TextualGradient> grads;
    std::map<NodeId, int> rewards;

    grads[g.aggregator] = seed_gradient(g.aggregator, loss.gradient_seed);

    // the aggregator's broadcast to its predecessors: one SystemFeedback
    // completion, skipped entirely on success
    std::string agg_broadcast;
    if (!success) {
        const std::string final_output =
            trace.outputs.count(g.aggregator) ? trace.outputs.at(g.aggregator) : "";
        ChatRequest req = render_template(TemplateId::SystemFeedback,
                                          {{"aggregator_id", g.aggregator},
                                           {"loss_grad", loss.gradient_seed},
                                           {"final_result", final_output}});
        try {
            agg_broadcast = parse_tagged(complete(ctx.llm, req, ctx.backend_policy), "FEEDBACK");
        } catch (const TagNotFound&) {
            req.user += "\nRespond only in the required format.";
            const std::string retry = complete(ctx.llm, req, ctx.backend_policy);
            try {
                agg_broadcast = parse_tagged(retry, "FEEDBACK");
            } catch (const TagNotFound&) {
                agg_broadcast = retry;  // fall back to the raw completion
            }
        }
        rewards[g.aggregator] =
            extract_reward(ctx.llm, ctx.backend_policy, grads.at(g.aggregator));
    } else {
        rewards[g.aggregator] = 1;
    }
    result.records.push_back(
        {g.aggregator, "no_change", rewards.at(g.aggregator), false, false});

    std::vector<NodeId> order = trace.activated;
    std::reverse(order.begin(), order.end());

    for (const NodeId& id : order) {
        if (id == g.aggregator) continue;
        if (success) {
            rewards[id] = 1;
            result.records.push_back({id, "no_change", 1, false, false});
            continue;
        }
        const AgentNode executed = graph.at(id);  // semantics as they ran

        std::vector<TextualGradient> succ_grads;
        for (const auto& [from, to] : trace.routed_edges) {
            if (from != id) continue;
            if (to == g.aggregator) {
                TextualGradient t;
                t.target = g.aggregator;
                t.overall_feedback = agg_broadcast;
                succ_grads.push_back(t);
            } else if (grads.count(to)) {
                succ_grads.push_back(grads.at(to));
            }
        }

        const TextualGradient grad = local_gradient(ctx.llm, ctx.backend_policy, executed,
                                                    succ_grads, trace.outputs.at(id));
        grads[id] = grad;
        rewards[id] = extract_reward(ctx.llm, ctx.backend_policy, grad);

        // f_P
        const SemanticUpdateResult upd =
            semantic_update(ctx.llm, ctx.backend_policy, executed, grad, ctx.tools,
                            ctx.tool_policy);
        if (upd.prompt_changed)
            if (AgentNode* live = g.find(id)) live->system_prompt = upd.node.system_prompt;

        // f_G on the evolving graph; a rejected action reads as no change
        TopologyAction action =
            decide_topology(ctx.llm, ctx.backend_policy, g.at(id), grad,
                            static_cast<int>(g.out_degree(id)), ctx.parallelizability);
        try {
            g = apply_topology_action(g, id, action);
        } catch (const WouldCreateCycle&) {
            action = NoChange{"rejected: would create a cycle"};
        } catch (const UnknownNode&) {
            action = NoChange{"rejected: unknown successor"};
        }
        result.records.push_back(
            {id, describe(action), rewards.at(id), upd.prompt_changed, upd.tool_changed});
    }

    // belief updates: activated nodes carry the reward indicator, idle nodes
    // decay; nodes born this pass keep their fresh priors
    for (auto& node : g.nodes) {
        if (node.created_at == g.iteration && !activated.count(node.id)) continue;
        RewardSignal sig;
        sig.agent = node.id;
        sig.delta_t = 1.0;
        sig.selected = activated.count(node.id) > 0;
        if (sig.selected) {
            sig.value = rewards.count(node.id) ? rewards.at(node.id) : (success ? 1 : 0);
            const AgentNode* executed = graph.find(node.id);
            if (ctx.profile) {
                double rho = 1.0;
                if (ctx.kg) {
                    const std::vector<std::string> agent_concepts =
                        concept_set(*ctx.kg, node.id);
                    std::set<std::string> task_concepts;
                    if (!ctx.profile->primary_concept.empty())
                        task_concepts.insert(ctx.profile->primary_concept);
                    size_t inter = 0;
                    std::set<std::string> uni(task_concepts);
                    for (const auto& c : agent_concepts) {
                        if (task_concepts.count(c)) ++inter;
                        uni.insert(c);
                    }
                    rho = uni.empty() ? 0.0
                                      : static_cast<double>(inter) /
                                            static_cast<double>(uni.size());
                }
                const auto [km, kd] =
                    knowledge_match(executed ? *executed : node, *ctx.profile, rho);
                sig.km = km;
                sig.kd = kd;
            }
        }
        node = update_beliefs(node, sig, params);
    }

    // synergy and per-edge performance on the routes actually taken
    for (const auto& [from, to] : trace.routed_edges) {
        EdgeState* e = g.find_edge(from, to);
        if (!e) continue;  // pruned or removed by f_G this pass
        const int contribution = rewards.count(to) ? rewards.at(to) : (success ? 1 : 0);
        *e = update_synergy(*e, contribution, params);
        e->attempts++;
        e->successes += contribution;
        e->edge_alpha += contribution;
        e->edge_beta += 1 - contribution;
    }

    g = repair_topology(g, params.prune_threshold);
    g.iteration++;
    result.graph = std::move(g);
    return result;
}

}  // namespace hiva
