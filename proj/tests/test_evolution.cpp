#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "hiva/evolution.hpp"

using namespace hiva;

namespace {

BackendPolicy fast_backend() {
    BackendPolicy p;
    p.backoff = std::chrono::milliseconds(0);
    return p;
}

ExecutionPolicy quick_sandbox() {
    ExecutionPolicy p;
    p.max_retries = 0;
    p.timeout = std::chrono::seconds(20);
    return p;
}

Task exact_task(const std::string& expected) {
    Task t;
    t.id = "t1";
    t.instruction = "Answer the question.";
    t.kind = TaskKind::ExactMatch;
    t.expected_text = expected;
    return t;
}

AgentNode plain_node(const std::string& id, const std::string& prompt) {
    AgentNode n;
    n.id = id;
    n.system_prompt = prompt;
    return n;
}

TextualGradient grad_of(const std::string& target, const std::string& spf,
                        const std::string& tf, const std::string& of) {
    TextualGradient g;
    g.target = target;
    g.system_prompt_feedback = spf;
    g.tool_feedback = tf;
    g.overall_feedback = of;
    return g;
}

// trace for the minimal source -> aggregator pass
ExecutionTrace minimal_trace(const AgentGraph& g, const std::string& final_output) {
    ExecutionTrace t;
    t.activated = {g.source, g.aggregator};
    t.inputs[g.source] = "Answer the question.";
    t.outputs[g.source] = "source output";
    t.outputs[g.aggregator] = final_output;
    t.routed_edges = {{g.source, g.aggregator}};
    t.aggregate_inputs = {g.source};
    t.llm_calls = 2;
    return t;
}

const double kDecay = std::exp(-0.1);

}  // namespace

TEST_CASE("a correct answer costs no gradient completion") {
    ScriptedBackend llm;  // no rules: any call would throw
    const LossSignal loss =
        compute_loss(exact_task("Austin"), "austin", llm, fast_backend(), quick_sandbox());
    CHECK(loss.outcome.success);
    CHECK(loss.gradient_seed == "SATISFACTORY");
    CHECK(llm.call_count() == 0);
}

TEST_CASE("a wrong answer is diagnosed once") {
    ScriptedBackend llm;
    llm.set_default("The population figure is stale.");
    const LossSignal loss =
        compute_loss(exact_task("Austin"), "Houston", llm, fast_backend(), quick_sandbox());
    CHECK_FALSE(loss.outcome.success);
    CHECK(loss.gradient_seed == "The population figure is stale.");
    REQUIRE(llm.call_count() == 1);
    const auto calls = llm.calls();
    const ChatRequest& call = calls[0];
    CHECK(call.user.find("FINAL OUTPUT: Houston") != std::string::npos);
    CHECK(call.user.find("ENVIRONMENT FEEDBACK: Expected 'Austin' but observed 'Houston'.") !=
          std::string::npos);
}

TEST_CASE("numberless output on a numeric task still produces a loss") {
    Task t;
    t.id = "n";
    t.instruction = "count";
    t.kind = TaskKind::Numeric;
    t.expected_number = 5;
    ScriptedBackend llm;
    llm.set_default("diagnosis");
    const LossSignal loss = compute_loss(t, "there is no answer", llm, fast_backend());
    CHECK_FALSE(loss.outcome.success);
    CHECK(loss.outcome.feedback == "The output contained no numeric answer.");
    CHECK(loss.gradient_seed == "diagnosis");
}

TEST_CASE("the seed gradient passes through to the aggregator") {
    const TextualGradient g = seed_gradient("aggregator", "Inaccurate population.");
    CHECK(g.target == "aggregator");
    CHECK(g.overall_feedback == "Inaccurate population.");
    CHECK(g.system_prompt_feedback.empty());
    CHECK(g.tool_feedback.empty());
}

TEST_CASE("local gradients combine successor feedback and split the reply") {
    ScriptedBackend llm;
    llm.set_default(
        "SYSTEM_PROMPT_FEEDBACK: Define entity types.\n"
        "TOOL_FEEDBACK: Enhance entity extraction tool.\n"
        "OVERALL_FEEDBACK: Improve context transfer.");
    const AgentNode node = plain_node("a1", "You are a reasoning agent.");
    const std::vector<TextualGradient> succ = {
        grad_of("s1", "fix roles", "", "missing entities"),
        grad_of("s2", "", "", "wrong order")};

    const TextualGradient g = local_gradient(llm, fast_backend(), node, succ, "y_i");
    CHECK(g.target == "a1");
    CHECK(g.system_prompt_feedback == "Define entity types.");
    CHECK(g.tool_feedback == "Enhance entity extraction tool.");
    CHECK(g.overall_feedback == "Improve context transfer.");

    const auto calls = llm.calls();
    const ChatRequest& call = calls[0];
    CHECK(call.user.find("Current Agent Role: You are a reasoning agent....") !=
          std::string::npos);
    CHECK(call.user.find("Successor Feedback: Agent s1: fix roles missing entities\n"
                         "Agent s2: wrong order") != std::string::npos);
}

TEST_CASE("unlabeled feedback lands in the overall section") {
    ScriptedBackend llm;
    llm.set_default("just be more careful");
    const TextualGradient g =
        local_gradient(llm, fast_backend(), plain_node("a", "p"), {}, "");
    CHECK(g.overall_feedback == "just be more careful");
    CHECK(g.system_prompt_feedback.empty());
}

TEST_CASE("prompt updates rewrite the role") {
    ScriptedBackend llm;
    llm.set_default("<IMPROVED_VARIABLE>You are a reasoning agent specializing in extracting "
                    "entities (e.g., locations).</IMPROVED_VARIABLE>");
    const AgentNode node = plain_node("a", "You are a reasoning agent.");
    const SemanticUpdateResult r = semantic_update(
        llm, fast_backend(), node, grad_of("a", "Specify entity extraction.", "", ""), nullptr,
        quick_sandbox());
    CHECK(r.prompt_changed);
    CHECK_FALSE(r.tool_changed);
    CHECK(r.node.system_prompt ==
          "You are a reasoning agent specializing in extracting entities (e.g., locations).");
    CHECK(llm.call_count() == 1);
}

TEST_CASE("an untagged prompt update gets one re-ask") {
    ScriptedBackend llm;
    llm.add_substring("Current variable:", "here is a better prompt, plain text", /*once=*/true);
    llm.add_substring("Current variable:", "<IMPROVED_VARIABLE>Saved on retry.</IMPROVED_VARIABLE>");
    const SemanticUpdateResult r = semantic_update(
        llm, fast_backend(), plain_node("a", "old"), grad_of("a", "improve", "", ""), nullptr,
        quick_sandbox());
    CHECK(r.prompt_changed);
    CHECK(r.node.system_prompt == "Saved on retry.");
    REQUIRE(llm.call_count() == 2);
    CHECK(llm.calls()[1].user.find("Respond only with the improved prompt inside") !=
          std::string::npos);
}

TEST_CASE("two untagged replies keep the old prompt") {
    ScriptedBackend llm;
    llm.set_default("never tagged");
    const SemanticUpdateResult r = semantic_update(
        llm, fast_backend(), plain_node("a", "old"), grad_of("a", "improve", "", ""), nullptr,
        quick_sandbox());
    CHECK_FALSE(r.prompt_changed);
    CHECK(r.node.system_prompt == "old");
    CHECK(llm.call_count() == 2);
}

TEST_CASE("an unchanged prompt is not a change") {
    ScriptedBackend llm;
    llm.set_default("<IMPROVED_VARIABLE>same</IMPROVED_VARIABLE>");
    const SemanticUpdateResult r = semantic_update(
        llm, fast_backend(), plain_node("a", "same"), grad_of("a", "improve", "", ""), nullptr,
        quick_sandbox());
    CHECK_FALSE(r.prompt_changed);
}

TEST_CASE("empty prompt feedback makes no prompt call") {
    ScriptedBackend llm;  // a call would throw NoScriptMatch
    const SemanticUpdateResult r = semantic_update(
        llm, fast_backend(), plain_node("a", "p"), grad_of("a", "", "", "overall only"), nullptr,
        quick_sandbox());
    CHECK_FALSE(r.prompt_changed);
    CHECK(llm.call_count() == 0);
}

TEST_CASE("tool feedback refines the registered tool") {
    ToolRegistry tools;
    ToolSchema v1;
    v1.name = "ratio";
    v1.source = "def tool_function(input_data, **kwargs):\n    return 1\n";
    tools.register_tool(v1);

    AgentNode node = plain_node("a", "p");
    node.tool_ref = "ratio";

    ScriptedBackend llm;
    llm.set_default(
        "```python\ndef tool_function(input_data, **kwargs):\n    return 2\n```");
    const SemanticUpdateResult r =
        semantic_update(llm, fast_backend(), node, grad_of("a", "", "handle zero", ""), &tools,
                        quick_sandbox());
    CHECK(r.tool_changed);
    CHECK_FALSE(r.prompt_changed);
    CHECK(tools.latest("ratio").version == 2);
}

TEST_CASE("a spent prompt re-ask defers tool refinement") {
    ToolRegistry tools;
    ToolSchema v1;
    v1.name = "ratio";
    v1.source = "def tool_function(input_data, **kwargs):\n    return 1\n";
    tools.register_tool(v1);

    AgentNode node = plain_node("a", "old");
    node.tool_ref = "ratio";

    ScriptedBackend llm;
    llm.add_substring("Current variable:", "untagged", /*once=*/true);
    llm.add_substring("Current variable:", "<IMPROVED_VARIABLE>new</IMPROVED_VARIABLE>");
    // a refinement call would match this and mint v2
    llm.add_substring("Current Tool Function Source Code",
                      "```python\ndef tool_function(input_data, **kwargs):\n    return 2\n```");

    const SemanticUpdateResult r = semantic_update(
        llm, fast_backend(), node, grad_of("a", "improve", "handle zero", ""), &tools,
        quick_sandbox());
    CHECK(r.prompt_changed);
    CHECK_FALSE(r.tool_changed);
    CHECK(tools.latest("ratio").version == 1);
}

TEST_CASE("a fenceless refinement gets one re-ask with a format reminder") {
    ToolRegistry tools;
    ToolSchema v1;
    v1.name = "ratio";
    v1.source = "def tool_function(input_data, **kwargs):\n    return 1\n";
    tools.register_tool(v1);
    AgentNode node = plain_node("a", "p");
    node.tool_ref = "ratio";

    ScriptedBackend llm;
    llm.add_substring("Current Tool Function Source Code", "no code here", /*once=*/true);
    llm.add_substring("Current Tool Function Source Code",
                      "```python\ndef tool_function(input_data, **kwargs):\n    return 2\n```");
    const SemanticUpdateResult r = semantic_update(
        llm, fast_backend(), node, grad_of("a", "", "handle zero", ""), &tools, quick_sandbox());
    CHECK(r.tool_changed);
    CHECK(tools.latest("ratio").version == 2);
    REQUIRE(llm.call_count() == 2);
    CHECK(llm.calls()[1].user.find("Return only a fenced python code block.") !=
          std::string::npos);
}

TEST_CASE("a refinement that renames the entry point is dropped") {
    ToolRegistry tools;
    ToolSchema v1;
    v1.name = "ratio";
    v1.source = "def tool_function(input_data, **kwargs):\n    return 1\n";
    tools.register_tool(v1);
    AgentNode node = plain_node("a", "p");
    node.tool_ref = "ratio";

    ScriptedBackend llm;
    llm.set_default("```python\ndef other(input_data):\n    return 2\n```");
    const SemanticUpdateResult r = semantic_update(
        llm, fast_backend(), node, grad_of("a", "", "handle zero", ""), &tools, quick_sandbox());
    CHECK_FALSE(r.tool_changed);
    CHECK(tools.latest("ratio").version == 1);
}

TEST_CASE("a dangling tool reference is tolerated") {
    ToolRegistry tools;
    AgentNode node = plain_node("a", "p");
    node.tool_ref = "ghost";
    ScriptedBackend llm;
    const SemanticUpdateResult r = semantic_update(
        llm, fast_backend(), node, grad_of("a", "", "handle zero", ""), &tools, quick_sandbox());
    CHECK_FALSE(r.tool_changed);
    CHECK(llm.call_count() == 0);
}

TEST_CASE("topology decisions parse every option") {
    const AgentNode node = plain_node("a", "p");
    const TextualGradient grad = grad_of("a", "", "", "Needs parallel subtasks.");
    struct Case {
        const char* response;
        const char* described;
    };
    const Case cases[] = {
        {"ADD_PARALLEL: Data retrieval agent", "add_parallel: Data retrieval agent"},
        {"ADD_SERIAL: Verification agent", "add_serial: Verification agent"},
        {"REMOVE_SUCCESSOR: agent_3", "remove_successor: agent_3"},
        {"NO_CHANGE: topology is adequate", "no_change: topology is adequate"},
        {"I think...\n- ADD_PARALLEL: Parser agent \nmaybe", "add_parallel: Parser agent"},
    };
    for (const auto& c : cases) {
        ScriptedBackend llm;
        llm.set_default(c.response);
        const TopologyAction a = decide_topology(llm, fast_backend(), node, grad, 1, 0.5);
        CHECK(describe(a) == c.described);
    }
}

TEST_CASE("the earliest option marker wins") {
    ScriptedBackend llm;
    llm.set_default("NO_CHANGE: fine\nADD_PARALLEL: ignored");
    const TopologyAction a = decide_topology(llm, fast_backend(), plain_node("a", "p"),
                                             grad_of("a", "", "", "fb"), 1, 0.5);
    CHECK(describe(a) == "no_change: fine");
}

TEST_CASE("an unparseable decision is re-asked then decays to no change") {
    SUBCASE("re-ask succeeds") {
        ScriptedBackend llm;
        llm.add_substring("network topology optimizer", "hmm, not sure", /*once=*/true);
        llm.add_substring("network topology optimizer", "ADD_SERIAL: Checker agent");
        const TopologyAction a = decide_topology(llm, fast_backend(), plain_node("a", "p"),
                                                 grad_of("a", "", "", "fb"), 1, 0.5);
        CHECK(describe(a) == "add_serial: Checker agent");
        REQUIRE(llm.call_count() == 2);
        CHECK(llm.calls()[1].user.find("Respond with exactly one option line.") !=
              std::string::npos);
    }
    SUBCASE("re-ask fails too") {
        ScriptedBackend llm;
        llm.set_default("still rambling");
        const TopologyAction a = decide_topology(llm, fast_backend(), plain_node("a", "p"),
                                                 grad_of("a", "", "", "fb"), 1, 0.5);
        CHECK(describe(a) == "no_change: unparseable topology decision");
        CHECK(llm.call_count() == 2);
    }
}

TEST_CASE("growth is vetoed at the successor limit") {
    ScriptedBackend llm;
    llm.set_default("ADD_PARALLEL: One more agent");
    const TopologyAction a =
        decide_topology(llm, fast_backend(), plain_node("a", "p"), grad_of("a", "", "", "fb"),
                        kMaxSuccessors, 0.5);
    CHECK(describe(a) == "no_change: successor limit reached");

    ScriptedBackend llm2;
    llm2.set_default("REMOVE_SUCCESSOR: agent_2");
    const TopologyAction removal =
        decide_topology(llm2, fast_backend(), plain_node("a", "p"), grad_of("a", "", "", "fb"),
                        kMaxSuccessors, 0.5);
    CHECK(describe(removal) == "remove_successor: agent_2");
}

TEST_CASE("the decision call carries the node context") {
    ScriptedBackend llm;
    llm.set_default("NO_CHANGE: ok");
    decide_topology(llm, fast_backend(), plain_node("a", "You are a planner."),
                    grad_of("a", "spf", "tf", "Needs parallel subtasks."), 2, 0.5);
    const auto calls = llm.calls();
    const ChatRequest& call = calls[0];
    CHECK(call.user.find("Feedback: Needs parallel subtasks.") != std::string::npos);
    CHECK(call.user.find("Successor Count: 2") != std::string::npos);
    CHECK(call.user.find("Task Parallelizability: 0.5") != std::string::npos);

    // without overall feedback the summary of all parts stands in
    ScriptedBackend llm2;
    llm2.set_default("NO_CHANGE: ok");
    decide_topology(llm2, fast_backend(), plain_node("a", "p"), grad_of("a", "spf", "tf", ""), 2,
                    0.5);
    CHECK(llm2.calls()[0].user.find("Feedback: spf tf") != std::string::npos);
}

TEST_CASE("sentiment maps to a binary reward") {
    struct Case {
        const char* response;
        int reward;
    };
    const Case cases[] = {
        {"POSITIVE", 1},
        {"NEUTRAL", 1},
        {"CRITICAL", 0},
        {"The sentiment is NEUTRAL overall.", 1},
        {"NEUTRAL but borderline CRITICAL", 1},   // earliest label
        {"CRITICAL, definitely not POSITIVE", 0},
        {"UNCRITICAL", 0},                        // no whole-word label
        {"no label at all", 0},
    };
    for (const auto& c : cases) {
        ScriptedBackend llm;
        llm.set_default(c.response);
        CHECK(extract_reward(llm, fast_backend(), grad_of("a", "", "", "fb")) == c.reward);
    }
}

TEST_CASE("the sentiment call quotes the gradient") {
    ScriptedBackend llm;
    llm.set_default("POSITIVE");
    extract_reward(llm, fast_backend(), grad_of("a", "", "", "Improve context transfer."));
    CHECK(llm.calls()[0].user.find("FEEDBACK: Improve context transfer.") != std::string::npos);
}

TEST_CASE("a successful pass updates beliefs without any completion") {
    AgentGraph g = make_initial_graph("You are the source.", "You are the aggregator.");
    const ExecutionTrace trace = minimal_trace(g, "final");
    LossSignal loss;
    loss.outcome.success = true;
    loss.outcome.score = 1.0;
    loss.gradient_seed = "SATISFACTORY";

    ScriptedBackend llm;  // any call would throw NoScriptMatch
    BackwardContext ctx{llm, fast_backend(), nullptr, quick_sandbox(), nullptr, nullptr, 0.5};
    RoutingParams params;

    const BackwardResult br = backward_pass(g, trace, loss, ctx, params);

    REQUIRE(br.records.size() == 2);
    CHECK(br.records[0].node == g.aggregator);
    CHECK(br.records[0].action == "no_change");
    CHECK(br.records[0].reward == 1);
    CHECK(br.records[1].node == g.source);
    CHECK(br.records[1].reward == 1);
    CHECK_FALSE(br.records[1].prompt_changed);

    // reward 1, no knowledge: alpha' = decay + 1, beta' = decay + 0.5
    const AgentNode& src = br.graph.at(g.source);
    CHECK(src.alpha == doctest::Approx(kDecay + 1.0).epsilon(1e-12));
    CHECK(src.beta == doctest::Approx(kDecay + 0.5).epsilon(1e-12));

    // contribution 1 on the routed edge, updated from the prior mean 0.5
    const EdgeState* e = br.graph.find_edge(g.source, g.aggregator);
    REQUIRE(e);
    CHECK(e->synergy == doctest::Approx(1.05).epsilon(1e-12));
    CHECK(e->attempts == 1);
    CHECK(e->successes == 1);
    CHECK(e->edge_alpha == doctest::Approx(2.0));
    CHECK(e->edge_beta == doctest::Approx(1.0));

    CHECK(br.graph.iteration == 1);
    // the input graph is untouched
    CHECK(g.iteration == 0);
    CHECK(g.at(g.source).alpha == 1.0);
    CHECK(g.find_edge(g.source, g.aggregator)->attempts == 0);
}

TEST_CASE("a failed pass runs the full textual gradient machinery") {
    AgentGraph g = make_initial_graph("You are the source.", "You are the aggregator.");
    const ExecutionTrace trace = minimal_trace(g, "Austin population: 950,000.");
    LossSignal loss;
    loss.outcome.success = false;
    loss.outcome.feedback = "wrong";
    loss.gradient_seed = "seed diagnosis";

    ScriptedBackend llm;
    llm.add_substring("You are an output aggregator",
                      "<FEEDBACK>Use recent sources.</FEEDBACK>");
    llm.add_substring("FEEDBACK: seed diagnosis", "CRITICAL");
    llm.add_substring("Analyze successor feedback",
                      "SYSTEM_PROMPT_FEEDBACK: Define entity types.\n"
                      "OVERALL_FEEDBACK: Improve context transfer.");
    llm.add_substring("FEEDBACK: Improve context transfer.", "POSITIVE");
    llm.add_substring("Generate an improved system prompt",
                      "<IMPROVED_VARIABLE>You are a precise source agent.</IMPROVED_VARIABLE>");
    llm.add_substring("network topology optimizer", "NO_CHANGE: fine as is");

    BackwardContext ctx{llm, fast_backend(), nullptr, quick_sandbox(), nullptr, nullptr, 0.5};
    RoutingParams params;
    params.prune_threshold = 0.0;  // keep the failing edge observable

    const BackwardResult br = backward_pass(g, trace, loss, ctx, params);

    REQUIRE(br.records.size() == 2);
    CHECK(br.records[0].node == g.aggregator);
    CHECK(br.records[0].reward == 0);
    CHECK(br.records[1].node == g.source);
    CHECK(br.records[1].action == "no_change: fine as is");
    CHECK(br.records[1].reward == 1);
    CHECK(br.records[1].prompt_changed);

    CHECK(br.graph.at(g.source).system_prompt == "You are a precise source agent.");
    CHECK(g.at(g.source).system_prompt == "You are the source.");

    // the source's feedback came from the aggregator broadcast
    bool saw_local = false;
    for (const auto& call : llm.calls()) {
        if (call.system.find("Analyze successor feedback") == std::string::npos) continue;
        saw_local = true;
        CHECK(call.user.find("Current Agent Role: You are the source....") != std::string::npos);
        CHECK(call.user.find("Agent aggregator: Use recent sources.") != std::string::npos);
    }
    CHECK(saw_local);

    // rewards: source 1, aggregator 0
    const AgentNode& src = br.graph.at(g.source);
    CHECK(src.alpha == doctest::Approx(kDecay + 1.0).epsilon(1e-12));
    CHECK(src.beta == doctest::Approx(kDecay + 0.5).epsilon(1e-12));
    const AgentNode& agg = br.graph.at(g.aggregator);
    CHECK(agg.alpha == doctest::Approx(kDecay).epsilon(1e-12));
    CHECK(agg.beta == doctest::Approx(kDecay + 1.5).epsilon(1e-12));

    // edge contribution is the TARGET node's reward (aggregator: 0)
    const EdgeState* e = br.graph.find_edge(g.source, g.aggregator);
    REQUIRE(e);
    CHECK(e->synergy == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(e->attempts == 1);
    CHECK(e->successes == 0);
    CHECK(e->edge_alpha == doctest::Approx(1.0));
    CHECK(e->edge_beta == doctest::Approx(2.0));
}

TEST_CASE("growth splices a new agent and pruning drops the failing edge") {
    AgentGraph g = make_initial_graph("You are the source.", "You are the aggregator.");
    const ExecutionTrace trace = minimal_trace(g, "bad final");
    LossSignal loss;
    loss.outcome.success = false;
    loss.outcome.feedback = "wrong";
    loss.gradient_seed = "seed diagnosis";

    ScriptedBackend llm;
    llm.add_substring("You are an output aggregator",
                      "<FEEDBACK>Use recent sources.</FEEDBACK>");
    llm.add_substring("FEEDBACK: seed diagnosis", "CRITICAL");
    llm.add_substring("Analyze successor feedback", "OVERALL_FEEDBACK: Needs parallel subtasks.");
    llm.add_substring("FEEDBACK: Needs parallel subtasks.", "CRITICAL");
    llm.add_substring("network topology optimizer", "ADD_PARALLEL: Data retrieval agent");

    BackwardContext ctx{llm, fast_backend(), nullptr, quick_sandbox(), nullptr, nullptr, 0.5};
    RoutingParams params;  // prune threshold 0.3

    const BackwardResult br = backward_pass(g, trace, loss, ctx, params);

    CHECK(br.records[1].action == "add_parallel: Data retrieval agent");
    REQUIRE(br.graph.nodes.size() == 3);
    const AgentNode& born = br.graph.at("agent_1");
    CHECK(born.system_prompt == "You are a data retrieval agent.");
    // fresh priors survive the belief sweep
    CHECK(born.alpha == 1.0);
    CHECK(born.beta == 1.0);
    CHECK(born.created_at == 0);

    // the 0-for-1 edge fell below the success-rate floor; the new path holds
    CHECK(br.graph.find_edge(g.source, g.aggregator) == nullptr);
    CHECK(br.graph.find_edge(g.source, "agent_1") != nullptr);
    CHECK(br.graph.find_edge("agent_1", g.aggregator) != nullptr);
}

TEST_CASE("removing an unknown successor reads as no change") {
    AgentGraph g = make_initial_graph("You are the source.", "You are the aggregator.");
    const ExecutionTrace trace = minimal_trace(g, "bad final");
    LossSignal loss;
    loss.outcome.success = false;
    loss.gradient_seed = "seed diagnosis";

    ScriptedBackend llm;
    llm.add_substring("You are an output aggregator", "<FEEDBACK>fb</FEEDBACK>");
    llm.add_substring("You classify feedback sentiment", "NEUTRAL");
    llm.add_substring("Analyze successor feedback", "OVERALL_FEEDBACK: remove something");
    llm.add_substring("network topology optimizer", "REMOVE_SUCCESSOR: ghost_node");

    BackwardContext ctx{llm, fast_backend(), nullptr, quick_sandbox(), nullptr, nullptr, 0.5};
    RoutingParams params;
    params.prune_threshold = 0.0;

    const BackwardResult br = backward_pass(g, trace, loss, ctx, params);
    CHECK(br.records[1].action == "no_change: rejected: unknown successor");
    CHECK(br.graph.nodes.size() == 2);
    CHECK(br.graph.find_edge(g.source, g.aggregator) != nullptr);
}

TEST_CASE("a broadcast retry appends the format reminder") {
    AgentGraph g = make_initial_graph("You are the source.", "You are the aggregator.");
    const ExecutionTrace trace = minimal_trace(g, "bad final");
    LossSignal loss;
    loss.outcome.success = false;
    loss.gradient_seed = "seed diagnosis";

    ScriptedBackend llm;
    llm.add_substring("You are an output aggregator", "no tags, sorry", /*once=*/true);
    llm.add_substring("You are an output aggregator", "raw fallback text");
    llm.add_substring("You classify feedback sentiment", "NEUTRAL");
    llm.add_substring("Analyze successor feedback", "OVERALL_FEEDBACK: ok");
    llm.add_substring("network topology optimizer", "NO_CHANGE: ok");

    BackwardContext ctx{llm, fast_backend(), nullptr, quick_sandbox(), nullptr, nullptr, 0.5};
    RoutingParams params;
    params.prune_threshold = 0.0;

    backward_pass(g, trace, loss, ctx, params);

    // second broadcast call carries the reminder; its raw reply is reused
    REQUIRE(llm.calls().size() >= 2);
    CHECK(llm.calls()[1].user.find("Respond only in the required format.") != std::string::npos);
    bool saw_fallback = false;
    for (const auto& call : llm.calls()) {
        if (call.system.find("Analyze successor feedback") == std::string::npos) continue;
        if (call.user.find("Agent aggregator: raw fallback text") != std::string::npos)
            saw_fallback = true;
    }
    CHECK(saw_fallback);
}

TEST_CASE("errors mid-pass leave the caller's graph intact") {
    AgentGraph g = make_initial_graph("You are the source.", "You are the aggregator.");
    const ExecutionTrace trace = minimal_trace(g, "bad final");
    LossSignal loss;
    loss.outcome.success = false;
    loss.gradient_seed = "seed diagnosis";

    ScriptedBackend llm;
    llm.add_substring("You are an output aggregator", "<FEEDBACK>fb</FEEDBACK>");
    // the sentiment call finds no rule and throws

    BackwardContext ctx{llm, fast_backend(), nullptr, quick_sandbox(), nullptr, nullptr, 0.5};
    RoutingParams params;

    const std::string before = graph_to_json(g).dump();
    CHECK_THROWS_AS(backward_pass(g, trace, loss, ctx, params), NoScriptMatch);
    CHECK(graph_to_json(g).dump() == before);
}

TEST_CASE("idle nodes decay and knowledge steers the update") {
    AgentGraph g;
    g.source = "source";
    g.aggregator = "aggregator";
    g.nodes = {plain_node("source", "solve arithmetic word problems"),
               plain_node("idle", "You are unused."),
               plain_node("aggregator", "You are the aggregator.")};
    EdgeState e1;
    e1.from = "source";
    e1.to = "aggregator";
    EdgeState e2;
    e2.from = "source";
    e2.to = "idle";
    EdgeState e3;
    e3.from = "idle";
    e3.to = "aggregator";
    g.edges = {e1, e2, e3};  // idle is wired in but routing skips it
    g.iteration = 3;         // older than every node's birth iteration

    ExecutionTrace trace;
    trace.activated = {"source", "aggregator"};
    trace.outputs["source"] = "y";
    trace.outputs["aggregator"] = "final";
    trace.routed_edges = {{"source", "aggregator"}};
    trace.aggregate_inputs = {"source"};

    LossSignal loss;
    loss.outcome.success = true;
    loss.gradient_seed = "SATISFACTORY";

    ScriptedBackend llm;
    TaskProfile profile;
    profile.instruction = "solve arithmetic word problems";
    profile.embedding = embed_text(profile.instruction);

    BackwardContext ctx{llm, fast_backend(), nullptr, quick_sandbox(), nullptr, &profile, 0.5};
    RoutingParams params;

    const BackwardResult br = backward_pass(g, trace, loss, ctx, params);

    // source prompt matches the task exactly: km = 1, kd = 0 (rho = 1, no kg)
    const AgentNode& src = br.graph.at("source");
    CHECK(src.alpha == doctest::Approx(kDecay + 1.5).epsilon(1e-12));
    CHECK(src.beta == doctest::Approx(kDecay).epsilon(1e-12));

    // the idle node only decays
    const AgentNode& idle = br.graph.at("idle");
    CHECK(idle.alpha == doctest::Approx(kDecay).epsilon(1e-12));
    CHECK(idle.beta == doctest::Approx(kDecay).epsilon(1e-12));

    CHECK(br.graph.iteration == 4);
}
