#include "hiva/llm.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>

#include "json.hpp"

#define CPPHTTPLIB_NO_EXCEPTIONS
#include "httplib.h"

namespace hiva {

std::string complete(LlmBackend& backend, ChatRequest req, const BackendPolicy& policy) {
    req.max_tokens = std::min(req.max_tokens, 4096);
    std::string last_error;
    const int attempts = policy.max_retries + 1;
    for (int i = 0; i < attempts; ++i) {
        try {
            return backend.complete_once(req);
        } catch (const TransportError& ex) {
            last_error = ex.what();
            if (i + 1 < attempts && policy.backoff.count() > 0)
                std::this_thread::sleep_for(policy.backoff * (1u << i));
        }
    }
    throw Exhausted("backend failed after " + std::to_string(attempts) +
                    " attempts: " + last_error);
}

ScriptedBackend::ScriptedBackend(ScriptedBackend&& other) noexcept {
    std::lock_guard<std::mutex> lock(other.mu_);
    rules_ = std::move(other.rules_);
    calls_ = std::move(other.calls_);
}

ScriptedBackend& ScriptedBackend::operator=(ScriptedBackend&& other) noexcept {
    if (this != &other) {
        std::scoped_lock lock(mu_, other.mu_);
        rules_ = std::move(other.rules_);
        calls_ = std::move(other.calls_);
    }
    return *this;
}

ScriptedBackend ScriptedBackend::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open backend script: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& ex) {
        throw SchemaMismatch(std::string("bad backend script: ") + ex.what());
    }
    ScriptedBackend b;
    for (const auto& jr : doc.at("rules")) {
        Rule r;
        const std::string kind = jr.value("match", "default");
        if (kind == "exact")
            r.kind = Rule::Kind::Exact;
        else if (kind == "substring")
            r.kind = Rule::Kind::Substring;
        else if (kind == "default")
            r.kind = Rule::Kind::Default;
        else
            throw SchemaMismatch("bad rule match kind: " + kind);
        r.pattern = jr.value("pattern", "");
        r.response = jr.at("response").get<std::string>();
        r.once = jr.value("once", false);
        b.rules_.push_back(r);
    }
    return b;
}

void ScriptedBackend::add_exact(const std::string& pattern, const std::string& response,
                                bool once) {
    std::lock_guard<std::mutex> lock(mu_);
    rules_.push_back({Rule::Kind::Exact, pattern, response, once, false});
}

void ScriptedBackend::add_substring(const std::string& pattern, const std::string& response,
                                    bool once) {
    std::lock_guard<std::mutex> lock(mu_);
    rules_.push_back({Rule::Kind::Substring, pattern, response, once, false});
}

void ScriptedBackend::set_default(const std::string& response) {
    std::lock_guard<std::mutex> lock(mu_);
    rules_.push_back({Rule::Kind::Default, "", response, false, false});
}

std::string ScriptedBackend::complete_once(const ChatRequest& req) {
    std::lock_guard<std::mutex> lock(mu_);
    calls_.push_back(req);
    const std::string haystack = req.system + "\n" + req.user;
    for (auto& r : rules_) {
        if (r.once && r.used) continue;
        bool hit = false;
        switch (r.kind) {
            case Rule::Kind::Exact: hit = haystack == r.pattern; break;
            case Rule::Kind::Substring: hit = haystack.find(r.pattern) != std::string::npos; break;
            case Rule::Kind::Default: hit = true; break;
        }
        if (hit) {
            r.used = true;
            return r.response;
        }
    }
    throw NoScriptMatch(haystack.substr(0, 120));
}

std::vector<ChatRequest> ScriptedBackend::calls() const {
    std::lock_guard<std::mutex> lock(mu_);
    return calls_;
}

size_t ScriptedBackend::call_count() const {
    std::lock_guard<std::mutex> lock(mu_);
    return calls_.size();
}

HttpBackend::HttpBackend(std::string base_url, std::string model,
                         std::chrono::milliseconds timeout)
    : base_url_(std::move(base_url)), model_(std::move(model)), timeout_(timeout) {
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

std::string HttpBackend::complete_once(const ChatRequest& req) {
    // split "scheme://host[:port]/prefix" into client target and path prefix
    std::string host = base_url_, prefix;
    const size_t scheme = base_url_.find("://");
    const size_t slash = base_url_.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (slash != std::string::npos) {
        host = base_url_.substr(0, slash);
        prefix = base_url_.substr(slash);
    }

    httplib::Client cli(host);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    cli.set_connection_timeout(secs.count() > 0 ? secs.count() : 1, 0);
    cli.set_read_timeout(secs.count() > 0 ? secs.count() : 1, 0);

    httplib::Headers headers;
    if (const char* key = std::getenv("HIVA_API_KEY"))
        headers.emplace("Authorization", std::string("Bearer ") + key);

    const nlohmann::json body{{"model", model_},
                              {"messages",
                               {{{"role", "system"}, {"content", req.system}},
                                {{"role", "user"}, {"content", req.user}}}},
                              {"temperature", req.temperature},
                              {"max_tokens", req.max_tokens}};

    auto res = cli.Post(prefix + "/chat/completions", headers, body.dump(), "application/json");
    if (!res) throw TransportError("connection failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
        throw TransportError("http status " + std::to_string(res->status) + ": " +
                             res->body.substr(0, 200));
    try {
        const nlohmann::json doc = nlohmann::json::parse(res->body);
        return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& ex) {
        throw TransportError(std::string("malformed completion response: ") + ex.what());
    }
}

namespace {

struct TemplateSpec {
    std::string system;
    std::string user;
    double temperature = 1.0;
    std::map<std::string, size_t> truncate;   // field -> max chars
    std::set<std::string> literal_slots;      // output-format placeholders
};

// The seven interaction templates reproduce their published wording exactly
// (the fidelity test depends on it); the last three have no published text.
const TemplateSpec& template_spec(TemplateId id) {
    static const std::map<TemplateId, TemplateSpec> specs = [] {
        std::map<TemplateId, TemplateSpec> m;

        m[TemplateId::ForwardInstruction] = {
            "You are an instruction generator for multi-agent systems. Create clear, specific "
            "instructions.",
            "Generate an instruction for the successor agent:\n"
            "CURRENT AGENT INPUT: {input_instruction}\n"
            "CURRENT AGENT TOOL RESULT: {tool_result}\n"
            "SUCCESSOR AGENT SYSTEM PROMPT: {successor_system_prompt}\n"
            "SUCCESSOR AGENT ID: {successor_agent_id}\n"
            "Requirements: 1. Actionable instruction. 2. Align with the successor’s "
            "capabilities. 3. Transfer relevant context. 4. Be concise.",
            1.0,
            {},
            {}};

        m[TemplateId::SystemFeedback] = {
            "You are an output aggregator generating feedback for predecessors based on "
            "environmental outcomes.",
            "Generate feedback for:\n"
            "PREDECESSOR: predecessor agents\n"
            "SUCCESSOR: Aggregator {aggregator_id}\n"
            "SUCCESSOR FEEDBACK: {loss_grad}\n"
            "CONTEXT: Final result: {final_result}...\n"
            "Output: <FEEDBACK>{feedback}</FEEDBACK>",
            1.0,
            {{"final_result", 200}},
            {"feedback"}};

        m[TemplateId::AgentFeedback] = {
            "Analyze successor feedback for agent improvement.",
            "Current Agent Role: {system_prompt}...\n"
            "Successor Feedback: {combined_feedback}\n"
            "Provide:\n"
            "1. SYSTEM_PROMPT_FEEDBACK: Role improvements.\n"
            "2. TOOL_FEEDBACK: Tool improvements.\n"
            "3. OVERALL_FEEDBACK: Strategic improvements.",
            1.0,
            {{"system_prompt", 300}},
            {}};

        m[TemplateId::PromptUpdate] = {
            "Generate an improved system prompt.",
            "Current variable: {system_prompt}\n"
            "Role: AI agent system prompt\n"
            "Gradients: {system_prompt_feedback}\n"
            "Output: <IMPROVED_VARIABLE>{prompt}</IMPROVED_VARIABLE>",
            1.0,
            {},
            {"prompt"}};

        m[TemplateId::TopologyDecision] = {
            "You are a network topology optimizer.",
            "Current Agent Role: {system_prompt}...\n"
            "Feedback: {feedback}\n"
            "Successor Count: {successor_count}\n"
            "Task Parallelizability: {parallelizability}\n"
            "Options:\n"
            "- ADD_PARALLEL: [New agent description]\n"
            "- ADD_SERIAL: [New agent description]\n"
            "- REMOVE_SUCCESSOR: [Successor to remove]\n"
            "- NO_CHANGE: [Reason]",
            1.0,
            {},
            {}};

        m[TemplateId::ToolSynthesis] = {
            "You are a tool generation specialist for an AI agent system. Your task is to write "
            "a single, self-contained Python function based on the provided requirements.",
            "Generate a Python tool function with the following specifications:\n"
            "\n"
            "**Tool Description:**\n"
            "{description}\n"
            "\n"
            "**Input/Output Examples:**\n"
            "{examples}\n"
            "\n"
            "**Function Signature Requirements:**\n"
            "- The function must be named tool_function.\n"
            "- It must accept at least one parameter: input_data.\n"
            "- It must include error handling for invalid inputs.\n"
            "- It must not use restricted libraries like os or subprocess.\n"
            "\n"
            "Please return only the complete Python code inside a python block.",
            0.3,
            {},
            {}};

        m[TemplateId::ToolRefinement] = {
            "You are a tool evolution specialist. Your task is to improve an existing Python "
            "tool function based on its source code and performance feedback.",
            "Please improve the following tool function.\n"
            "\n"
            "**Current Tool Function Source Code:**{source}\n"
            "\n"
            "**Performance Feedback (Textual Gradient):**\n"
            "{feedback}\n"
            "\n"
            "**Improvement Requirements:**\n"
            "- Preserve the original function signature (tool_function(input_data, **kwargs)).\n"
            "- Directly address the issue described in the feedback.\n"
            "- Enhance error handling and edge-case coverage.\n"
            "- Do not introduce new external dependencies.\n"
            "Return only the improved, complete Python function code inside a python block.",
            0.3,
            {},
            {}};

        m[TemplateId::GlobalGradient] = {
            "You are a diagnostic assistant for a multi-agent system. Identify the primary "
            "deficiency in the system's final output.",
            "FINAL OUTPUT: {final_result}\n"
            "ENVIRONMENT FEEDBACK: {environment_feedback}\n"
            "Describe the most important problem to fix, in one or two sentences.",
            1.0,
            {},
            {}};

        m[TemplateId::Aggregation] = {
            "You are an aggregator agent. Synthesize the collected agent outputs into one final "
            "answer.",
            "TASK: {instruction}\n"
            "AGENT OUTPUTS:\n"
            "{outputs}\n"
            "Provide the final answer.",
            1.0,
            {},
            {}};

        m[TemplateId::SentimentReward] = {
            "You classify feedback sentiment for an agent reward signal.",
            "Classify the following feedback as POSITIVE, NEUTRAL, or CRITICAL.\n"
            "FEEDBACK: {feedback}\n"
            "Respond with exactly one word: POSITIVE, NEUTRAL, or CRITICAL.",
            1.0,
            {},
            {}};

        return m;
    }();
    return specs.at(id);
}

std::string substitute(const std::string& pattern, const std::map<std::string, std::string>& fields,
                       const std::map<std::string, size_t>& truncate,
                       const std::set<std::string>& literal_slots) {
    std::string out;
    out.reserve(pattern.size());
    size_t pos = 0;
    while (pos < pattern.size()) {
        const size_t open = pattern.find('{', pos);
        if (open == std::string::npos) {
            out.append(pattern, pos, std::string::npos);
            break;
        }
        const size_t close = pattern.find('}', open);
        if (close == std::string::npos) {
            out.append(pattern, pos, std::string::npos);
            break;
        }
        out.append(pattern, pos, open - pos);
        const std::string name = pattern.substr(open + 1, close - open - 1);
        if (literal_slots.count(name)) {
            out += "{" + name + "}";
        } else {
            auto it = fields.find(name);
            if (it == fields.end()) throw MissingField(name);
            std::string value = it->second;
            auto tr = truncate.find(name);
            if (tr != truncate.end() && value.size() > tr->second) value.resize(tr->second);
            out += value;
        }
        pos = close + 1;
    }
    return out;
}

}  // namespace

ChatRequest render_template(TemplateId id, const std::map<std::string, std::string>& fields) {
    const TemplateSpec& spec = template_spec(id);
    ChatRequest req;
    req.system = spec.system;
    req.user = substitute(spec.user, fields, spec.truncate, spec.literal_slots);
    req.temperature = spec.temperature;
    req.max_tokens = 1000;
    return req;
}

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace

std::string parse_tagged(const std::string& text, const std::string& tag) {
    const std::string open = "<" + tag + ">";
    const std::string close = "</" + tag + ">";
    const size_t start = text.find(open);
    if (start == std::string::npos) throw TagNotFound(tag);
    const size_t end = text.find(close, start + open.size());
    if (end == std::string::npos) throw TagNotFound(tag);
    return trim(text.substr(start + open.size(), end - start - open.size()));
}

FeedbackSections parse_sections(const std::string& text) {
    struct Marker {
        std::string token;
        size_t pos = std::string::npos;   // position of the token
        size_t start = std::string::npos; // boundary incl. "2. " style prefix
    };
    Marker markers[3] = {{"SYSTEM_PROMPT_FEEDBACK:"}, {"TOOL_FEEDBACK:"}, {"OVERALL_FEEDBACK:"}};

    bool any = false;
    for (auto& m : markers) {
        m.pos = text.find(m.token);
        if (m.pos == std::string::npos) continue;
        any = true;
        // widen the boundary backwards over an optional list prefix so the
        // previous section does not absorb "2." style enumerators
        size_t b = m.pos;
        while (b > 0 && (text[b - 1] == ' ' || text[b - 1] == '\t')) --b;
        size_t d = b;
        if (d > 0 && text[d - 1] == '.') {
            --d;
            size_t digits = d;
            while (digits > 0 && std::isdigit(static_cast<unsigned char>(text[digits - 1])))
                --digits;
            if (digits < d) b = digits;
        } else if (d > 0 && (text[d - 1] == '-' || text[d - 1] == '*')) {
            b = d - 1;
        }
        m.start = b;
    }

    FeedbackSections out;
    if (!any) {
        out.overall_feedback = trim(text);
        return out;
    }

    for (int i = 0; i < 3; ++i) {
        if (markers[i].pos == std::string::npos) continue;
        const size_t content_begin = markers[i].pos + markers[i].token.size();
        size_t content_end = text.size();
        for (const auto& other : markers)
            if (other.start != std::string::npos && other.start >= content_begin)
                content_end = std::min(content_end, other.start);
        const std::string content = trim(text.substr(content_begin, content_end - content_begin));
        if (i == 0)
            out.system_prompt_feedback = content;
        else if (i == 1)
            out.tool_feedback = content;
        else
            out.overall_feedback = content;
    }
    return out;
}

}  // namespace hiva
