#pragma once

#include <chrono>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "hiva/errors.hpp"

namespace hiva {

struct ChatRequest {
    std::string system;
    std::string user;
    double temperature = 1.0;
    int max_tokens = 1000;
};

struct BackendPolicy {
    std::chrono::milliseconds timeout{30000};
    int max_retries = 3;
    std::chrono::milliseconds backoff{250};  // base; doubles per retry
};

class LlmBackend {
public:
    virtual ~LlmBackend() = default;
    // single attempt; throws TransportError on retryable failures
    virtual std::string complete_once(const ChatRequest& req) = 0;
};

// Retry wrapper: exponential backoff on TransportError, Exhausted once the
// retry budget is spent. Also clamps max_tokens to the absolute cap (4096).
std::string complete(LlmBackend& backend, ChatRequest req, const BackendPolicy& policy);

// Deterministic fixture backend. Rules are evaluated in order; the first
// match wins. A rule matches against system + "\n" + user. Rules flagged
// `once` are consumed after they fire.
class ScriptedBackend : public LlmBackend {
public:
    struct Rule {
        enum class Kind { Exact, Substring, Default };
        Kind kind = Kind::Default;
        std::string pattern;
        std::string response;
        bool once = false;
        bool used = false;
    };

    ScriptedBackend() = default;
    ScriptedBackend(ScriptedBackend&& other) noexcept;
    ScriptedBackend& operator=(ScriptedBackend&& other) noexcept;
    static ScriptedBackend from_file(const std::string& path);

    void add_exact(const std::string& pattern, const std::string& response, bool once = false);
    void add_substring(const std::string& pattern, const std::string& response, bool once = false);
    void set_default(const std::string& response);

    std::string complete_once(const ChatRequest& req) override;

    std::vector<ChatRequest> calls() const;
    size_t call_count() const;

private:
    mutable std::mutex mu_;
    std::vector<Rule> rules_;
    std::vector<ChatRequest> calls_;
};

// OpenAI-style HTTP backend: POST {base_url}/chat/completions with the key
// from the HIVA_API_KEY environment variable.
class HttpBackend : public LlmBackend {
public:
    HttpBackend(std::string base_url, std::string model,
                std::chrono::milliseconds timeout = std::chrono::milliseconds(30000));
    std::string complete_once(const ChatRequest& req) override;

private:
    std::string base_url_;
    std::string model_;
    std::chrono::milliseconds timeout_;
};

enum class TemplateId {
    ForwardInstruction,
    SystemFeedback,
    AgentFeedback,
    PromptUpdate,
    TopologyDecision,
    ToolSynthesis,
    ToolRefinement,
    GlobalGradient,
    Aggregation,
    SentimentReward,
};

// Fills a template's placeholders and returns the ready-to-send request
// (per-template temperature applied; tool codegen runs at 0.3). Placeholders
// that are output-format slots ({feedback}, {prompt}) stay literal. A
// placeholder without a field value throws MissingField.
ChatRequest render_template(TemplateId id, const std::map<std::string, std::string>& fields);

// First well-formed <TAG>...</TAG> pair, inner text trimmed.
std::string parse_tagged(const std::string& text, const std::string& tag);

struct FeedbackSections {
    std::string system_prompt_feedback;
    std::string tool_feedback;
    std::string overall_feedback;
};

// Splits a completion on the three feedback markers (any order, each
// optional). With no marker at all the whole text is overall feedback.
FeedbackSections parse_sections(const std::string& text);

}  // namespace hiva
