#include "hiva/environment.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>

namespace hiva {

TaskKind task_kind_from_string(const std::string& s) {
    if (s == "exact_match") return TaskKind::ExactMatch;
    if (s == "numeric") return TaskKind::Numeric;
    if (s == "unit_test") return TaskKind::UnitTest;
    throw SchemaMismatch("unknown task kind: " + s);
}

std::string to_string(TaskKind k) {
    switch (k) {
        case TaskKind::ExactMatch: return "exact_match";
        case TaskKind::Numeric: return "numeric";
        case TaskKind::UnitTest: return "unit_test";
    }
    return "exact_match";
}

std::string normalize_answer(const std::string& s) {
    std::string out;
    bool pending_space = false;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            if (!out.empty()) pending_space = true;
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

double extract_last_number(const std::string& s) {
    // scan for number tokens (sign, digits, comma grouping, decimals,
    // exponents); the last one is the answer by convention
    double last = 0.0;
    bool found = false;
    size_t i = 0;
    while (i < s.size()) {
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) {
            ++i;
            continue;
        }
        size_t begin = i;
        if (begin > 0 && (s[begin - 1] == '-' || s[begin - 1] == '+')) --begin;
        size_t end = i;
        while (end < s.size() &&
               (std::isdigit(static_cast<unsigned char>(s[end])) || s[end] == ',' ||
                s[end] == '.'))
            ++end;
        // trailing punctuation like "4." or "4," belongs to the sentence
        while (end > i && (s[end - 1] == '.' || s[end - 1] == ',') &&
               (end >= s.size() || !std::isdigit(static_cast<unsigned char>(s[end]))))
            --end;
        if (end < s.size() && (s[end] == 'e' || s[end] == 'E')) {
            size_t ex = end + 1;
            if (ex < s.size() && (s[ex] == '-' || s[ex] == '+')) ++ex;
            size_t digits = ex;
            while (digits < s.size() && std::isdigit(static_cast<unsigned char>(s[digits])))
                ++digits;
            if (digits > ex) end = digits;
        }
        std::string token = s.substr(begin, end - begin);
        std::erase(token, ',');
        try {
            last = std::stod(token);
            found = true;
        } catch (...) {
        }
        i = end > i ? end : i + 1;
    }
    if (!found) throw NoNumberFound();
    return last;
}

namespace {

Outcome evaluate_unit_tests(const Task& task, const std::string& output,
                            const ExecutionPolicy& sandbox) {
    ToolSchema candidate;
    candidate.name = "candidate_" + task.id;
    candidate.description = "unit test candidate";
    candidate.source = output;

    Outcome o;
    if (task.cases.empty()) throw SchemaMismatch("unit_test task has no cases: " + task.id);

    try {
        validate_tool_source(candidate, sandbox);
    } catch (const Error& ex) {
        o.success = false;
        o.score = 0.0;
        o.feedback = std::string("Submitted code was rejected before execution: ") + ex.what();
        return o;
    }

    int passing = 0;
    std::string first_failure;
    for (const auto& c : task.cases) {
        std::string got;
        bool ran = false;
        try {
            got = execute_tool(candidate, c.input, sandbox).output;
            ran = true;
        } catch (const TimedOutExhausted& ex) {
            got = ex.what();
        } catch (const CrashedExhausted& ex) {
            got = ex.what();
        }
        if (ran && normalize_answer(got) == normalize_answer(c.expected)) {
            passing++;
        } else if (first_failure.empty()) {
            first_failure = "Case with input '" + c.input + "' expected '" + c.expected +
                            "' but " + (ran ? "produced '" + got + "'." : "failed: " + got);
        }
    }
    o.score = static_cast<double>(passing) / static_cast<double>(task.cases.size());
    o.success = passing == static_cast<int>(task.cases.size());
    if (!o.success) o.feedback = first_failure;
    return o;
}

}  // namespace

Outcome evaluate(const Task& task, const std::string& output, const ExecutionPolicy& sandbox) {
    Outcome o;
    switch (task.kind) {
        case TaskKind::ExactMatch: {
            const std::string got = normalize_answer(output);
            const std::string want = normalize_answer(task.expected_text);
            if (got == want) {
                o.success = true;
                o.score = 1.0;
            } else {
                o.feedback = "Expected '" + task.expected_text + "' but observed '" + output + "'.";
            }
            return o;
        }
        case TaskKind::Numeric: {
            const double got = extract_last_number(output);
            const double want = task.expected_number;
            const double tol = 1e-6 * std::max(1.0, std::abs(want));
            if (std::abs(got - want) <= tol) {
                o.success = true;
                o.score = 1.0;
            } else {
                o.feedback = "Expected a final numeric answer of " + std::to_string(want) +
                             " but the output's last number was " + std::to_string(got) + ".";
            }
            return o;
        }
        case TaskKind::UnitTest: return evaluate_unit_tests(task, output, sandbox);
    }
    throw SchemaMismatch("unhandled task kind");
}

Task task_from_json(const nlohmann::json& doc) {
    Task t;
    try {
        t.id = doc.at("id").get<std::string>();
        t.instruction = doc.at("instruction").get<std::string>();
        t.kind = task_kind_from_string(doc.at("kind").get<std::string>());
        const auto& expected = doc.at("expected");
        switch (t.kind) {
            case TaskKind::ExactMatch: t.expected_text = expected.get<std::string>(); break;
            case TaskKind::Numeric: t.expected_number = expected.get<double>(); break;
            case TaskKind::UnitTest:
                for (const auto& jc : expected) {
                    UnitCase c;
                    c.input = jc.at("input").get<std::string>();
                    c.expected = jc.at("output").get<std::string>();
                    t.cases.push_back(c);
                }
                break;
        }
    } catch (const nlohmann::json::exception& ex) {
        throw SchemaMismatch(std::string("bad task document: ") + ex.what());
    }
    return t;
}

std::vector<Task> load_tasks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open tasks file: " + path);
    std::vector<Task> tasks;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            tasks.push_back(task_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& ex) {
            throw SchemaMismatch("bad task on line " + std::to_string(lineno) + ": " + ex.what());
        }
    }
    return tasks;
}

}  // namespace hiva
