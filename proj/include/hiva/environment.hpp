#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "hiva/tools.hpp"

namespace hiva {

enum class TaskKind { ExactMatch, Numeric, UnitTest };

TaskKind task_kind_from_string(const std::string& s);
std::string to_string(TaskKind k);

struct UnitCase {
    std::string input;
    std::string expected;
};

struct Task {
    std::string id;
    std::string instruction;
    TaskKind kind = TaskKind::ExactMatch;
    std::string expected_text;          // ExactMatch
    double expected_number = 0.0;       // Numeric
    std::vector<UnitCase> cases;        // UnitTest
};

struct Outcome {
    bool success = false;
    double score = 0.0;
    std::string feedback;  // non-empty on failure, deterministic
};

// ExactMatch: casefolded, whitespace-collapsed equality.
// Numeric: last number token of the output, relative tolerance 1e-6.
// UnitTest: output treated as tool source, run per case in the sandbox,
//           score = passing fraction.
// success always implies score == 1.0.
Outcome evaluate(const Task& task, const std::string& output,
                 const ExecutionPolicy& sandbox = {});

// Helpers exposed for tests.
std::string normalize_answer(const std::string& s);
double extract_last_number(const std::string& s);  // NoNumberFound

Task task_from_json(const nlohmann::json& doc);
std::vector<Task> load_tasks(const std::string& path);  // JSON lines

}  // namespace hiva
