#include "hiva/tools.hpp"

#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hiva/subprocess.hpp"

namespace hiva {

namespace {

bool ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

// root module of a dotted name starting at `pos`
std::string read_module_root(const std::string& s, size_t& pos) {
    std::string root;
    while (pos < s.size() && ident_char(s[pos])) root.push_back(s[pos++]);
    while (pos < s.size() && (ident_char(s[pos]) || s[pos] == '.')) ++pos;  // swallow the rest
    return root;
}

std::vector<std::string> imported_roots(const std::string& source) {
    std::vector<std::string> roots;
    std::string line;
    std::istringstream stream(source);
    while (std::getline(stream, line)) {
        // statements can hide behind semicolons
        size_t start = 0;
        while (start <= line.size()) {
            size_t end = line.find(';', start);
            if (end == std::string::npos) end = line.size();
            std::string stmt = line.substr(start, end - start);
            size_t p = 0;
            while (p < stmt.size() && std::isspace(static_cast<unsigned char>(stmt[p]))) ++p;
            if (stmt.compare(p, 7, "import ") == 0) {
                p += 7;
                for (;;) {
                    while (p < stmt.size() && stmt[p] == ' ') ++p;
                    std::string root = read_module_root(stmt, p);
                    if (!root.empty()) roots.push_back(root);
                    // skip "as alias"
                    while (p < stmt.size() && stmt[p] == ' ') ++p;
                    if (stmt.compare(p, 3, "as ") == 0) {
                        p += 3;
                        while (p < stmt.size() && ident_char(stmt[p])) ++p;
                        while (p < stmt.size() && stmt[p] == ' ') ++p;
                    }
                    if (p < stmt.size() && stmt[p] == ',') {
                        ++p;
                        continue;
                    }
                    break;
                }
            } else if (stmt.compare(p, 5, "from ") == 0) {
                p += 5;
                while (p < stmt.size() && stmt[p] == ' ') ++p;
                std::string root = read_module_root(stmt, p);
                if (!root.empty()) roots.push_back(root);
            }
            start = end + 1;
        }
    }
    return roots;
}

bool defines_function(const std::string& source, const std::string& name) {
    size_t pos = 0;
    while ((pos = source.find("def", pos)) != std::string::npos) {
        if (pos > 0 && ident_char(source[pos - 1])) {
            pos += 3;
            continue;
        }
        size_t p = pos + 3;
        if (p >= source.size() || !std::isspace(static_cast<unsigned char>(source[p]))) {
            pos += 3;
            continue;
        }
        while (p < source.size() && std::isspace(static_cast<unsigned char>(source[p]))) ++p;
        if (source.compare(p, name.size(), name) == 0) {
            size_t q = p + name.size();
            while (q < source.size() && std::isspace(static_cast<unsigned char>(source[q]))) ++q;
            if (q < source.size() && source[q] == '(') return true;
        }
        pos += 3;
    }
    return false;
}

}  // namespace

void validate_tool_source(const ToolSchema& schema, const ExecutionPolicy& policy) {
    for (const auto& root : imported_roots(schema.source))
        if (policy.denylist.count(root)) throw RestrictedImport(root);
    if (!defines_function(schema.source, schema.entry_point))
        throw MissingEntryPoint(schema.entry_point);
}

namespace {

constexpr const char* kResultSentinel = "<<<HIVA_TOOL_RESULT>>>";
constexpr const char* kEndSentinel = "<<<HIVA_TOOL_END>>>";

std::string harness_script(const ToolSchema& schema) {
    // documented in the README: stdin -> entry point -> result between
    // sentinel lines; a raised exception exits 3 so the runner sees a crash
    std::string s = schema.source;
    s += "\n\nif __name__ == '__main__':\n"
         "    import sys\n"
         "    _hiva_input = sys.stdin.read()\n"
         "    try:\n"
         "        _hiva_result = " + schema.entry_point + "(_hiva_input)\n"
         "    except Exception as _hiva_exc:\n"
         "        sys.stderr.write('tool raised: %r\\n' % (_hiva_exc,))\n"
         "        sys.exit(3)\n"
         "    sys.stdout.write('\\n" + std::string(kResultSentinel) + "\\n')\n"
         "    sys.stdout.write('' if _hiva_result is None else str(_hiva_result))\n"
         "    sys.stdout.write('\\n" + std::string(kEndSentinel) + "\\n')\n";
    return s;
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& contents) {
        char tmpl[] = "/tmp/hiva_tool_XXXXXX";
        const int fd = mkstemp(tmpl);
        if (fd < 0) throw SandboxFailure("mkstemp failed");
        path = tmpl;
        const ssize_t n = write(fd, contents.data(), contents.size());
        close(fd);
        if (n != static_cast<ssize_t>(contents.size())) {
            unlink(path.c_str());
            throw SandboxFailure("short write to " + path);
        }
    }
    ~TempFile() { unlink(path.c_str()); }
};

}  // namespace

SandboxResult execute_tool(const ToolSchema& schema, const std::string& input,
                           const ExecutionPolicy& policy) {
    const TempFile script(harness_script(schema));
    const auto start = std::chrono::steady_clock::now();

    SandboxResult result;
    bool timed_out_last = false;
    std::string last_err;
    const int attempts = policy.max_retries + 1;

    for (int i = 0; i < attempts; ++i) {
        result.attempts = i + 1;
        ProcessResult pr = run_process({policy.interpreter, script.path}, input, policy.timeout);
        if (pr.timed_out) {
            timed_out_last = true;
            last_err = "timed out";
            continue;
        }
        timed_out_last = false;
        if (pr.exit_code != 0) {
            last_err = pr.err.substr(0, 400);
            continue;
        }
        const size_t mark = pr.out.find(std::string(kResultSentinel) + "\n");
        if (mark == std::string::npos) {
            last_err = "result sentinel missing from tool output";
            continue;
        }
        const size_t begin = mark + std::string(kResultSentinel).size() + 1;
        const size_t end = pr.out.find(std::string("\n") + kEndSentinel, begin);
        result.output = pr.out.substr(begin, end == std::string::npos ? std::string::npos
                                                                      : end - begin);
        result.succeeded = true;
        result.elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start);
        return result;
    }

    result.elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - start);
    const std::string what = "tool '" + schema.name + "' failed after " +
                             std::to_string(result.attempts) + " attempts: " + last_err;
    if (timed_out_last) throw TimedOutExhausted(what);
    throw CrashedExhausted(what);
}

std::string extract_code_block(const std::string& completion) {
    const size_t open = completion.find("```");
    if (open == std::string::npos) throw NoCodeBlock();
    size_t body = completion.find('\n', open);
    if (body == std::string::npos) throw NoCodeBlock();
    ++body;
    const size_t close = completion.find("```", body);
    if (close == std::string::npos) throw NoCodeBlock();
    return completion.substr(body, close - body);
}

namespace {

std::string slug_from_description(const std::string& description) {
    static const std::set<std::string> filler{"a",   "an",  "the",  "function", "to",
                                              "of",  "for", "that", "given",    "with",
                                              "and", "in",  "on"};
    std::vector<std::string> kept;
    std::string cur;
    for (unsigned char c : description + " ") {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            if (!filler.count(cur)) kept.push_back(cur);
            cur.clear();
            if (kept.size() == 3) break;
        }
    }
    if (kept.empty()) return "synthesized_tool";
    std::string slug = kept[0];
    for (size_t i = 1; i < kept.size(); ++i) slug += "_" + kept[i];
    return slug;
}

}  // namespace

ToolSchema synthesize_tool(LlmBackend& llm, const BackendPolicy& backend_policy,
                           const std::string& description, const std::string& examples,
                           const ExecutionPolicy& policy) {
    const ChatRequest req = render_template(
        TemplateId::ToolSynthesis, {{"description", description}, {"examples", examples}});
    const std::string completion = complete(llm, req, backend_policy);

    ToolSchema schema;
    schema.name = slug_from_description(description);
    schema.description = description;
    schema.version = 1;
    schema.source = extract_code_block(completion);
    validate_tool_source(schema, policy);
    return schema;
}

ToolSchema refine_tool(LlmBackend& llm, const BackendPolicy& backend_policy,
                       const ToolSchema& schema, const std::string& feedback,
                       const ExecutionPolicy& policy) {
    const ChatRequest req = render_template(TemplateId::ToolRefinement,
                                            {{"source", schema.source}, {"feedback", feedback}});
    const std::string completion = complete(llm, req, backend_policy);

    ToolSchema next = schema;
    next.source = extract_code_block(completion);
    next.version = schema.version + 1;
    if (!defines_function(next.source, next.entry_point))
        throw EntryPointChanged(next.entry_point);
    validate_tool_source(next, policy);
    return next;
}

void ToolRegistry::register_tool(const ToolSchema& schema) {
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& e : entries_)
        if (e.schema.name == schema.name && e.schema.version == schema.version)
            throw Error("tool already registered: " + schema.name + " v" +
                        std::to_string(schema.version));
    entries_.push_back({schema, 0, 0});
}

ToolSchema ToolRegistry::latest(const std::string& name) const {
    std::lock_guard<std::mutex> lock(mu_);
    const Entry* best = nullptr;
    for (const auto& e : entries_)
        if (e.schema.name == name && (!best || e.schema.version > best->schema.version))
            best = &e;
    if (!best) throw UnknownTool(name);
    return best->schema;
}

ToolSchema ToolRegistry::get(const std::string& name, int version) const {
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& e : entries_)
        if (e.schema.name == name && e.schema.version == version) return e.schema;
    throw UnknownTool(name + " v" + std::to_string(version));
}

void ToolRegistry::record_attempt(const std::string& name, int version, bool success) {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& e : entries_) {
        if (e.schema.name == name && e.schema.version == version) {
            e.attempts++;
            if (success) e.successes++;
            return;
        }
    }
    throw UnknownTool(name + " v" + std::to_string(version));
}

std::vector<ToolRegistry::Entry> ToolRegistry::entries() const {
    std::lock_guard<std::mutex> lock(mu_);
    return entries_;
}

bool ToolRegistry::has(const std::string& name) const {
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& e : entries_)
        if (e.schema.name == name) return true;
    return false;
}

nlohmann::json ToolRegistry::to_json() const {
    std::lock_guard<std::mutex> lock(mu_);
    nlohmann::json tools = nlohmann::json::array();
    for (const auto& e : entries_) {
        tools.push_back({{"name", e.schema.name},
                         {"description", e.schema.description},
                         {"version", e.schema.version},
                         {"entry_point", e.schema.entry_point},
                         {"source", e.schema.source},
                         {"constraints", e.schema.constraints},
                         {"attempts", e.attempts},
                         {"successes", e.successes}});
    }
    return nlohmann::json{{"tools", tools}};
}

ToolRegistry::ToolRegistry(ToolRegistry&& other) noexcept {
    std::lock_guard<std::mutex> lock(other.mu_);
    entries_ = std::move(other.entries_);
}

ToolRegistry& ToolRegistry::operator=(ToolRegistry&& other) noexcept {
    if (this != &other) {
        std::scoped_lock lock(mu_, other.mu_);
        entries_ = std::move(other.entries_);
    }
    return *this;
}

ToolRegistry ToolRegistry::from_json(const nlohmann::json& doc) {
    ToolRegistry reg;
    try {
        for (const auto& jt : doc.at("tools")) {
            Entry e;
            e.schema.name = jt.at("name").get<std::string>();
            e.schema.description = jt.at("description").get<std::string>();
            e.schema.version = jt.at("version").get<int>();
            e.schema.entry_point = jt.at("entry_point").get<std::string>();
            e.schema.source = jt.at("source").get<std::string>();
            e.schema.constraints = jt.at("constraints").get<std::vector<std::string>>();
            e.attempts = jt.value("attempts", 0);
            e.successes = jt.value("successes", 0);
            reg.entries_.push_back(e);
        }
    } catch (const nlohmann::json::exception& ex) {
        throw SchemaMismatch(std::string("bad tool registry document: ") + ex.what());
    }
    return reg;
}

void ToolRegistry::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write tool registry: " + path);
    out << to_json().dump(2) << "\n";
}

ToolRegistry ToolRegistry::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open tool registry: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& ex) {
        throw SchemaMismatch(std::string("bad tool registry file: ") + ex.what());
    }
    return from_json(doc);
}

}  // namespace hiva
