#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tacit/agent.hpp"
#include "tacit/corpus.hpp"
#include "tacit/llm.hpp"
#include "tacit/prompts.hpp"
#include "tacit/text.hpp"

namespace testsupport {

namespace fs = std::filesystem;
using nlohmann::json;

inline fs::path source_dir() { return fs::path(TACIT_SOURCE_DIR); }
inline fs::path bird_root() { return source_dir() / "tests" / "fixtures" / "bird"; }
inline fs::path cassette_dir() { return source_dir() / "tests" / "fixtures" / "cassettes"; }

inline const tacit::Corpus& corpus() {
    static const tacit::Corpus c = tacit::load_bird(bird_root());
    return c;
}

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> n{0};
        std::random_device rd;
        path_ = fs::temp_directory_path() /
                ("tacit-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(n++));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

inline std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spit(const fs::path& p, const std::string& body) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << body;
}

inline tacit::AssistantTurn say(const std::string& s) { return {s, {}, std::nullopt}; }

inline tacit::AssistantTurn call(const std::string& name, json args) {
    return {"", {tacit::ToolInvocation{name, std::move(args), "c1"}}, std::nullopt};
}

inline std::string fenced(const std::string& sql) { return "```sql\n" + sql + "\n```"; }

inline bool has_tool(const tacit::ChatRequest& req, const std::string& name) {
    return std::any_of(req.tools.begin(), req.tools.end(), [&](const auto& t) { return t.name == name; });
}

inline bool is_expert_request(const tacit::ChatRequest& req) {
    static const auto head = tacit::prompt_text("hpa_system").substr(0, 60);
    return !req.turns.empty() && req.turns.front().role == tacit::Role::System &&
           tacit::text::contains(req.turns.front().content, head);
}

inline std::size_t count_role(const tacit::ChatRequest& req, tacit::Role role, std::size_t from = 0) {
    std::size_t n = 0;
    for (auto i = from; i < req.turns.size(); ++i) n += req.turns[i].role == role;
    return n;
}

// Index just past the last user turn equal to one of `prompts`; 0 if none.
inline std::size_t after_prompt(const tacit::ChatRequest& req, const std::vector<std::string>& prompts) {
    for (auto i = req.turns.size(); i-- > 0;) {
        if (req.turns[i].role != tacit::Role::User) continue;
        for (const auto& p : prompts) {
            if (req.turns[i].content == p) return i + 1;
        }
    }
    return 0;
}

// Rule-based stand-in for a model. Knows every task's gold query and answers
// with it; with wrong_first the first online candidate returns no rows.
// Works for both reasoning styles and for the expert side.
class GoldModel {
public:
    explicit GoldModel(const tacit::Corpus& c, bool wrong_first = false) : wrong_first_(wrong_first) {
        for (const auto& t : c.tasks) by_nlq_.push_back(t);
        std::sort(by_nlq_.begin(), by_nlq_.end(),
                  [](const auto& a, const auto& b) { return a.nlq.size() > b.nlq.size(); });
    }

    tacit::AssistantTurn operator()(const tacit::ChatRequest& req) const {
        using tacit::Role;
        if (is_expert_request(req)) return say("Check the filters against the question and try again.");
        const auto& t = task_of(req);
        if (has_tool(req, "find_memory")) {
            bool looked = false;
            for (const auto& turn : req.turns) looked |= turn.role == Role::ToolResult;
            if (!looked) return call("find_memory", {{"query_string", t.nlq}, {"memory_type", "similar_question"}});
            auto n = count_role(req, Role::SelfThought);
            if (n == 0) return say("Candidate:\n" + fenced(t.gold_sql));
            if (n == 1) return say("The candidate matches the question.");
            return call("human_return", {{"message", "Here is the query."}, {"generated_sql", t.gold_sql}});
        }
        if (has_tool(req, "return_gen_sql")) {
            std::size_t sent = 0;
            bool last_was_gold = false;
            for (const auto& turn : req.turns) {
                if (turn.role == Role::Assistant && turn.recipient == "expert") {
                    ++sent;
                    last_was_gold = tacit::text::contains(tacit::text::normalize_whitespace(turn.content),
                                                          tacit::text::normalize_whitespace(t.gold_sql)) &&
                                    !tacit::text::contains(turn.content, ") LIMIT 0");
                }
            }
            if (last_was_gold) return call("human_return", {{"message", "Confirmed."}, {"generated_sql", t.gold_sql}});
            auto sql = (wrong_first_ && sent == 0) ? wrong(t) : t.gold_sql;
            return call("return_gen_sql", {{"message", "Please review."}, {"generated_sql", sql}});
        }
        if (has_tool(req, "save_memory")) {
            auto from = after_prompt(req, {tacit::prompt_text("save_memory_instruction")});
            auto n = count_role(req, Role::ToolCall, from);
            if (n == 0) {
                return call("save_memory", {{"query_string", "pattern: " + t.nlq},
                                            {"knowledge_string", t.gold_sql},
                                            {"memory_type", "similar_subtask"}});
            }
            if (n == 1 && has_fact_kind(req)) {
                return call("save_memory", {{"query_string", "fact: " + t.nlq},
                                            {"knowledge_string", "Tables: " + t.db_id},
                                            {"memory_type", "database_fact"}});
            }
            return say("Done saving.");
        }
        if (has_tool(req, "human_return")) {
            auto from = after_prompt(req, {tacit::prompt_text("distill_feedback"), tacit::prompt_text("distill_no_feedback")});
            auto n = count_role(req, Role::SelfThought, from);
            if (n < 3) return say("Step " + std::to_string(n + 1) + ".");
            return call("human_return", {{"message", "1. Use the gold pattern for " + t.db_id + "."}, {"generated_sql", ""}});
        }
        // NP generate/refine
        bool refine = tacit::text::contains(req.turns.back().content, "Refine the given OLD SQL");
        return say(fenced((wrong_first_ && !refine && online(req)) ? wrong(t) : t.gold_sql));
    }

    static std::string wrong(const tacit::TaskInstance& t) { return "SELECT * FROM (" + t.gold_sql + ") LIMIT 0"; }

private:
    static bool online(const tacit::ChatRequest& req) {
        return req.turns.front().content == tacit::prompt_text("np_system_online");
    }
    static bool has_fact_kind(const tacit::ChatRequest& req) {
        for (const auto& t : req.tools) {
            if (t.name == "save_memory") return tacit::text::contains(t.parameters.dump(), "database_fact");
        }
        return false;
    }
    const tacit::TaskInstance& task_of(const tacit::ChatRequest& req) const {
        // the line after a question header beats any stored example that mentions another question
        for (const auto& turn : req.turns) {
            if (turn.role != tacit::Role::User) continue;
            for (const char* marker : {"## Question:\n", "## Question \n", "question:\n", "Question:\n"}) {
                auto p = turn.content.find(marker);
                if (p == std::string::npos) continue;
                p += std::string_view(marker).size();
                auto line = tacit::text::trim(turn.content.substr(p, turn.content.find('\n', p) - p));
                for (const auto& t : by_nlq_) {
                    if (tacit::text::trim(t.nlq) == line) return t;
                }
            }
        }
        for (const auto& turn : req.turns) {
            if (turn.role != tacit::Role::User) continue;
            for (const auto& t : by_nlq_) {
                if (tacit::text::contains(turn.content, t.nlq)) return t;
            }
        }
        throw std::runtime_error("GoldModel: request names no known question");
    }

    bool wrong_first_;
    std::vector<tacit::TaskInstance> by_nlq_;
};

}  // namespace testsupport
