#include "tacit/agent.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "tacit/error.hpp"
#include "tacit/prompts.hpp"
#include "tacit/text.hpp"

namespace tacit {

using nlohmann::json;

AgentConfig AgentConfig::from_label(const std::string& label) {
    AgentConfig c;
    c.label = label;
    if (label == "NP-0") {
        c.procedural = false, c.memory_level = 0;
    } else if (label == "NP-1") {
        c.procedural = false, c.memory_level = 1;
    } else if (label.size() == 3 && label.starts_with("P-") && label[2] >= '0' && label[2] <= '3') {
        c.procedural = true;
        c.memory_level = label[2] - '0';
    } else {
        throw usage_error("unknown agent label '" + label + "' (expected NP-0, NP-1, P-0, P-1, P-2 or P-3)");
    }
    return c;
}

std::vector<std::string> agent_labels() { return {"NP-0", "NP-1", "P-0", "P-1", "P-2", "P-3"}; }

std::string to_string(Outcome o) {
    switch (o) {
        case Outcome::Solved: return "Solved";
        case Outcome::StepCapExceeded: return "StepCapExceeded";
        case Outcome::ContextCapExceeded: return "ContextCapExceeded";
        case Outcome::Aborted: return "Aborted";
    }
    return "Aborted";
}

std::string to_string(Phase p) {
    switch (p) {
        case Phase::Initial: return "initial";
        case Phase::Online: return "online";
        case Phase::Final: return "final";
    }
    return "initial";
}

std::optional<Outcome> outcome_from_string(const std::string& s) {
    for (auto o : {Outcome::Solved, Outcome::StepCapExceeded, Outcome::ContextCapExceeded, Outcome::Aborted}) {
        if (to_string(o) == s) return o;
    }
    return std::nullopt;
}

std::optional<Phase> phase_from_string(const std::string& s) {
    for (auto p : {Phase::Initial, Phase::Online, Phase::Final}) {
        if (to_string(p) == s) return p;
    }
    return std::nullopt;
}

bool Trajectory::has_flag(const std::string& f) const {
    return std::find(flags.begin(), flags.end(), f) != flags.end();
}

void Trajectory::add_flag(const std::string& f) {
    if (!has_flag(f)) flags.push_back(f);
}

json to_json(const Trajectory& t) {
    json events = json::array();
    for (const auto& e : t.events) events.push_back(to_json(e));
    json distill = json::array();
    for (const auto& e : t.distill_events) distill.push_back(to_json(e));
    json j{{"task_id", t.task_id},
           {"db_id", t.db_id},
           {"label", t.label},
           {"phase", to_string(t.phase)},
           {"events", events},
           {"distill_events", distill},
           {"final_sql", t.final_sql ? json(*t.final_sql) : json(nullptr)},
           {"outcome", to_string(t.outcome)},
           {"feedback_rounds", t.feedback_rounds},
           {"flags", t.flags}};
    if (!t.cause.empty()) j["cause"] = t.cause;
    return j;
}

Trajectory trajectory_from_json(const json& j) {
    Trajectory t;
    t.task_id = j.at("task_id").get<std::string>();
    t.db_id = j.value("db_id", "");
    t.label = j.value("label", "");
    t.phase = phase_from_string(j.value("phase", "initial")).value_or(Phase::Initial);
    for (const auto& e : j.value("events", json::array())) t.events.push_back(chat_turn_from_json(e));
    for (const auto& e : j.value("distill_events", json::array())) t.distill_events.push_back(chat_turn_from_json(e));
    if (j.contains("final_sql") && j["final_sql"].is_string()) t.final_sql = j["final_sql"].get<std::string>();
    t.outcome = outcome_from_string(j.value("outcome", "Aborted")).value_or(Outcome::Aborted);
    t.feedback_rounds = j.value("feedback_rounds", 0);
    t.cause = j.value("cause", "");
    t.flags = j.value("flags", std::vector<std::string>{});
    return t;
}

std::string trajectory_jsonl(const Trajectory& t) {
    std::ostringstream out;
    std::size_t seq = 0;
    auto emit = [&](const ChatTurn& e, const std::string& phase) {
        auto j = to_json(e);
        j["phase"] = phase;
        j["seq"] = seq++;
        out << j.dump() << "\n";
    };
    for (const auto& e : t.events) emit(e, to_string(t.phase));
    for (const auto& e : t.distill_events) emit(e, "distill");
    json trailer{{"trailer", true},
                 {"task_id", t.task_id},
                 {"final_sql", t.final_sql ? json(*t.final_sql) : json(nullptr)},
                 {"outcome", to_string(t.outcome)},
                 {"feedback_rounds", t.feedback_rounds},
                 {"flags", t.flags}};
    if (!t.cause.empty()) trailer["cause"] = t.cause;
    out << trailer.dump() << "\n";
    return out.str();
}

void write_trajectory_jsonl(const Trajectory& t, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw data_error("cannot write trajectory " + path.string());
    out << trajectory_jsonl(t);
}

// ---- memory rendering

namespace {
constexpr std::string_view kKnowledgeMarker = "\n\nKnowledge:\n";
}

std::pair<std::string, std::string> split_question_body(const std::string& body) {
    auto pos = body.find(kKnowledgeMarker);
    if (pos == std::string::npos) return {body, ""};
    return {body.substr(0, pos), body.substr(pos + kKnowledgeMarker.size())};
}

std::string question_body(const std::string& sql, const std::string& facts) {
    auto f = text::trim(facts);
    if (f.empty()) return sql;
    return sql + std::string(kKnowledgeMarker) + f;
}

std::vector<Example> select_examples(const std::string& nlq, const MemoryStoreSet& store, const AgentConfig& config) {
    std::vector<Example> out;
    if (config.example_cap <= 0) return out;
    auto cap = std::min(config.example_cap, config.retrieval_k);
    for (const auto& hit : store.retrieve(MemoryKind::SimilarQuestion, nlq, cap, config.retrieval_max_distance)) {
        auto [sql, knowledge] = split_question_body(hit.record.body);
        out.push_back({hit.record.key, sql, knowledge, hit.distance});
    }
    return out;
}

std::string render_examples(const std::vector<Example>& examples, int memory_level) {
    std::string out;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& e = examples[i];
        if (i) out += "\n\n";
        out += "Question: " + e.question + "\nSQL:\n" + e.sql;
        if (memory_level >= 1 && !e.knowledge.empty()) out += "\nKnowledge:\n" + e.knowledge;
    }
    return out;
}

namespace {

std::string allowed_kinds_text(int level, bool include_question) {
    std::string s;
    for (auto k : enabled_kinds(level)) {
        if (!include_question && k == MemoryKind::SimilarQuestion) continue;
        if (!s.empty()) s += ", ";
        s += to_string(k);
    }
    return s.empty() ? "none" : s;
}

}  // namespace

std::string tool_find_memory(const std::string& query_text, const std::string& kind, const AgentConfig& config,
                             const MemoryStoreSet& store) {
    auto k = memory_kind_from_string(kind);
    if (!k || !kind_enabled(config.memory_level, *k)) {
        return "Error: memory type '" + kind + "' is not available to this agent. Available memory types: " +
               allowed_kinds_text(config.memory_level, true) + ".";
    }
    if (text::trim(query_text).empty()) return "Error: query_string must not be empty.";
    auto hits = store.retrieve(*k, query_text, config.retrieval_k, config.retrieval_max_distance);
    if (hits.empty()) return kNoMemories;
    std::string out;
    for (std::size_t i = 0; i < hits.size(); ++i) {
        if (i) out += "\n\n";
        const auto& r = hits[i].record;
        out += "Index: " + r.key + "\n";
        if (*k == MemoryKind::SimilarQuestion) {
            auto [sql, knowledge] = split_question_body(r.body);
            out += "SQL:\n" + sql;
            if (!knowledge.empty()) out += "\nKnowledge:\n" + knowledge;
        } else {
            out += r.body;
        }
    }
    return out;
}

std::string tool_save_memory(const std::string& key, const std::string& body, const std::string& kind,
                             int& session_counter, const AgentConfig& config, MemoryStoreSet& store,
                             const Provenance& provenance) {
    if (session_counter >= config.save_cap) return kSaveRefusal;
    auto k = memory_kind_from_string(kind);
    if (!k || *k == MemoryKind::SimilarQuestion || !kind_enabled(config.memory_level, *k)) {
        return "Error: memory type '" + kind + "' cannot be saved. Allowed memory types: " +
               allowed_kinds_text(config.memory_level, false) + ".";
    }
    if (text::trim(key).empty() || text::trim(body).empty()) {
        return "Error: query_string and knowledge_string must not be empty.";
    }
    auto r = store.insert(*k, key, body, provenance);
    if (r == InsertResult::Inserted) ++session_counter;
    return kSaved;
}

std::string extract_sql(const std::string& reply) {
    std::string s = reply;
    auto fence = s.find("```");
    if (fence != std::string::npos) {
        auto start = s.find('\n', fence);
        auto end = start == std::string::npos ? std::string::npos : s.find("```", start);
        if (start != std::string::npos) {
            s = s.substr(start + 1, end == std::string::npos ? std::string::npos : end - start - 1);
        }
    } else {
        auto lower = text::to_lower(s);
        auto p = lower.rfind("sql query:");
        if (p != std::string::npos) s = s.substr(p + 10);
    }
    return text::trim(s);
}

// ---- tool specs

ToolSpec find_memory_spec() {
    return {"find_memory", prompt_text("tool_find_memory"),
            json{{"type", "object"},
                 {"properties",
                  {{"query_string", {{"type", "string"}}},
                   {"memory_type", {{"type", "string"}, {"enum", {"similar_question", "similar_subtask", "database_fact"}}}}}},
                 {"required", {"query_string", "memory_type"}}}};
}

ToolSpec save_memory_spec(int memory_level) {
    json kinds = json::array();
    for (auto k : enabled_kinds(memory_level)) {
        if (k != MemoryKind::SimilarQuestion) kinds.push_back(to_string(k));
    }
    return {"save_memory", prompt_text("tool_save_memory"),
            json{{"type", "object"},
                 {"properties",
                  {{"query_string", {{"type", "string"}}},
                   {"knowledge_string", {{"type", "string"}}},
                   {"memory_type", {{"type", "string"}, {"enum", kinds}}}}},
                 {"required", {"query_string", "knowledge_string", "memory_type"}}}};
}

ToolSpec human_return_spec() {
    return {"human_return", "Communication spec for sending a message to the human. Put the explanation in message and the SQL query in generated_sql.",
            json{{"type", "object"},
                 {"properties", {{"message", {{"type", "string"}}}, {"generated_sql", {{"type", "string"}}}}},
                 {"required", {"message", "generated_sql"}}}};
}

ToolSpec return_gen_sql_spec() {
    return {"return_gen_sql", "Communication spec for sending a generated SQL query to the Expert agent for review. Put your message in message and the SQL query in generated_sql.",
            json{{"type", "object"},
                 {"properties", {{"message", {{"type", "string"}}}, {"generated_sql", {{"type", "string"}}}}},
                 {"required", {"message", "generated_sql"}}}};
}

// ---- runs

namespace {

ChatTurn turn(Role role, std::string content, std::string author, std::string recipient = "") {
    return {role, std::move(content), std::nullopt, std::move(author), std::move(recipient)};
}

std::string str_arg(const ToolInvocation& t, const char* name) {
    if (!t.arguments.is_object() || !t.arguments.contains(name)) return "";
    const auto& v = t.arguments[name];
    return v.is_string() ? v.get<std::string>() : v.dump();
}

std::string user_task_text(const TaskInstance& task) {
    return text::fill(prompt_text("user_task"), {{"question", task.nlq}, {"database_name", task.db_id}});
}

std::string system_prompt(const AgentConfig& config, bool online, const DatabaseCatalog& catalog) {
    if (!config.procedural) return prompt_text(online ? "np_system_online" : "np_system_offline");
    return text::fill(prompt_text(online ? "p_system_online" : "p_system_offline"), {{"db_schema", catalog.schema_text}});
}

class Run {
public:
    Run(const TaskInstance& task, const AgentConfig& config, AgentContext ctx, Phase phase)
        : task_(task), config_(config), ctx_(ctx) {
        traj_.task_id = task.task_id;
        traj_.db_id = task.db_id;
        traj_.label = config.label;
        traj_.phase = phase;
        traj_.outcome = Outcome::Aborted;
    }

    Trajectory offline() {
        guarded([&] { config_.procedural ? p_offline() : np(nullptr); });
        return std::move(traj_);
    }

    Trajectory online(FeedbackSource& source) {
        guarded([&] { config_.procedural ? p_online(source) : np(&source); });
        return std::move(traj_);
    }

private:
    struct EventCap {};

    template <class F>
    void guarded(F&& f) {
        try {
            f();
        } catch (const EventCap&) {
            traj_.outcome = Outcome::StepCapExceeded;
            traj_.cause = "event cap of " + std::to_string(config_.max_events) + " reached";
        } catch (const ContextExceeded& e) {
            traj_.outcome = Outcome::ContextCapExceeded;
            traj_.cause = e.what();
        } catch (const std::exception& e) {
            traj_.outcome = Outcome::Aborted;
            traj_.cause = e.what();
        }
    }

    void push(ChatTurn t) {
        if (static_cast<int>(traj_.events.size()) >= config_.max_events) throw EventCap{};
        traj_.events.push_back(std::move(t));
    }

    std::string next_call_id() { return "call_" + std::to_string(++calls_); }

    void push_tool_call(const std::string& name, json args, std::string content = "") {
        last_call_id_ = next_call_id();
        ChatTurn t = turn(Role::ToolCall, std::move(content), "agent", name);
        t.tool = ToolInvocation{name, std::move(args), last_call_id_};
        push(std::move(t));
    }

    void push_tool_result(const std::string& name, std::string content) {
        ChatTurn t = turn(Role::ToolResult, std::move(content), name, "agent");
        t.tool = ToolInvocation{name, json::object(), last_call_id_};
        push(std::move(t));
    }

    std::vector<ChatTurn> conversation(bool online) const {
        std::vector<ChatTurn> turns;
        turns.push_back(turn(Role::System, system_prompt(config_, online, ctx_.catalog), "system"));
        turns.insert(turns.end(), traj_.events.begin(), traj_.events.end());
        return turns;
    }

    // ---- non-procedural pipeline

    std::string np_call(const std::string& user_text, bool online) {
        std::vector<ChatTurn> turns{turn(Role::System, system_prompt(config_, online, ctx_.catalog), "system"),
                                    turn(Role::User, user_text, "agent")};
        auto resp = ctx_.gateway.chat(turns, {}, config_.model);
        return extract_sql(resp.content);
    }

    std::string np_generate(bool online) {
        auto examples = select_examples(task_.nlq, ctx_.store, config_);
        examples_text_ = render_examples(examples, config_.memory_level);
        std::string log = "Database name: " + task_.db_id + "\n" + (examples.empty() ? kNotUsingExamples : kUsingExamples);
        push_tool_call("generate_sql", {{"question", task_.nlq}, {"database_name", task_.db_id}}, log);
        auto prompt_text_filled = text::fill(prompt_text("np_generate_sql"), {{"examples", examples_text_},
                                                                             {"question", task_.nlq},
                                                                             {"database_schema", ctx_.catalog.schema_text}});
        auto sql = np_call(prompt_text_filled, online);
        push_tool_result("generate_sql", "SQL query generated! Generate SQL is \n" + sql);
        return sql;
    }

    std::string np_refine(const std::string& sql, const std::string& feedback, bool online) {
        push_tool_call("refine_sql", {{"question", task_.nlq},
                                      {"generated_sql", sql},
                                      {"feedback", feedback},
                                      {"database_name", task_.db_id}});
        auto filled = text::fill(prompt_text("np_refine_sql"), {{"question", task_.nlq},
                                                                {"database_name", task_.db_id},
                                                                {"database_schema", ctx_.catalog.schema_text},
                                                                {"examples", examples_text_},
                                                                {"feedback", feedback},
                                                                {"generated_sql", sql}});
        auto refined = np_call(filled, online);
        push_tool_result("refine_sql", "SQL refined! Refined SQL is \n" + refined);
        return refined;
    }

    // Silent self-refinement on engine errors, before anyone sees the SQL.
    std::string np_self_refine(std::string sql, bool online) {
        for (int i = 0; i < config_.max_self_refine; ++i) {
            auto out = execute(ctx_.catalog, sql, config_.exec);
            if (out.status != ExecStatus::SqlError) break;
            sql = np_refine(sql, "SQLite error: " + out.error_text, online);
        }
        return sql;
    }

    void np(FeedbackSource* source) {
        const bool online = source != nullptr;
        push(turn(Role::User, user_task_text(task_), "human", "agent"));
        auto sql = np_self_refine(np_generate(online), online);
        if (!online) {
            push(turn(Role::Assistant, "Here is the SQL query for your question.\n\n" + sql, "agent", "human"));
            traj_.final_sql = sql;
            traj_.outcome = Outcome::Solved;
            return;
        }
        for (;;) {
            push(turn(Role::Assistant, "Could you please review the generated SQL query for correctness?\n\n" + sql,
                      "agent", "expert"));
            auto decision = source->review(sql, task_, traj_.events);
            for (const auto& f : decision.flags) traj_.add_flag(f);
            push(turn(Role::User, decision.text, "expert", "agent"));
            traj_.last_verdict_correct = decision.correct();
            if (decision.correct()) {
                push(turn(Role::Assistant,
                          "The SQL query has been successfully generated and verified. Here is the final query for your request:\n\n" + sql,
                          "agent", "human"));
                traj_.final_sql = sql;
                traj_.outcome = Outcome::Solved;
                return;
            }
            if (++traj_.feedback_rounds >= config_.max_feedback_steps) {
                traj_.outcome = Outcome::StepCapExceeded;
                traj_.cause = "feedback cap of " + std::to_string(config_.max_feedback_steps) + " rounds reached";
                return;
            }
            sql = np_refine(sql, decision.text, online);
        }
    }

    // ---- procedural loop

    void p_offline() {
        push(turn(Role::User, user_task_text(task_), "human", "agent"));
        std::vector<ToolSpec> tools{find_memory_spec(), human_return_spec()};
        bool corrected = false;
        for (;;) {
            auto resp = ctx_.gateway.chat(conversation(false), tools, config_.model);
            if (resp.tool_calls.empty()) {
                push(turn(Role::SelfThought, resp.content, "agent", "agent"));
                continue;
            }
            const auto& call = resp.tool_calls.front();
            if (call.name == "find_memory") {
                auto q = str_arg(call, "query_string");
                auto kind = str_arg(call, "memory_type");
                push_tool_call("find_memory", call.arguments);
                push_tool_result("find_memory", tool_find_memory(q, kind, config_, ctx_.store));
                continue;
            }
            // human_return
            auto sql = text::trim(str_arg(call, "generated_sql"));
            if (!corrected && !verified_before_sharing(sql)) {
                corrected = true;
                push(turn(Role::System,
                          "You are REQUIRED to pose a candidate answer to yourself, and check it first! Send yourself a "
                          "message containing the candidate SQL, verify it against your memories in a further "
                          "message, and only then share it with the human.",
                          "system", "agent"));
                continue;
            }
            push(turn(Role::Assistant, human_message(call, sql), "agent", "human"));
            traj_.final_sql = sql;
            traj_.outcome = sql.empty() ? Outcome::Aborted : Outcome::Solved;
            if (sql.empty()) traj_.cause = "agent returned an empty SQL query";
            return;
        }
    }

    static std::string human_message(const ToolInvocation& call, const std::string& sql) {
        auto msg = str_arg(call, "message");
        return sql.empty() ? msg : msg + "\n\n" + sql;
    }

    // A SelfThought must follow the last thought that states the candidate.
    bool verified_before_sharing(const std::string& sql) const {
        auto norm = text::normalize_whitespace(sql);
        if (norm.empty()) return false;
        std::optional<std::size_t> candidate;
        for (std::size_t i = 0; i < traj_.events.size(); ++i) {
            const auto& e = traj_.events[i];
            if (e.role == Role::SelfThought && text::contains(text::normalize_whitespace(e.content), norm)) candidate = i;
        }
        if (!candidate) return false;
        for (auto i = *candidate + 1; i < traj_.events.size(); ++i) {
            if (traj_.events[i].role == Role::SelfThought) return true;
        }
        return false;
    }

    void p_online(FeedbackSource& source) {
        push(turn(Role::User, user_task_text(task_), "human", "agent"));
        std::vector<ToolSpec> tools{return_gen_sql_spec(), human_return_spec()};
        std::optional<std::string> confirmed;
        for (;;) {
            auto resp = ctx_.gateway.chat(conversation(true), tools, config_.model);
            if (resp.tool_calls.empty()) {
                push(turn(Role::SelfThought, resp.content, "agent", "agent"));
                continue;
            }
            const auto& call = resp.tool_calls.front();
            auto sql = text::trim(str_arg(call, "generated_sql"));
            if (call.name == "return_gen_sql") {
                push(turn(Role::Assistant, human_message(call, sql), "agent", "expert"));
                auto decision = source.review(sql, task_, traj_.events);
                for (const auto& f : decision.flags) traj_.add_flag(f);
                push(turn(Role::User, decision.text, "expert", "agent"));
                traj_.last_verdict_correct = decision.correct();
                if (decision.correct()) {
                    confirmed = sql;
                    continue;
                }
                confirmed.reset();
                if (++traj_.feedback_rounds >= config_.max_feedback_steps) {
                    traj_.outcome = Outcome::StepCapExceeded;
                    traj_.cause = "feedback cap of " + std::to_string(config_.max_feedback_steps) + " rounds reached";
                    return;
                }
                continue;
            }
            // human_return: only a confirmed query may leave the loop.
            if (!confirmed || text::normalize_whitespace(*confirmed) != text::normalize_whitespace(sql)) {
                push(turn(Role::System,
                          "You MUST get confirmation from the expert that this exact SQL query is correct before "
                          "returning it to the human. Use return_gen_sql to request feedback.",
                          "system", "agent"));
                continue;
            }
            push(turn(Role::Assistant, human_message(call, sql), "agent", "human"));
            traj_.final_sql = *confirmed;
            traj_.outcome = Outcome::Solved;
            return;
        }
    }

    const TaskInstance& task_;
    AgentConfig config_;
    AgentContext ctx_;
    Trajectory traj_;
    std::string examples_text_;
    std::string last_call_id_;
    int calls_ = 0;
};

}  // namespace

Trajectory run_offline(const TaskInstance& task, const AgentConfig& config, AgentContext ctx, Phase phase) {
    return Run(task, config, ctx, phase).offline();
}

Trajectory run_online(const TaskInstance& task, const AgentConfig& config, AgentContext ctx, FeedbackSource& source) {
    return Run(task, config, ctx, Phase::Online).online(source);
}

std::vector<ChatTurn> agent_conversation(const Trajectory& t, const AgentConfig& config, const DatabaseCatalog& catalog) {
    std::vector<ChatTurn> turns;
    turns.push_back({Role::System, system_prompt(config, t.phase == Phase::Online, catalog), std::nullopt, "system", ""});
    turns.insert(turns.end(), t.events.begin(), t.events.end());
    return turns;
}

}  // namespace tacit
