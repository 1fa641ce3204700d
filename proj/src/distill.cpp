#include "tacit/distill.hpp"

#include "tacit/error.hpp"
#include "tacit/prompts.hpp"
#include "tacit/text.hpp"

namespace tacit {

namespace {

constexpr int kDistillCallLimit = 6;

std::vector<ChatTurn> dialogue(const Trajectory& t, const AgentConfig& config, const DatabaseCatalog& catalog) {
    auto turns = agent_conversation(t, config, catalog);
    turns.insert(turns.end(), t.distill_events.begin(), t.distill_events.end());
    return turns;
}

std::string arg(const ToolInvocation& call, const char* name) {
    if (!call.arguments.is_object() || !call.arguments.contains(name)) return "";
    const auto& v = call.arguments[name];
    return v.is_string() ? v.get<std::string>() : v.dump();
}

}  // namespace

DistilledKnowledge distill_knowledge(Trajectory& t, const AgentConfig& config, const DatabaseCatalog& catalog,
                                     Gateway& gateway) {
    DistilledKnowledge k;
    k.had_feedback = t.feedback_rounds > 0;
    t.distill_events.push_back({Role::User, prompt_text(k.had_feedback ? "distill_feedback" : "distill_no_feedback"),
                                std::nullopt, "human", "agent"});
    std::vector<std::string> thoughts;
    try {
        for (int i = 0; i < kDistillCallLimit; ++i) {
            auto resp = gateway.chat(dialogue(t, config, catalog), {human_return_spec()}, config.model);
            if (resp.tool_calls.empty()) {
                t.distill_events.push_back({Role::SelfThought, resp.content, std::nullopt, "agent", "agent"});
                thoughts.push_back(resp.content);
                continue;
            }
            auto facts = text::trim(arg(resp.tool_calls.front(), "message"));
            t.distill_events.push_back({Role::Assistant, facts, std::nullopt, "agent", "human"});
            k.facts_text = facts;
            k.completed = !facts.empty();
            break;
        }
    } catch (const std::exception& e) {
        t.add_flag("distill-skipped");
        t.distill_events.push_back({Role::System, std::string("distillation skipped: ") + e.what(), std::nullopt, "system", ""});
        return k;
    }
    if (!k.completed) {
        t.add_flag("distill-skipped");
        return k;
    }
    if (thoughts.size() >= 3) {
        k.mistake_notes = thoughts[0];
        k.revealed_notes = thoughts[1];
    }
    return k;
}

InsertResult commit_question_record(const TaskInstance& task, const std::string& final_sql,
                                    const DistilledKnowledge& facts, int level, MemoryStoreSet& store,
                                    const Provenance& provenance) {
    auto body = level >= 1 ? question_body(final_sql, facts.facts_text) : final_sql;
    return store.insert(MemoryKind::SimilarQuestion, task.nlq, body, provenance);
}

std::vector<SavedMemory> solicit_saves(Trajectory& t, const DistilledKnowledge& facts, const AgentConfig& config,
                                       const DatabaseCatalog& catalog, Gateway& gateway, MemoryStoreSet& store,
                                       const Provenance& provenance) {
    (void)facts;  // already part of the dialogue
    std::vector<SavedMemory> saved;
    if (config.memory_level < 2) return saved;
    t.distill_events.push_back({Role::User, prompt_text("save_memory_instruction"), std::nullopt, "human", "agent"});
    std::vector<ToolSpec> tools{save_memory_spec(config.memory_level)};
    int counter = 0;
    int call_no = 0;
    const int limit = 2 * config.save_cap + 2;
    try {
        for (int i = 0; i < limit; ++i) {
            auto resp = gateway.chat(dialogue(t, config, catalog), tools, config.model);
            if (resp.tool_calls.empty()) {
                t.distill_events.push_back({Role::Assistant, resp.content, std::nullopt, "agent", "human"});
                break;
            }
            const auto& call = resp.tool_calls.front();
            auto id = "save_" + std::to_string(++call_no);
            t.distill_events.push_back({Role::ToolCall, "", ToolInvocation{call.name, call.arguments, id}, "agent", "save_memory"});
            auto key = arg(call, "query_string");
            auto body = arg(call, "knowledge_string");
            auto kind = arg(call, "memory_type");
            auto before = counter;
            auto ack = tool_save_memory(key, body, kind, counter, config, store, provenance);
            t.distill_events.push_back({Role::ToolResult, ack, ToolInvocation{"save_memory", nlohmann::json::object(), id},
                                        "save_memory", "agent"});
            if (counter > before) saved.push_back({*memory_kind_from_string(kind), key, body});
        }
    } catch (const std::exception& e) {
        t.add_flag("saves-interrupted");
        t.distill_events.push_back({Role::System, std::string("save dialogue stopped: ") + e.what(), std::nullopt, "system", ""});
    }
    if (saved.empty()) t.add_flag("no-saves");
    return saved;
}

LearnResult learn_from(Trajectory& t, const TaskInstance& task, const AgentConfig& config,
                       const DatabaseCatalog& catalog, Gateway& gateway, MemoryStoreSet& store,
                       const Provenance& provenance) {
    if (t.outcome != Outcome::Solved || !t.final_sql) throw state_error("learn_from needs a solved trajectory");
    LearnResult r;
    if (config.memory_level >= 1) r.knowledge = distill_knowledge(t, config, catalog, gateway);
    r.question_insert = commit_question_record(task, *t.final_sql, r.knowledge, config.memory_level, store, provenance);
    if (config.memory_level >= 2 && r.knowledge.completed) {
        r.saved = solicit_saves(t, r.knowledge, config, catalog, gateway, store, provenance);
    }
    return r;
}

}  // namespace tacit
