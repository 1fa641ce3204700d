#include <catch2/catch_amalgamated.hpp>

#include "support.hpp"
#include "tacit/distill.hpp"

using namespace tacit;
using namespace testsupport;

namespace {

std::shared_ptr<Embedder> hash() { return std::make_shared<HashEmbedder>(); }
const Provenance kProv{"unit", "1", 1};
const DatabaseCatalog& financial() { return corpus().catalog("financial"); }
const TaskInstance& task1() { return corpus().task("1"); }

Trajectory solved(const std::string& label, int rounds) {
    Trajectory t;
    t.task_id = task1().task_id;
    t.db_id = "financial";
    t.label = label;
    t.phase = Phase::Online;
    t.events.push_back({Role::User, "question", std::nullopt, "human", "agent"});
    t.final_sql = task1().gold_sql;
    t.outcome = Outcome::Solved;
    t.feedback_rounds = rounds;
    return t;
}

AssistantTurn facts(const std::string& s) { return call("human_return", {{"message", s}, {"generated_sql", ""}}); }

AssistantTurn save_call(const std::string& key, const std::string& kind) {
    return call("save_memory", {{"query_string", key}, {"knowledge_string", "body of " + key}, {"memory_type", kind}});
}

}  // namespace

TEST_CASE("prompt variant follows the feedback count", "[distill]") {
    auto cfg = AgentConfig::from_label("P-1");
    for (int rounds : {0, 2}) {
        auto t = solved("P-1", rounds);
        auto backend = std::make_shared<ScriptedBackend>(std::vector<AssistantTurn>{facts("1. x")});
        Gateway g(backend);
        auto k = distill_knowledge(t, cfg, financial(), g);
        CHECK(k.completed);
        CHECK(k.had_feedback == (rounds > 0));
        CHECK(t.distill_events.front().content ==
              prompt_text(rounds > 0 ? "distill_feedback" : "distill_no_feedback"));
    }
}

TEST_CASE("three thoughts precede the facts", "[distill]") {
    auto cfg = AgentConfig::from_label("P-1");
    auto t = solved("P-1", 1);
    Gateway g(std::make_shared<ScriptedBackend>(
        std::vector<AssistantTurn>{say("mistakes"), say("revealed"), say("general"), facts("1. gender is 'M'/'F'")}));
    auto k = distill_knowledge(t, cfg, financial(), g);
    REQUIRE(k.completed);
    CHECK(k.facts_text == "1. gender is 'M'/'F'");
    CHECK(k.mistake_notes == "mistakes");
    CHECK(k.revealed_notes == "revealed");
    std::vector<Role> roles;
    for (const auto& e : t.distill_events) roles.push_back(e.role);
    CHECK(roles == std::vector<Role>{Role::User, Role::SelfThought, Role::SelfThought, Role::SelfThought, Role::Assistant});
}

TEST_CASE("commit_question_record", "[distill]") {
    DistilledKnowledge k;
    k.facts_text = "1. gender is 'M' or 'F'";
    k.completed = true;
    MemoryStoreSet zero("financial", 0, hash());
    CHECK(commit_question_record(task1(), "SELECT 1", k, 0, zero, kProv) == InsertResult::Inserted);
    CHECK(zero.records(MemoryKind::SimilarQuestion)[0].body == "SELECT 1");
    CHECK(zero.records(MemoryKind::SimilarQuestion)[0].key == task1().nlq);

    MemoryStoreSet one("financial", 1, hash());
    commit_question_record(task1(), "SELECT 1", k, 1, one, kProv);
    auto body = one.records(MemoryKind::SimilarQuestion)[0].body;
    CHECK(text::contains(body, "SELECT 1"));
    CHECK(text::contains(body, "Knowledge:"));
    CHECK(text::contains(body, k.facts_text));

    CHECK(commit_question_record(task1(), "SELECT 2", k, 1, one, kProv) == InsertResult::DuplicateKeyIgnored);
    CHECK(one.size(MemoryKind::SimilarQuestion) == 1);
}

TEST_CASE("solicit_saves", "[distill][caps]") {
    DistilledKnowledge k;
    k.facts_text = "1. f";
    k.completed = true;

    SECTION("level 1 makes no calls") {
        auto t = solved("P-1", 1);
        MemoryStoreSet store("financial", 1, hash());
        Gateway g(std::make_shared<ScriptedBackend>());
        CHECK(solicit_saves(t, k, AgentConfig::from_label("P-1"), financial(), g, store, kProv).empty());
        CHECK(g.calls() == 0);
    }
    SECTION("seven attempts, five persisted") {
        auto t = solved("P-3", 1);
        MemoryStoreSet store("financial", 3, hash());
        std::vector<AssistantTurn> script;
        for (int i = 0; i < 7; ++i) script.push_back(save_call("memory " + std::to_string(i), i % 2 ? "database_fact" : "similar_subtask"));
        script.push_back(say("done"));
        Gateway g(std::make_shared<ScriptedBackend>(script));
        auto saved = solicit_saves(t, k, AgentConfig::from_label("P-3"), financial(), g, store, kProv);
        CHECK(saved.size() == 5);
        CHECK(store.size(MemoryKind::SimilarSubtask) + store.size(MemoryKind::DatabaseFact) == 5);
        std::vector<std::string> acks;
        for (const auto& e : t.distill_events) {
            if (e.role == Role::ToolResult) acks.push_back(e.content);
        }
        REQUIRE(acks.size() == 7);
        for (int i = 0; i < 5; ++i) CHECK(acks[i] == kSaved);
        CHECK(acks[5] == kSaveRefusal);
        CHECK(acks[6] == kSaveRefusal);
        CHECK(t.distill_events.front().content == prompt_text("save_memory_instruction"));
    }
    SECTION("P-2 advertises subtasks only") {
        auto t = solved("P-2", 1);
        MemoryStoreSet store("financial", 2, hash());
        auto backend = std::make_shared<ScriptedBackend>(
            std::vector<AssistantTurn>{save_call("f", "database_fact"), save_call("s", "similar_subtask"), say("ok")});
        Gateway g(backend);
        auto saved = solicit_saves(t, k, AgentConfig::from_label("P-2"), financial(), g, store, kProv);
        REQUIRE(saved.size() == 1);
        CHECK(saved[0].kind == MemoryKind::SimilarSubtask);
        auto params = backend->requests().front().tools.front().parameters.dump();
        CHECK_FALSE(text::contains(params, "database_fact"));
    }
    SECTION("a model that never saves") {
        auto t = solved("P-3", 1);
        MemoryStoreSet store("financial", 3, hash());
        Gateway g(std::make_shared<ScriptedBackend>(std::vector<AssistantTurn>{say("nothing to save")}));
        CHECK(solicit_saves(t, k, AgentConfig::from_label("P-3"), financial(), g, store, kProv).empty());
        CHECK(t.has_flag("no-saves"));
    }
}

TEST_CASE("failed distillation still commits the pair", "[distill]") {
    auto cfg = AgentConfig::from_label("P-3");
    cfg.model.max_context_tokens = 3000;  // the distillation dialogue will not fit
    auto t = solved("P-3", 1);
    t.events.push_back({Role::Assistant, std::string(20000, 'x'), std::nullopt, "agent", "expert"});
    MemoryStoreSet store("financial", 3, hash());
    auto backend = std::make_shared<ScriptedBackend>();
    Gateway g(backend);
    auto r = learn_from(t, task1(), cfg, financial(), g, store, kProv);
    CHECK_FALSE(r.knowledge.completed);
    CHECK(t.has_flag("distill-skipped"));
    CHECK(r.question_insert == InsertResult::Inserted);
    CHECK(store.records(MemoryKind::SimilarQuestion)[0].body == task1().gold_sql);
    CHECK(r.saved.empty());
    CHECK(backend->requests().empty());
}

TEST_CASE("learn_from at level 0 only commits", "[distill]") {
    auto t = solved("NP-0", 1);
    MemoryStoreSet store("financial", 0, hash());
    Gateway g(std::make_shared<ScriptedBackend>());
    auto r = learn_from(t, task1(), AgentConfig::from_label("NP-0"), financial(), g, store, kProv);
    CHECK(r.question_insert == InsertResult::Inserted);
    CHECK(g.calls() == 0);

    auto unsolved = solved("NP-0", 25);
    unsolved.outcome = Outcome::StepCapExceeded;
    CHECK_THROWS_AS(learn_from(unsolved, task1(), AgentConfig::from_label("NP-0"), financial(), g, store, kProv), Error);
}
