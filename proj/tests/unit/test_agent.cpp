#include <catch2/catch_amalgamated.hpp>

#include "support.hpp"
#include "tacit/agent.hpp"
#include "tacit/hpa.hpp"

using namespace tacit;
using namespace testsupport;

namespace {

std::shared_ptr<Embedder> hash() { return std::make_shared<HashEmbedder>(); }
const Provenance kProv{"unit", "t", 1};
const DatabaseCatalog& financial() { return corpus().catalog("financial"); }
const TaskInstance& task1() { return corpus().task("1"); }

// Feedback source that never approves.
struct Stubborn : FeedbackSource {
    int calls = 0;
    FeedbackDecision review(const std::string& sql, const TaskInstance&, const std::vector<ChatTurn>&) override {
        ++calls;
        FeedbackDecision d;
        d.text = "Still wrong, round " + std::to_string(calls) + ".";
        d.test_sql = sql;
        return d;
    }
};

struct Approver : FeedbackSource {
    int calls = 0;
    FeedbackDecision review(const std::string& sql, const TaskInstance&, const std::vector<ChatTurn>&) override {
        ++calls;
        FeedbackDecision d;
        d.verdict = FeedbackDecision::Verdict::Correct;
        d.text = "Correct.";
        d.test_sql = sql;
        return d;
    }
};

struct Broken : FeedbackSource {
    FeedbackDecision review(const std::string&, const TaskInstance&, const std::vector<ChatTurn>&) override {
        throw std::runtime_error("expert went home");
    }
};

bool has_tool_event(const Trajectory& t, const std::string& name) {
    for (const auto& e : t.events) {
        if (e.role == Role::ToolCall && e.tool && e.tool->name == name) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("labels map to reasoning and level", "[agent]") {
    struct Row {
        const char* label;
        bool procedural;
        int level;
    };
    for (auto r : {Row{"NP-0", false, 0}, Row{"NP-1", false, 1}, Row{"P-0", true, 0}, Row{"P-1", true, 1},
                   Row{"P-2", true, 2}, Row{"P-3", true, 3}}) {
        auto c = AgentConfig::from_label(r.label);
        CHECK(c.procedural == r.procedural);
        CHECK(c.memory_level == r.level);
        CHECK(c.max_feedback_steps == 25);
        CHECK(c.save_cap == 5);
        CHECK(c.example_cap == 3);
    }
    CHECK_THROWS_AS(AgentConfig::from_label("NP-2"), Error);
    CHECK(agent_labels().size() == 6);
}

TEST_CASE("NP offline with empty memory", "[agent]") {
    MemoryStoreSet store("financial", 0, hash());
    Gateway g(std::make_shared<ScriptedBackend>(std::vector<AssistantTurn>{say(fenced("SELECT 1"))}));
    auto cfg = AgentConfig::from_label("NP-0");
    auto t = run_offline(task1(), cfg, {financial(), store, g});
    CHECK(t.outcome == Outcome::Solved);
    CHECK(t.final_sql == "SELECT 1");
    CHECK(t.feedback_rounds == 0);
    REQUIRE(has_tool_event(t, "generate_sql"));
    bool logged = false;
    for (const auto& e : t.events) logged |= text::contains(e.content, kNotUsingExamples);
    CHECK(logged);
    CHECK(store.write_count() == 0);
}

TEST_CASE("NP generate prompt carries the stored example", "[agent]") {
    MemoryStoreSet store("financial", 0, hash());
    store.insert(MemoryKind::SimilarQuestion, task1().nlq, "SELECT 42 AS stored_example", kProv);
    auto backend = std::make_shared<ScriptedBackend>(std::vector<AssistantTurn>{say("SELECT 1")});
    Gateway g(backend);
    run_offline(task1(), AgentConfig::from_label("NP-0"), {financial(), store, g});
    auto reqs = backend->requests();
    REQUIRE(reqs.size() == 1);
    auto rendered = render_examples(select_examples(task1().nlq, store, AgentConfig::from_label("NP-0")), 0);
    CHECK(text::contains(reqs[0].turns.back().content, rendered));
    CHECK(text::contains(reqs[0].turns.back().content, "SELECT 42 AS stored_example"));
}

TEST_CASE("select_examples", "[agent][caps]") {
    auto np0 = AgentConfig::from_label("NP-0");
    auto np1 = AgentConfig::from_label("NP-1");
    MemoryStoreSet empty("financial", 1, hash());
    CHECK(select_examples(task1().nlq, empty, np0).empty());

    MemoryStoreSet one("financial", 1, hash());
    one.insert(MemoryKind::SimilarQuestion, task1().nlq, question_body("SELECT 1", "1. gender is 'M' or 'F'"), kProv);
    auto ex = select_examples(task1().nlq, one, np1);
    REQUIRE(ex.size() == 1);
    auto with = render_examples(ex, 1);
    auto without = render_examples(ex, 0);
    CHECK(text::contains(with, "Knowledge:"));
    CHECK(text::contains(with, "gender is 'M' or 'F'"));
    CHECK_FALSE(text::contains(without, "Knowledge:"));
    CHECK(text::contains(without, "SELECT 1"));

    MemoryStoreSet many("financial", 0, hash());
    for (int i = 0; i < 6; ++i) many.insert(MemoryKind::SimilarQuestion, task1().nlq + " v" + std::to_string(i), "S", kProv);
    CHECK(select_examples(task1().nlq, many, np0).size() == 3);
}

TEST_CASE("find_memory tool", "[agent]") {
    auto p1 = AgentConfig::from_label("P-1");
    auto p3 = AgentConfig::from_label("P-3");
    MemoryStoreSet store("financial", 3, hash());
    CHECK(text::contains(tool_find_memory("x", "database_fact", p1, store), "Error"));
    CHECK(tool_find_memory("anything at all", "similar_subtask", p3, store) == kNoMemories);

    store.insert(MemoryKind::SimilarSubtask, "filter clients by gender", "SELECT * FROM client WHERE gender = 'M'", kProv);
    CHECK(text::contains(tool_find_memory("filter clients by gender", "similar_subtask", p3, store),
                         "SELECT * FROM client WHERE gender = 'M'"));

    const std::string base = "count clients by district and gender";
    for (int i = 0; i < 5; ++i) store.insert(MemoryKind::DatabaseFact, base + " note" + std::to_string(i), "b" + std::to_string(i), kProv);
    store.insert(MemoryKind::DatabaseFact, base, "exact", kProv);
    auto out = tool_find_memory(base, "database_fact", p3, store);
    std::size_t entries = 0;
    for (std::size_t p = 0; (p = out.find("Index: ", p)) != std::string::npos; ++p) ++entries;
    CHECK(entries == 3);
    CHECK(out.find("Index: " + base + "\n") == 0);  // nearest first
}

TEST_CASE("save_memory tool and cap", "[agent][caps]") {
    auto p2 = AgentConfig::from_label("P-2");
    auto p3 = AgentConfig::from_label("P-3");
    MemoryStoreSet store("financial", 3, hash());
    int counter = 0;

    MemoryStoreSet two("financial", 2, hash());
    int c2 = 0;
    CHECK(tool_save_memory("k", "b", "similar_subtask", c2, p2, two, kProv) == kSaved);
    CHECK(text::contains(tool_save_memory("k", "b", "database_fact", c2, p2, two, kProv), "similar_subtask"));
    CHECK(two.size(MemoryKind::DatabaseFact) == 0);

    for (int i = 0; i < 5; ++i) {
        CHECK(tool_save_memory("key " + std::to_string(i), "b", "similar_subtask", counter, p3, store, kProv) == kSaved);
    }
    CHECK(counter == 5);
    auto before = store.contents();
    CHECK(tool_save_memory("key 6", "b", "database_fact", counter, p3, store, kProv) == kSaveRefusal);
    CHECK(store.contents() == before);

    int fresh = 0;
    CHECK(tool_save_memory("key 0", "other", "similar_subtask", fresh, p3, store, kProv) == kSaved);
    CHECK(fresh == 0);
    CHECK(store.size(MemoryKind::SimilarSubtask) == 5);
    CHECK(std::string(kSaveRefusal) ==
          "You have exceeded the number of memories that you can save for this question. Do not save any more memories.");
}

TEST_CASE("online termination", "[agent][caps]") {
    auto np = AgentConfig::from_label("NP-0");
    auto p = AgentConfig::from_label("P-0");
    MemoryStoreSet store("financial", 0, hash());

    SECTION("NP stops after exactly 25 feedback rounds") {
        Gateway g(std::make_shared<ScriptedBackend>([](const ChatRequest&) { return say("SELECT 1"); }));
        Stubborn s;
        auto t = run_online(task1(), np, {financial(), store, g}, s);
        CHECK(t.outcome == Outcome::StepCapExceeded);
        CHECK(t.feedback_rounds == 25);
        CHECK(s.calls == 25);
        CHECK_FALSE(t.final_sql);
    }
    SECTION("P stops after exactly 25 feedback rounds") {
        Gateway g(std::make_shared<ScriptedBackend>([](const ChatRequest&) {
            return call("return_gen_sql", {{"message", "check"}, {"generated_sql", "SELECT 1"}});
        }));
        Stubborn s;
        auto t = run_online(task1(), p, {financial(), store, g}, s);
        CHECK(t.outcome == Outcome::StepCapExceeded);
        CHECK(t.feedback_rounds == 25);
    }
    SECTION("P asks the expert before returning, even with the right query") {
        const auto gold = task1().gold_sql;
        Gateway g(std::make_shared<ScriptedBackend>(std::vector<AssistantTurn>{
            call("human_return", {{"message", "done"}, {"generated_sql", gold}}),
            call("return_gen_sql", {{"message", "check"}, {"generated_sql", gold}}),
            call("human_return", {{"message", "done"}, {"generated_sql", gold}})}));
        Approver a;
        auto t = run_online(task1(), p, {financial(), store, g}, a);
        CHECK(t.outcome == Outcome::Solved);
        CHECK(a.calls == 1);
        CHECK(t.feedback_rounds == 0);  // rounds count corrective replies only
        CHECK(t.final_sql == gold);
        bool noted = false;
        for (const auto& e : t.events) noted |= e.role == Role::System;
        CHECK(noted);
    }
    SECTION("event cap") {
        auto small = np;
        small.max_events = 8;
        Gateway g(std::make_shared<ScriptedBackend>([](const ChatRequest&) { return say("SELECT 1"); }));
        Stubborn s;
        auto t = run_online(task1(), small, {financial(), store, g}, s);
        CHECK(t.outcome == Outcome::StepCapExceeded);
        CHECK(text::contains(t.cause, "event cap"));
        CHECK(t.events.size() <= 8);
    }
    SECTION("context cap") {
        auto tiny = np;
        tiny.model.max_context_tokens = 50;
        Gateway g(std::make_shared<ScriptedBackend>([](const ChatRequest&) { return say("SELECT 1"); }));
        Stubborn s;
        auto t = run_online(task1(), tiny, {financial(), store, g}, s);
        CHECK(t.outcome == Outcome::ContextCapExceeded);
    }
    SECTION("feedback source failure aborts with the cause") {
        Gateway g(std::make_shared<ScriptedBackend>([](const ChatRequest&) { return say("SELECT 1"); }));
        Broken b;
        auto t = run_online(task1(), np, {financial(), store, g}, b);
        CHECK(t.outcome == Outcome::Aborted);
        CHECK(text::contains(t.cause, "expert went home"));
    }
    CHECK(store.write_count() == 0);
}

TEST_CASE("NP refines silently on engine errors, at most twice", "[agent]") {
    MemoryStoreSet store("financial", 0, hash());
    auto backend = std::make_shared<ScriptedBackend>([](const ChatRequest&) { return say("SELEC 1"); });
    Gateway g(backend);
    auto t = run_offline(task1(), AgentConfig::from_label("NP-0"), {financial(), store, g});
    CHECK(backend->requests().size() == 3);
    CHECK(t.outcome == Outcome::Solved);
    CHECK(text::contains(backend->requests()[1].turns.back().content, "SQLite error"));
}

TEST_CASE("P offline must verify before sharing", "[agent]") {
    MemoryStoreSet store("financial", 3, hash());
    auto backend = std::make_shared<ScriptedBackend>(std::vector<AssistantTurn>{
        call("find_memory", {{"query_string", task1().nlq}, {"memory_type", "similar_question"}}),
        call("human_return", {{"message", "here"}, {"generated_sql", "SELECT 1"}}),
        say("Candidate:\n" + fenced("SELECT 1")),
        say("Checked against the schema."),
        call("human_return", {{"message", "here"}, {"generated_sql", "SELECT 1"}})});
    Gateway g(backend);
    auto t = run_offline(task1(), AgentConfig::from_label("P-3"), {financial(), store, g});
    CHECK(t.outcome == Outcome::Solved);
    CHECK(t.final_sql == "SELECT 1");
    CHECK(backend->remaining() == 0);
    // the find_memory call comes before any SQL leaves the agent
    std::size_t find_at = 0, out_at = 0;
    for (std::size_t i = 0; i < t.events.size(); ++i) {
        if (t.events[i].tool && t.events[i].tool->name == "find_memory" && !find_at) find_at = i;
        if (t.events[i].role == Role::Assistant && t.events[i].recipient == "human") out_at = i;
    }
    CHECK(find_at < out_at);
    CHECK(store.write_count() == 0);
}

TEST_CASE("tool surfaces are disjoint", "[agent]") {
    const auto& c = corpus();
    GoldModel model(c, true);
    for (const auto& label : agent_labels()) {
        auto cfg = AgentConfig::from_label(label);
        MemoryStoreSet store("financial", cfg.memory_level, hash());
        Gateway g(std::make_shared<ScriptedBackend>(model));
        HumanProxyAgent hpa(c, g, cfg.model, cfg.exec);
        auto on = run_online(task1(), cfg, {financial(), store, g}, hpa);
        auto off = run_offline(task1(), cfg, {financial(), store, g});
        INFO(label);
        CHECK(on.outcome == Outcome::Solved);
        CHECK(on.feedback_rounds == 1);
        CHECK(off.outcome == Outcome::Solved);
        for (const auto* t : {&on, &off}) {
            if (cfg.procedural) {
                CHECK_FALSE(has_tool_event(*t, "generate_sql"));
                CHECK_FALSE(has_tool_event(*t, "refine_sql"));
            } else {
                CHECK_FALSE(has_tool_event(*t, "find_memory"));
                CHECK_FALSE(has_tool_event(*t, "save_memory"));
            }
        }
        CHECK(store.write_count() == 0);
    }
}

TEST_CASE("online runs are deterministic under a script", "[agent]") {
    const auto& c = corpus();
    auto run = [&] {
        MemoryStoreSet store("financial", 3, hash());
        Gateway g(std::make_shared<ScriptedBackend>(GoldModel(c, true)));
        auto cfg = AgentConfig::from_label("P-3");
        HumanProxyAgent hpa(c, g, cfg.model, cfg.exec);
        return to_json(run_online(task1(), cfg, {financial(), store, g}, hpa)).dump();
    };
    CHECK(run() == run());
}

TEST_CASE("extract_sql", "[agent]") {
    CHECK(extract_sql("```sql\nSELECT 1\n```") == "SELECT 1");
    CHECK(extract_sql("Here you go:\n```\nSELECT 2;\n```\nbye") == "SELECT 2;");
    CHECK(extract_sql("SQL Query: SELECT 3") == "SELECT 3");
    CHECK(extract_sql("  SELECT 4  ") == "SELECT 4");
}

TEST_CASE("trajectory json and jsonl", "[agent]") {
    MemoryStoreSet store("financial", 0, hash());
    Gateway g(std::make_shared<ScriptedBackend>(std::vector<AssistantTurn>{say("SELECT 1")}));
    auto t = run_offline(task1(), AgentConfig::from_label("NP-0"), {financial(), store, g});
    t.add_flag("x");
    t.add_flag("x");
    CHECK(t.flags.size() == 1);
    auto back = trajectory_from_json(to_json(t));
    CHECK(to_json(back) == to_json(t));
    auto lines = text::split_lines(trajectory_jsonl(t));
    std::erase_if(lines, [](const std::string& l) { return l.empty(); });
    CHECK(lines.size() == t.events.size() + 1);
    auto trailer = json::parse(lines.back());
    CHECK(trailer["final_sql"] == "SELECT 1");
    CHECK(trailer["outcome"] == "Solved");
    CHECK(trailer["feedback_rounds"] == 0);
}
