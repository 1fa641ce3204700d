#include <catch2/catch_amalgamated.hpp>

#include "support.hpp"
#include "tacit/hpa.hpp"

using namespace tacit;
using namespace testsupport;

namespace {

const TaskInstance& task1() { return corpus().task("1"); }

struct Expert {
    std::shared_ptr<ScriptedBackend> backend;
    Gateway gateway;
    HumanProxyAgent hpa;

    explicit Expert(std::vector<AssistantTurn> script)
        : backend(std::make_shared<ScriptedBackend>(std::move(script))),
          gateway(backend),
          hpa(corpus(), gateway, ModelConfig{}, ExecOptions{}) {}
};

}  // namespace

TEST_CASE("reference is prepared once per task", "[hpa]") {
    Expert e({say("COT")});
    auto a = e.hpa.prepare_reference(task1());
    auto b = e.hpa.prepare_reference(task1());
    CHECK(a.cot_text == "COT");
    CHECK(b.cot_text == "COT");
    CHECK(e.gateway.calls() == 1);
    CHECK(e.hpa.reference_calls() == 1);
    // the reference call sees gold and evidence; nobody else does
    auto req = e.backend->requests().front();
    CHECK(text::contains(req.turns.back().content, task1().gold_sql));
    CHECK(text::contains(req.turns.back().content, task1().evidence));
}

TEST_CASE("shared cache across proxy instances", "[hpa]") {
    auto cache = std::make_shared<ReferenceCache>();
    auto backend = std::make_shared<ScriptedBackend>(std::vector<AssistantTurn>{say("COT")});
    Gateway g(backend);
    HumanProxyAgent a(corpus(), g, {}, {}, cache);
    HumanProxyAgent b(corpus(), g, {}, {}, cache);
    a.prepare_reference(task1());
    CHECK(b.prepare_reference(task1()).cot_text == "COT");
    CHECK(backend->requests().size() == 1);
}

TEST_CASE("gold candidate is Correct", "[hpa]") {
    Expert e({say("Looks right.")});
    auto d = e.hpa.review(task1().gold_sql, task1(), {});
    CHECK(d.correct());
    CHECK(d.z == 1);
    CHECK(d.outcome_tag == "output-match");
}

TEST_CASE("engine error text reaches the feedback", "[hpa]") {
    Expert e({say("COT"), say("The query does not run.")});
    auto d = e.hpa.review("SELEC COUNT(*) FROM client", task1(), {});
    CHECK_FALSE(d.correct());
    CHECK(d.outcome_tag == "sql-error");
    auto err = execute(corpus().catalog("financial"), "SELEC COUNT(*) FROM client").error_text;
    REQUIRE_FALSE(err.empty());
    CHECK(text::contains(d.text, err));
}

TEST_CASE("review prompt carries the evaluation and transcript tail", "[hpa]") {
    Expert e({say("COT"), say("Use 'M' for male.")});
    std::vector<ChatTurn> transcript;
    for (int i = 0; i < 10; ++i) transcript.push_back({Role::User, "turn " + std::to_string(i), std::nullopt, "x", ""});
    auto d = e.hpa.review("SELECT COUNT(*) FROM client WHERE gender = 'male'", task1(), transcript);
    CHECK(d.text == "Use 'M' for male.");
    auto prompt = e.backend->requests().back().turns.back().content;
    CHECK(text::contains(prompt, "output-match-fail"));
    CHECK(text::contains(prompt, "turn 9"));
    CHECK(text::contains(prompt, "turn 4"));
    CHECK_FALSE(text::contains(prompt, "turn 3"));
}

TEST_CASE("sanitizer", "[hpa]") {
    const auto& gold = task1().gold_sql;
    CHECK(sanitize("Use gender = 'M'.", gold) == "Use gender = 'M'.");
    CHECK(sanitize("Keep the INNER JOIN district part.", gold) == "Keep the INNER JOIN district part.");
    CHECK_FALSE(leaks_gold("INNER JOIN district", gold));

    auto leaked = "Just run:\n" + gold + ";\nthat is all.";
    CHECK(leaks_gold(leaked, gold));
    auto clean = sanitize(leaked, gold);
    CHECK_FALSE(leaks_gold(clean, gold));
    CHECK(text::contains(clean, "[redacted]"));

    // whitespace and case do not hide a leak
    auto spaced = text::to_lower(gold);
    for (std::size_t p = 0; (p = spaced.find(' ', p)) != std::string::npos; p += 3) spaced.replace(p, 1, " \n ");
    CHECK(leaks_gold(spaced, gold));
}

TEST_CASE("leaking feedback is retried, then replaced", "[hpa]") {
    const auto& gold = task1().gold_sql;
    SECTION("retry succeeds") {
        Expert e({say("COT"), say("Answer: " + gold), say("Filter on gender 'M'.")});
        auto d = e.hpa.review("SELECT 1", task1(), {});
        CHECK(d.text == "Filter on gender 'M'.");
        CHECK(std::find(d.flags.begin(), d.flags.end(), "sanitized-retry") != d.flags.end());
        auto strict = e.backend->requests().back();
        CHECK(strict.turns.back().content == prompt_text("hpa_review_strict"));
        // the leaked text itself is not echoed back to the model
        CHECK_FALSE(leaks_gold(strict.turns[strict.turns.size() - 2].content, gold));
    }
    SECTION("second leak falls back to outcome tags") {
        Expert e({say("COT"), say(gold), say("Really: " + gold)});
        auto d = e.hpa.review("SELECT 1", task1(), {});
        CHECK_FALSE(leaks_gold(d.text, gold));
        CHECK(std::find(d.flags.begin(), d.flags.end(), "sanitized-fallback") != d.flags.end());
        CHECK(text::contains(d.text, "output-match-fail"));
        CHECK_FALSE(d.correct());
    }
}

TEST_CASE("verdicts follow the comparator, not the model", "[hpa]") {
    // the model claims the wrong query is right, and the right one wrong
    Expert e({say("COT"), say("This is correct, well done!"), say("This is wrong, start over.")});
    auto wrong = e.hpa.review("SELECT COUNT(*) FROM client", task1(), {});
    CHECK_FALSE(wrong.correct());
    auto right = e.hpa.review(task1().gold_sql, task1(), {});
    CHECK(right.correct());
}

TEST_CASE("empty candidate gets a request for SQL", "[hpa]") {
    Expert e({});
    auto d = e.hpa.review("   ", task1(), {});
    CHECK_FALSE(d.correct());
    CHECK(e.gateway.calls() == 0);
}
