// Rebuilds the replay cassettes in tests/fixtures/cassettes.
//
// The four sample episodes are scripted reconstructions of the published
// transcripts (model turns copied, tool plumbing ours). The protocol cassette
// comes from a rule-based simulator answering every request of a full P-3
// new-question run on financial.
//
//   tacit_record_fixtures <bird_root> <out_dir>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>

#include "json.hpp"

#include "tacit/episode.hpp"
#include "tacit/error.hpp"
#include "tacit/harness.hpp"
#include "tacit/prompts.hpp"
#include "tacit/sqlparse.hpp"
#include "tacit/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tacit;

namespace {

AssistantTurn say(std::string text) { return {std::move(text), {}, std::nullopt}; }

AssistantTurn call(const std::string& name, json args) {
    return {"", {ToolInvocation{name, std::move(args), ""}}, std::nullopt};
}

std::string fenced(const std::string& sql) { return "```sql\n" + sql + "\n```"; }

void check(bool ok, const std::string& what) {
    if (!ok) throw std::runtime_error("fixture check failed: " + what);
}

// ------------------------------------------------------------ sample texts

const std::string kQ2 =
    "Among the accounts who have loan validity more than 24 months, list out the accounts that have the lowest "
    "approved amount and have account opening date before 1997.";

const std::string kExampleSql =
    "SELECT a.account_id\nFROM loan l\nJOIN account a ON l.account_id = a.account_id\n"
    "WHERE l.duration > 24 AND STRFTIME('%Y', a.date) < '1997'\nORDER BY l.amount ASC\nLIMIT 1";

const std::string kExampleKnowledge =
    "1. **Ordering and Limiting Results**: When you need to find the minimum or maximum value in a dataset, use "
    "ORDER BY to sort the results and LIMIT to restrict the output to the desired number of records. This is a "
    "standard SQL practice for efficiently retrieving extreme values.\n"
    "2. **Date Filtering with STRFTIME**: Use the STRFTIME function to extract specific components (like year, "
    "month, day) from date columns for accurate filtering. This is particularly useful when you need to filter "
    "records based on a specific time period.\n"
    "3. **Schema Understanding**: Familiarize yourself with the columns in each table and their data types. This "
    "knowledge is crucial for constructing accurate SQL queries that meet specific requirements, such as filtering "
    "based on date or retrieving specific columns.";

const std::string kD1Sql =
    "SELECT a.account_id\nFROM loan l\nJOIN account a ON l.account_id = a.account_id\n"
    "WHERE l.duration > 12 AND STRFTIME('%Y', a.date) = '1993'\nORDER BY l.amount DESC\nLIMIT 1;";

const std::string kD2First =
    "SELECT COUNT(c.client_id) \nFROM client c\nJOIN disp d ON c.client_id = d.client_id\n"
    "JOIN account a ON d.account_id = a.account_id\nJOIN district dis ON a.district_id = dis.district_id\n"
    "WHERE c.gender = 'male' \nAND dis.district_id = (\n    SELECT district_id \n    FROM district \n"
    "    ORDER BY A15 DESC \n    LIMIT 1 OFFSET 1\n);";

const std::string kD2Refined =
    "SELECT COUNT(c.client_id) \nFROM client c\nJOIN district dis ON c.district_id = dis.district_id\n"
    "WHERE c.gender = 'M' \nAND dis.district_id = (\n    SELECT district_id \n    FROM district \n"
    "    ORDER BY A15 DESC \n    LIMIT 1 OFFSET 1\n);";

// The expert's own preparation is not shown in the transcript; written here
// from its visible feedback.
const std::string kCrimeReference =
    "1. The number of crimes committed in 1995 is stored in district.A15. Ordering district by A15 in descending "
    "order and taking the second row identifies the branch with the second-highest number of crimes.\n"
    "2. A client belongs to a branch through client.district_id, so client joins district on district_id. The "
    "disp and account tables are not needed.\n"
    "3. Gender is stored as a single character, 'M' for male and 'F' for female, so male clients are gender = 'M'.\n"
    "4. Count the client_id values that satisfy both conditions.";

const std::string kD2Feedback =
    "The generated SQL query has a few issues that need to be addressed:\n\n"
    "1. **Gender Filtering**: The query uses `c.gender = 'male'`, but it should use `c.gender = 'M'` to match the "
    "expected format in the database.\n\n"
    "2. **District Identification**: The subquery should select `A15` instead of `district_id` to correctly "
    "identify the district with the second-highest number of crimes.\n\n"
    "3. **Table Joins**: The joins with the `disp` and `account` tables are unnecessary for this task. You can "
    "directly join the `client` table with the `district` table using `district_id`.\n\n"
    "Please adjust the query accordingly to address these issues.";

const std::string kD2Confirm =
    "The refined SQL query is now correct and produces the expected output. Great job on making the necessary "
    "adjustments!";

const std::string kD3Thought =
    "The similar question found involves filtering accounts based on loan duration and account opening date, but "
    "it focuses on the lowest approved amount and a different year. However, it provides useful insights on how "
    "to structure the query:\n"
    "1. **Join the `loan` and `account` tables**: This is necessary to access both loan details and account "
    "opening dates.\n"
    "2. **Filter by loan duration**: Use a condition to filter loans with a duration greater than 12 months.\n"
    "3. **Filter by account opening date**: Use the `STRFTIME` function to extract the year from the account "
    "opening date and filter for the year 1993.\n"
    "4. **Order by approved amount**: Use `ORDER BY` to sort the results by the approved amount in descending "
    "order to find the highest.\n"
    "5. **Limit the results**: Use `LIMIT` to ensure only the account with the highest approved amount is "
    "returned.\n"
    "Next, I will search for any relevant subtasks or database facts that could assist in constructing the SQL "
    "query.";

// Not in the transcript, which skips from the plan to the verification; our
// offline loop needs the candidate stated in a thought first.
const std::string kD3Candidate = "Following this plan, the candidate query is:\n" + fenced(kD1Sql);

const std::string kD3Final =
    "The SQL query aligns with the information from the memories:\n"
    "- The join between `loan` and `account` tables is correctly implemented.\n"
    "- The filter for loan duration greater than 12 months is correctly applied.\n"
    "- The use of `STRFTIME` to filter accounts opened in 1993 is consistent with the memory.\n"
    "- The ordering by approved amount in descending order and limiting the results to 1 is correctly "
    "implemented.\n"
    "I am confident that this SQL query is accurate and ready to be shared with the human.";

const std::string kD4First =
    "SELECT COUNT(*) FROM client WHERE gender = 'male' AND district_id = (SELECT district_id FROM district ORDER "
    "BY A15 DESC LIMIT 1 OFFSET 1);";

const std::string kD4Revised =
    "SELECT COUNT(*) \nFROM client \nINNER JOIN district ON client.district_id = district.district_id \n"
    "WHERE client.gender = 'M' \nAND district.district_id = (SELECT district_id FROM district ORDER BY A15 DESC "
    "LIMIT 1 OFFSET 1);";

const std::vector<std::string> kD4Thoughts = {
    "To solve this query, I need to follow these steps:\n"
    "1. Identify the branch (district) with the second-highest number of crimes committed in 1995. This "
    "information is available in the 'district' table, specifically in the 'A15' column.\n"
    "2. Once the district is identified, I need to find the number of male clients in that district. This "
    "requires joining the 'client' table with the 'district' table using the 'district_id'.\n"
    "3. Filter the clients by gender to count only male clients.\n"
    "4. Assemble the SQL query using these steps and ensure it adheres to the database schema.\n"
    "Next, I will start by identifying the district with the second-highest number of crimes in 1995.",

    "To find the district with the second-highest number of crimes in 1995, I will use the 'district' table and "
    "order the districts by the 'A15' column in descending order. I will then select the second entry from this "
    "ordered list.\nThe SQL query for this step would look like this:\n" +
        fenced("SELECT district_id FROM district ORDER BY A15 DESC LIMIT 1 OFFSET 1;") +
        "\nThis query will give me the district_id of the branch with the second-highest number of crimes in "
        "1995.\nNext, I will plan how to count the number of male clients in this district.",

    "Now that I have the district_id with the second-highest number of crimes in 1995, I need to count the number "
    "of male clients in that district. To do this, I will join the 'client' table with the 'district' table using "
    "the 'district_id'. I will then filter the clients by gender to count only male clients.\n"
    "The SQL query for this step would look like this:\n" +
        fenced(kD4First) +
        "\nThis query will give me the count of male clients in the district with the second-highest number of "
        "crimes in 1995.\nI will now send this query to the database expert agent for feedback."};

const std::string kD4Feedback =
    "The SQL query needs some adjustments to correctly count the number of male clients in the district with the "
    "second-highest number of crimes in 1995:\n\n"
    "1. **Gender Filtering**: Use `gender = 'M'` instead of `gender = 'male'` to match the database schema.\n\n"
    "2. **Subquery for District**: Ensure the subquery returns the `A15` value for the number of crimes, not the "
    "`district_id`. This is crucial for identifying the correct district.\n\n"
    "3. **Table Join**: Implement an `INNER JOIN` between the `client` and `district` tables on `district_id` to "
    "ensure the correct district is being referenced.\n\n"
    "Please revise the query with these points in mind.";

const std::string kD4Revise =
    "To revise the SQL query, I need to make the following changes based on the feedback:\n"
    "1. Change the gender filter to `gender = 'M'` to match the database schema.\n"
    "2. Correct the subquery to ensure it returns the `district_id` of the district with the second-highest "
    "number of crimes in 1995.\n"
    "3. Implement an `INNER JOIN` between the `client` and `district` tables on `district_id` to ensure the "
    "correct district is being referenced.\n"
    "The revised SQL query should look like this:\n" +
    fenced(kD4Revised) + "\nI will now send this revised query to the database expert agent for feedback.";

const std::string kD4Confirm =
    "The revised SQL query is now correct and accurately counts the number of male clients in the district with "
    "the second-highest number of crimes in 1995. Great job!";

const std::vector<std::string> kD4DistillThoughts = {
    "The mistakes I made in the initial SQL query were:\n"
    "1. **Gender Filtering**: I used `gender = 'male'` instead of `gender = 'M'`. This mistake occurred because I "
    "assumed the gender values were stored as full words rather than single characters.\n"
    "2. **Subquery for District**: I incorrectly assumed that the subquery should return the `district_id` "
    "directly without considering the need to order by the number of crimes (`A15`). This error was due to a "
    "lack of attention to the specific requirement of identifying the district with the second-highest number of "
    "crimes.\n"
    "3. **Table Join**: I initially did not implement an `INNER JOIN` between the `client` and `district` tables, "
    "which is necessary to ensure the correct district is being referenced.",

    "The feedback revealed the following database knowledge:\n"
    "1. **Gender Filtering**: The `client` table stores gender as a single character ('M' for male, 'F' for "
    "female). This is evident from the schema where the `gender` column is of type `text`.\n"
    "2. **Subquery for District**: To find the district with the second-highest number of crimes in 1995, the "
    "subquery must order the `district` table by the `A15` column in descending order and then select the second "
    "entry. This ensures the correct district is identified based on the number of crimes.\n"
    "3. **Table Join**: An `INNER JOIN` between the `client` and `district` tables on `district_id` is necessary "
    "to reference the correct district when counting clients. This join operation is crucial for combining data "
    "from both tables based on the shared `district_id`.",

    "Facts derived from the feedback:\n"
    "1. **Gender Representation**: In the `client` table, gender is represented by single characters ('M' for "
    "male, 'F' for female). This is crucial when filtering clients by gender in SQL queries.\n"
    "2. **Identifying Districts by Crime Rate**: To find a district based on crime rates, use the `A15` column in "
    "the `district` table. Order the districts by this column in descending order to identify districts with the "
    "highest number of crimes.\n"
    "3. **Joining Tables on District ID**: When needing to reference district-specific data for clients, use an "
    "`INNER JOIN` between the `client` and `district` tables on `district_id`. This join is essential for "
    "combining client data with district data accurately."};

const std::string kD4Facts =
    "1. **Gender Representation**: In the `client` table, gender is represented by single characters ('M' for "
    "male, 'F' for female). This is crucial when filtering clients by gender in SQL queries.\n"
    "2. **Identifying Districts by Crime Rate**: To find a district based on crime rates, use the `A15` column in "
    "the `district` table. Order the districts by this column in descending order to identify districts with the "
    "highest number of crimes.\n"
    "3. **Joining Tables on District ID**: When needing to reference district-specific data for clients, use an "
    "`INNER JOIN` between the `client` and `district` tables on `district_id`. This join is essential for "
    "combining client data with district data accurately.";

json save(const std::string& key, const std::string& body, const std::string& kind) {
    return {{"query_string", key}, {"knowledge_string", body}, {"memory_type", kind}};
}

// ------------------------------------------------------------ episodes

struct Episode {
    std::string file;
    EpisodeSpec spec;
    std::vector<AssistantTurn> script;
    std::string rows;
    int feedback_rounds;
    std::size_t saved;
};

std::vector<Episode> sample_episodes() {
    std::vector<Episode> out;

    EpisodeSpec d1;
    d1.name = "NP-0 offline sample: accounts with the highest approved amount";
    d1.task_id = "0";
    d1.agent = "NP-0";
    d1.memory = {{MemoryKind::SimilarQuestion, kQ2, kExampleSql}};
    out.push_back({"d1_np0_offline.jsonl", d1, {say(fenced(kD1Sql))}, "[(10451,)]", 0, 0});

    EpisodeSpec d2;
    d2.name = "NP-0 online sample: male clients in the branch with the second-highest crimes";
    d2.task_id = "1";
    d2.agent = "NP-0";
    d2.online = true;
    d2.learn = true;
    out.push_back({"d2_np0_online.jsonl", d2,
                   {say(fenced(kD2First)), say(kCrimeReference), say(kD2Feedback), say(fenced(kD2Refined)),
                    say(kD2Confirm)},
                   "[(96,)]", 1, 0});

    EpisodeSpec d3;
    d3.name = "P-3 offline sample: accounts with the highest approved amount";
    d3.task_id = "0";
    d3.agent = "P-3";
    d3.memory = {{MemoryKind::SimilarQuestion, kQ2, question_body(kExampleSql, kExampleKnowledge)}};
    const std::string q0 =
        "Among the accounts who have loan validity more than 12 months, list out the accounts that have the "
        "highest approved amount and have account opening date in 1993.";
    out.push_back({"d3_p3_offline.jsonl", d3,
                   {call("find_memory", {{"query_string", q0}, {"memory_type", "similar_question"}}),
                    say(kD3Thought), say(kD3Candidate), say(kD3Final),
                    call("human_return",
                         {{"message",
                           "Here is the SQL query to find the accounts with loan validity more than 12 months, the "
                           "highest approved amount, and account opening date in 1993."},
                          {"generated_sql", kD1Sql}})},
                   "[(10451,)]", 0, 0});

    EpisodeSpec d4;
    d4.name = "P-3 online sample with distillation: male clients in the branch with the second-highest crimes";
    d4.task_id = "1";
    d4.agent = "P-3";
    d4.online = true;
    d4.learn = true;
    std::vector<AssistantTurn> s4;
    for (const auto& t : kD4Thoughts) s4.push_back(say(t));
    s4.push_back(call("return_gen_sql",
                      {{"message", "Please review the following SQL query to ensure it correctly counts the number of "
                                   "male clients in the district with the second-highest number of crimes in 1995."},
                       {"generated_sql", kD4First}}));
    s4.push_back(say(kCrimeReference));
    s4.push_back(say(kD4Feedback));
    s4.push_back(say(kD4Revise));
    s4.push_back(call("return_gen_sql",
                      {{"message", "Please review the revised SQL query to ensure it correctly counts the number of "
                                   "male clients in the district with the second-highest number of crimes in 1995."},
                       {"generated_sql", kD4Revised}}));
    s4.push_back(say(kD4Confirm));
    s4.push_back(call(
        "human_return",
        {{"message",
          "The SQL query has been successfully generated and verified. It counts the number of male clients in the "
          "district with the second-highest number of crimes in 1995. It works by first identifying the district "
          "with the second-highest number of crimes in 1995 using a subquery, then counting the male clients in "
          "that district by joining the `client` and `district` tables on `district_id`. Here is the query:"},
         {"generated_sql", kD4Revised}}));
    for (const auto& t : kD4DistillThoughts) s4.push_back(say(t));
    s4.push_back(call("human_return", {{"message", kD4Facts}, {"generated_sql", ""}}));
    s4.push_back(call("save_memory", save("filter clients by gender", "SELECT * FROM client WHERE gender = 'M';",
                                          "similar_subtask")));
    s4.push_back(call("save_memory", save("identify district with second-highest crimes in 1995",
                                          "SELECT district_id FROM district ORDER BY A15 DESC LIMIT 1 OFFSET 1;",
                                          "similar_subtask")));
    s4.push_back(call("save_memory",
                      save("join client and district tables by district_id",
                           "SELECT * FROM client INNER JOIN district ON client.district_id = district.district_id;",
                           "similar_subtask")));
    s4.push_back(call("save_memory", save("gender representation in client table",
                                          "In the client table, gender is represented by single characters ('M' for "
                                          "male, 'F' for female).",
                                          "database_fact")));
    s4.push_back(call("save_memory",
                      save("sort districts by number of crimes in 1995",
                           "To find a district based on crime rates, use the A15 column in the district table. Order "
                           "the districts by this column in descending order to identify districts with the highest "
                           "number of crimes.",
                           "database_fact")));
    s4.push_back(say("I have saved the most important pieces of knowledge from our interaction for future use. This "
                     "includes how to filter clients by gender, identify districts with the second-highest crimes, "
                     "join client and district tables by district_id, and some key database facts about gender "
                     "representation and sorting districts by crime rates."));
    out.push_back({"d4_p3_online.jsonl", d4, s4, "[(96,)]", 1, 5});
    return out;
}

void record_episode(const Corpus& corpus, const Episode& e, const fs::path& out_dir) {
    auto path = out_dir / e.file;
    write_episode_header(path, e.spec);
    auto scripted = std::make_shared<ScriptedBackend>(e.script);
    Gateway gateway(std::make_shared<RecordingBackend>(scripted, path));
    auto r = run_episode(corpus, e.spec, gateway);
    check(scripted->remaining() == 0, e.file + ": " + std::to_string(scripted->remaining()) + " scripted turns unused");
    check(r.trajectory.outcome == Outcome::Solved, e.file + ": outcome " + to_string(r.trajectory.outcome) + " " +
                                                       r.trajectory.cause);
    check(r.result && r.result->z == 1, e.file + ": final SQL does not match gold");
    check(format_rows(r.result->outcome.rows) == e.rows, e.file + ": rows " + format_rows(r.result->outcome.rows));
    check(r.trajectory.feedback_rounds == e.feedback_rounds, e.file + ": feedback rounds");
    check(r.learned.saved.size() == e.saved, e.file + ": saved " + std::to_string(r.learned.saved.size()));

    // replay must reproduce the same trajectory without the script
    Gateway replay(std::make_shared<ReplayBackend>(path));
    auto again = run_episode(corpus, read_episode_spec(path), replay);
    check(to_json(again.trajectory) == to_json(r.trajectory), e.file + ": replay diverged");
    std::cout << e.file << "\n" << episode_summary(r) << "\n";
}

// ------------------------------------------------------------ protocol simulator

// Offline answers are right for `easy` tasks, and for `learnable` tasks once
// find_memory returns a similar question. Online, every task gets one wrong
// candidate, then the gold query.
class Simulator {
public:
    Simulator(const Corpus& corpus, std::map<std::string, std::string> wrong) : wrong_(std::move(wrong)) {
        for (const auto& t : corpus.tasks) by_nlq_.emplace_back(t.nlq, t);
        // longest first so that a question that prefixes another cannot shadow it
        std::sort(by_nlq_.begin(), by_nlq_.end(),
                  [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
    }

    std::set<std::string> easy, learnable, hits;

    AssistantTurn operator()(const ChatRequest& req) {
        std::set<std::string> tools;
        for (const auto& t : req.tools) tools.insert(t.name);
        if (tools.count("find_memory")) return offline(req);
        if (tools.count("return_gen_sql")) return online(req);
        if (tools.count("save_memory")) return saves(req);
        if (tools.count("human_return")) return distill(req);
        return expert(req);
    }

private:
    const TaskInstance& task_of(const ChatRequest& req) const {
        for (const auto& turn : req.turns) {
            if (turn.role != Role::User) continue;
            for (const auto& [nlq, t] : by_nlq_) {
                if (text::contains(turn.content, nlq)) return t;
            }
        }
        throw std::runtime_error("simulator: no task question in request");
    }

    static std::size_t count(const ChatRequest& req, Role role, std::size_t from = 0) {
        std::size_t n = 0;
        for (auto i = from; i < req.turns.size(); ++i) n += req.turns[i].role == role;
        return n;
    }

    static std::size_t after_prompt(const ChatRequest& req, const std::vector<std::string>& prompts) {
        for (auto i = req.turns.size(); i-- > 0;) {
            for (const auto& p : prompts) {
                if (req.turns[i].role == Role::User && req.turns[i].content == p) return i + 1;
            }
        }
        throw std::runtime_error("simulator: prompt not found");
    }

    std::string wrong_for(const TaskInstance& t) const {
        auto it = wrong_.find(t.task_id);
        return it == wrong_.end() ? t.gold_sql + " LIMIT 0" : it->second;
    }

    AssistantTurn offline(const ChatRequest& req) {
        const auto& t = task_of(req);
        const ChatTurn* result = nullptr;
        for (const auto& turn : req.turns) {
            if (turn.role == Role::ToolResult && turn.tool && turn.tool->name == "find_memory") result = &turn;
        }
        if (!result) return call("find_memory", {{"query_string", t.nlq}, {"memory_type", "similar_question"}});
        auto thoughts = count(req, Role::SelfThought);
        if (thoughts == 0) {
            bool hit = result->content != kNoMemories;
            if (hit) hits.insert(t.task_id);
            bool right = easy.count(t.task_id) || (learnable.count(t.task_id) && hit);
            return say("Candidate query:\n" + fenced(right ? t.gold_sql : wrong_for(t)));
        }
        if (thoughts == 1) return say("The candidate uses the tables and filters the question asks for.");
        std::string sql;
        for (const auto& turn : req.turns) {
            if (turn.role == Role::SelfThought && text::contains(turn.content, "```")) sql = extract_sql(turn.content);
        }
        return call("human_return", {{"message", "Here is the SQL query for your question."}, {"generated_sql", sql}});
    }

    AssistantTurn online(const ChatRequest& req) {
        const auto& t = task_of(req);
        const ChatTurn* last_sent = nullptr;
        for (const auto& turn : req.turns) {
            if (turn.role == Role::Assistant && turn.recipient == "expert") last_sent = &turn;
        }
        auto ask = [&](const std::string& sql) {
            return call("return_gen_sql", {{"message", "Please review this query."}, {"generated_sql", sql}});
        };
        if (!last_sent) return ask(wrong_for(t));
        auto gold = text::normalize_whitespace(t.gold_sql);
        if (text::contains(text::normalize_whitespace(last_sent->content), gold)) {
            return call("human_return", {{"message", "The expert confirmed this query."}, {"generated_sql", t.gold_sql}});
        }
        return ask(t.gold_sql);
    }

    AssistantTurn distill(const ChatRequest& req) {
        const auto& t = task_of(req);
        auto from = after_prompt(req, {prompt_text("distill_feedback"), prompt_text("distill_no_feedback")});
        auto n = count(req, Role::SelfThought, from);
        if (n < 3) return say("Step " + std::to_string(n + 1) + ": reviewing the feedback for this question.");
        return call("human_return", {{"message", facts(t)}, {"generated_sql", ""}});
    }

    AssistantTurn saves(const ChatRequest& req) {
        const auto& t = task_of(req);
        auto from = after_prompt(req, {prompt_text("save_memory_instruction")});
        auto n = count(req, Role::ToolCall, from);
        if (n == 0) return call("save_memory", save("query pattern for: " + t.nlq, t.gold_sql, "similar_subtask"));
        if (n == 1) return call("save_memory", save("tables used for: " + t.nlq, facts(t), "database_fact"));
        return say("I saved a query pattern and a database fact.");
    }

    AssistantTurn expert(const ChatRequest& req) {
        const auto& last = req.turns.back().content;
        if (text::contains(last, "produces the expected output")) {
            return say("The SQL query is correct and produces the expected output.");
        }
        const auto& t = task_of(req);
        if (text::contains(last, "Prepare a step-by-step reasoning")) {
            return say("The answer comes from " + tables(t) + ". Use the stored value formats when filtering.");
        }
        return say("The query does not return the expected result. Re-check which tables, filters and values the "
                   "question needs.");
    }

    static std::string tables(const TaskInstance& t) {
        auto inv = parse_inventory(t.gold_sql);
        if (!inv || inv->tables.empty()) return "the tables named in the question";
        std::string s;
        for (const auto& name : inv->tables) s += (s.empty() ? "" : ", ") + name;
        return "the tables " + s;
    }

    static std::string facts(const TaskInstance& t) {
        return "1. Questions like \"" + t.nlq + "\" are answered from " + tables(t) + ".";
    }

    std::vector<std::pair<std::string, TaskInstance>> by_nlq_;
    std::map<std::string, std::string> wrong_;
};

struct ProtocolTarget {
    std::size_t initial_correct = 11;
    std::size_t final_correct = 18;
};

void record_protocol(const Corpus& corpus, const fs::path& bird_root, const fs::path& out_dir) {
    const std::string db = "financial";
    const std::uint64_t seed = 0;
    const ProtocolTarget target;
    auto policy = json::parse(std::ifstream(bird_root / "policy.json"));
    std::map<std::string, std::string> wrong;
    for (auto& [id, v] : policy.items()) wrong[id] = v.at("wrong_sql").get<std::string>();

    auto config = AgentConfig::from_label("P-3");
    HarnessOptions opts;
    opts.run_id = "fixture";
    opts.curve_step = 5;
    auto split = split_tasks(corpus, db, seed);

    // pass 1: which test questions find a similar question once memory is full
    auto probe = std::make_shared<Simulator>(corpus, wrong);
    for (const auto& t : split.test) probe->learnable.insert(t.task_id);
    {
        Gateway g(std::make_shared<ScriptedBackend>([probe](const ChatRequest& r) { return (*probe)(r); }));
        run_protocol(corpus, db, config, Protocol::NewQuestion, seed, g, opts);
    }
    std::vector<std::string> with_hits, without;
    for (const auto& t : split.test) (probe->hits.count(t.task_id) ? with_hits : without).push_back(t.task_id);
    std::cout << "test questions with a retrievable similar question: " << with_hits.size() << "/" << split.test.size()
              << "\n";

    auto sim = std::make_shared<Simulator>(corpus, wrong);
    for (const auto& id : without) {
        if (sim->easy.size() < target.initial_correct) sim->easy.insert(id);
    }
    for (const auto& id : with_hits) {
        if (sim->easy.size() < target.initial_correct) sim->easy.insert(id);
    }
    for (const auto& id : with_hits) {
        if (sim->easy.count(id)) continue;
        if (sim->easy.size() + sim->learnable.size() < target.final_correct) sim->learnable.insert(id);
    }
    check(sim->easy.size() + sim->learnable.size() == target.final_correct, "not enough learnable test questions");

    auto path = out_dir / "p3_new_financial_s0.jsonl";
    fs::remove(path);
    {
        auto inner = std::make_shared<ScriptedBackend>([sim](const ChatRequest& r) { return (*sim)(r); });
        Gateway g(std::make_shared<RecordingBackend>(inner, path, true, false));
        auto r = run_protocol(corpus, db, config, Protocol::NewQuestion, seed, g, opts);
        check(!r.incomplete, "recorded run incomplete");
        std::cout << report_text(r);
    }
    Gateway replay(std::make_shared<ReplayBackend>(path));
    auto r = run_protocol(corpus, db, config, Protocol::NewQuestion, seed, replay, opts);
    check(!r.incomplete, "replayed run incomplete");
    const auto* init = r.summary(db, Phase::Initial);
    const auto* fin = r.summary(db, Phase::Final);
    check(init->correct() == target.initial_correct && fin->correct() == target.final_correct,
          "replayed counts " + std::to_string(init->correct()) + "/" + std::to_string(fin->correct()));
    std::cout << "p3_new_financial_s0.jsonl: initial " << r.initial << " final " << r.final << " delta_i " << r.delta_i
              << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 3) {
        std::cerr << "usage: tacit_record_fixtures <bird_root> <out_dir>\n";
        return 2;
    }
    try {
        fs::path root = argv[1], out = argv[2];
        fs::create_directories(out);
        auto corpus = load_bird(root);
        for (const auto& e : sample_episodes()) record_episode(corpus, e, out);
        record_protocol(corpus, root, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
