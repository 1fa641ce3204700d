#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "tacit/corpus.hpp"
#include "tacit/llm.hpp"
#include "tacit/memory.hpp"
#include "tacit/sqlexec.hpp"

namespace tacit {

inline constexpr const char* kSaveRefusal =
    "You have exceeded the number of memories that you can save for this question. Do not save any more memories.";
inline constexpr const char* kSaved = "Saved.";
inline constexpr const char* kNoMemories = "No memories found for this query.";
inline constexpr const char* kUsingExamples = "Using examples";
inline constexpr const char* kNotUsingExamples = "Not using examples";

struct AgentConfig {
    std::string label = "NP-0";
    bool procedural = false;
    int memory_level = 0;
    int max_feedback_steps = 25;
    int retrieval_k = kDefaultRetrievalK;
    double retrieval_max_distance = kDefaultMaxDistance;
    int example_cap = 3;
    int save_cap = 5;
    int max_events = 120;
    int max_self_refine = 2;
    ModelConfig model;
    ExecOptions exec;

    // NP-0, NP-1, P-0, P-1, P-2, P-3.
    static AgentConfig from_label(const std::string& label);
};

std::vector<std::string> agent_labels();

enum class Outcome { Solved, StepCapExceeded, ContextCapExceeded, Aborted };
enum class Phase { Initial, Online, Final };

std::string to_string(Outcome o);
std::string to_string(Phase p);
std::optional<Outcome> outcome_from_string(const std::string& s);
std::optional<Phase> phase_from_string(const std::string& s);

struct Trajectory {
    std::string task_id;
    std::string db_id;
    std::string label;
    Phase phase = Phase::Initial;
    std::vector<ChatTurn> events;
    std::vector<ChatTurn> distill_events;
    std::optional<std::string> final_sql;
    Outcome outcome = Outcome::Aborted;
    int feedback_rounds = 0;
    std::string cause;                // why a run stopped early
    std::vector<std::string> flags;   // e.g. human-override, sanitized-fallback
    // Verdict of the last review in online runs.
    std::optional<bool> last_verdict_correct;

    bool has_flag(const std::string& f) const;
    void add_flag(const std::string& f);
};

nlohmann::json to_json(const Trajectory& t);
Trajectory trajectory_from_json(const nlohmann::json& j);

// One JSON object per event (tagged with its phase, distillation turns tagged
// "distill"), then a trailer {final_sql, outcome, feedback_rounds}.
void write_trajectory_jsonl(const Trajectory& t, const std::filesystem::path& path);
std::string trajectory_jsonl(const Trajectory& t);

struct FeedbackDecision {
    enum class Verdict { Correct, Feedback };
    Verdict verdict = Verdict::Feedback;
    std::string text;
    std::string test_sql;
    std::string outcome_tag;  // output-match, output-match-fail, sql-error, timeout
    std::optional<int> z;
    std::vector<std::string> flags;

    bool correct() const { return verdict == Verdict::Correct; }
};

// Anything that can judge a candidate: the proxy agent or a live human.
class FeedbackSource {
public:
    virtual ~FeedbackSource() = default;
    virtual FeedbackDecision review(const std::string& candidate_sql, const TaskInstance& task,
                                    const std::vector<ChatTurn>& transcript) = 0;
};

struct Example {
    std::string question;
    std::string sql;
    std::string knowledge;  // empty when the record carries none
    double distance = 0.0;
};

// Splits a SimilarQuestion body into SQL and knowledge block.
std::pair<std::string, std::string> split_question_body(const std::string& body);
std::string question_body(const std::string& sql, const std::string& facts);

std::vector<Example> select_examples(const std::string& nlq, const MemoryStoreSet& store, const AgentConfig& config);
std::string render_examples(const std::vector<Example>& examples, int memory_level);

std::string tool_find_memory(const std::string& query_text, const std::string& kind, const AgentConfig& config,
                             const MemoryStoreSet& store);

// The only write path for subtasks and facts. `session_counter` counts
// successful inserts in the current save dialogue.
std::string tool_save_memory(const std::string& key, const std::string& body, const std::string& kind,
                             int& session_counter, const AgentConfig& config, MemoryStoreSet& store,
                             const Provenance& provenance);

// Pulls the SQL statement out of a model reply (code fences, "SQL Query:"
// prefixes).
std::string extract_sql(const std::string& reply);

// Tool specs advertised to procedural agents.
ToolSpec find_memory_spec();
ToolSpec save_memory_spec(int memory_level);
ToolSpec human_return_spec();
ToolSpec return_gen_sql_spec();

struct AgentContext {
    const DatabaseCatalog& catalog;
    MemoryStoreSet& store;
    Gateway& gateway;
};

Trajectory run_offline(const TaskInstance& task, const AgentConfig& config, AgentContext ctx, Phase phase = Phase::Final);
Trajectory run_online(const TaskInstance& task, const AgentConfig& config, AgentContext ctx, FeedbackSource& source);

// The conversation the agent itself saw, used as the prefix of the
// distillation dialogue.
std::vector<ChatTurn> agent_conversation(const Trajectory& t, const AgentConfig& config, const DatabaseCatalog& catalog);

}  // namespace tacit
