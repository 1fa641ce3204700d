#include "tacit/hpa.hpp"

#include <regex>

#include "tacit/error.hpp"
#include "tacit/prompts.hpp"
#include "tacit/text.hpp"

namespace tacit {

using nlohmann::json;

std::optional<ReferenceSolution> ReferenceCache::find(const std::string& task_id) const {
    std::lock_guard lock(mu_);
    auto it = items_.find(task_id);
    if (it == items_.end()) return std::nullopt;
    return it->second;
}

void ReferenceCache::put(const ReferenceSolution& r) {
    std::lock_guard lock(mu_);
    items_.emplace(r.task_id, r);
}

std::size_t ReferenceCache::size() const {
    std::lock_guard lock(mu_);
    return items_.size();
}

namespace {

std::string gold_core(const std::string& gold) {
    auto g = text::normalize_whitespace(gold);
    while (!g.empty() && (g.back() == ';' || g.back() == ' ')) g.pop_back();
    return g;
}

std::regex gold_pattern(const std::string& gold) {
    // tokens of the gold query separated by arbitrary whitespace
    auto core = gold_core(gold);
    std::string pat;
    for (char c : core) {
        if (c == ' ') {
            pat += "\\s+";
        } else if (std::string_view("\\^$.|?*+()[]{}").find(c) != std::string_view::npos) {
            pat += '\\';
            pat += c;
        } else {
            pat += c;
        }
    }
    return std::regex(pat, std::regex::icase | std::regex::ECMAScript);
}

}  // namespace

bool leaks_gold(const std::string& feedback, const std::string& gold_sql) {
    auto g = text::to_lower(gold_core(gold_sql));
    if (g.empty()) return false;
    return text::contains(text::to_lower(text::normalize_whitespace(feedback)), g);
}

std::string sanitize(const std::string& feedback, const std::string& gold_sql) {
    if (!leaks_gold(feedback, gold_sql)) return feedback;
    auto out = std::regex_replace(feedback, gold_pattern(gold_sql), "[redacted]");
    if (leaks_gold(out, gold_sql)) {
        // Matches that cross odd whitespace the pattern missed.
        return "[redacted]";
    }
    return out;
}

std::string render_transcript_tail(const std::vector<ChatTurn>& transcript, int n) {
    std::string out;
    auto start = transcript.size() > static_cast<std::size_t>(n) ? transcript.size() - n : 0;
    for (auto i = start; i < transcript.size(); ++i) {
        const auto& t = transcript[i];
        if (!out.empty()) out += "\n\n";
        std::string who = t.author.empty() ? to_string(t.role) : t.author;
        if (!t.recipient.empty()) who += " -> " + t.recipient;
        out += "[" + who + "] ";
        if (t.tool && t.role == Role::ToolCall) out += t.tool->name + " " + t.tool->arguments.dump() + " ";
        out += t.content;
    }
    return out;
}

HumanProxyAgent::HumanProxyAgent(const Corpus& corpus, Gateway& gateway, ModelConfig model, ExecOptions exec,
                                 std::shared_ptr<ReferenceCache> cache)
    : corpus_(corpus), gateway_(gateway), model_(std::move(model)), exec_(exec),
      cache_(cache ? std::move(cache) : std::make_shared<ReferenceCache>()) {}

ReferenceSolution HumanProxyAgent::prepare_reference(const TaskInstance& task) {
    if (auto hit = cache_->find(task.task_id)) return *hit;
    const auto& catalog = corpus_.catalog(task.db_id);
    std::vector<ChatTurn> turns{
        {Role::System, text::fill(prompt_text("hpa_system"), {{"db_schema", catalog.schema_text}}), std::nullopt, "system", ""},
        {Role::User,
         text::fill(prompt_text("hpa_reference"),
                    {{"question", task.nlq}, {"evidence", task.evidence.empty() ? "(none)" : task.evidence}, {"gold_sql", task.gold_sql}}),
         std::nullopt, "expert", ""}};
    ++reference_calls_;
    auto resp = gateway_.chat(turns, {}, model_);
    ReferenceSolution r{task.task_id, resp.content};
    cache_->put(r);
    return r;
}

namespace {

std::string outcome_tag(const TaskResult& r) {
    if (r.z == 1) return "output-match";
    switch (r.outcome.status) {
        case ExecStatus::SqlError: return "sql-error";
        case ExecStatus::Timeout: return "timeout";
        case ExecStatus::Rows: break;
    }
    return "output-match-fail";
}

std::string fallback_text(const TaskResult& r, const std::string& tag) {
    std::string s = "The query is not correct. Evaluation outcome: " + tag + ".";
    if (r.mismatch_reason) s += " Mismatch: " + to_string(*r.mismatch_reason) + ".";
    if (r.outcome.status == ExecStatus::SqlError) s += "\nSQLite error: " + r.outcome.error_text;
    return s;
}

}  // namespace

FeedbackDecision HumanProxyAgent::review(const std::string& candidate_sql, const TaskInstance& task,
                                         const std::vector<ChatTurn>& transcript) {
    if (text::trim(candidate_sql).empty()) {
        FeedbackDecision d;
        d.verdict = FeedbackDecision::Verdict::Feedback;
        d.text = "No SQL query was provided. Please send the SQL query you want reviewed.";
        d.outcome_tag = "empty";
        d.z = 0;
        return d;
    }
    const auto& catalog = corpus_.catalog(task.db_id);
    auto result = score(catalog, task, candidate_sql, exec_);
    if (result.gold_defect()) throw data_error("gold-defect: reference query for task " + task.task_id + " failed: " + result.outcome.error_text);

    FeedbackDecision d;
    d.test_sql = candidate_sql;
    d.z = result.z;
    d.outcome_tag = outcome_tag(result);
    auto system = ChatTurn{Role::System, text::fill(prompt_text("hpa_system"), {{"db_schema", catalog.schema_text}}),
                           std::nullopt, "system", ""};

    if (result.z == 1) {
        // The model only phrases the confirmation; the comparator decided.
        std::vector<ChatTurn> turns{system, {Role::User, text::fill(prompt_text("hpa_confirm"), {{"candidate_sql", candidate_sql}}),
                                             std::nullopt, "expert", ""}};
        auto resp = gateway_.chat(turns, {}, model_);
        d.verdict = FeedbackDecision::Verdict::Correct;
        d.text = sanitize(text::trim(resp.content), task.gold_sql);
        if (d.text.empty()) d.text = "The SQL query is correct and produces the expected output.";
        return d;
    }

    auto reference = prepare_reference(task);
    json eval{{"test_sql", candidate_sql}, {"outcome", d.outcome_tag}};
    if (result.mismatch_reason) eval["mismatch_reason"] = to_string(*result.mismatch_reason);
    if (result.outcome.status == ExecStatus::SqlError) eval["error"] = result.outcome.error_text;
    if (result.outcome.ok()) eval["test_rows_preview"] = format_rows(result.outcome.rows, 5);

    std::vector<ChatTurn> turns{system,
                                {Role::User,
                                 text::fill(prompt_text("hpa_review"), {{"question", task.nlq},
                                                                        {"reference", reference.cot_text},
                                                                        {"evaluation", eval.dump(2)},
                                                                        {"transcript", render_transcript_tail(transcript)}}),
                                 std::nullopt, "expert", ""}};
    auto feedback = text::trim(gateway_.chat(turns, {}, model_).content);
    if (leaks_gold(feedback, task.gold_sql)) {
        d.flags.push_back("sanitized-retry");
        turns.push_back({Role::Assistant, sanitize(feedback, task.gold_sql), std::nullopt, "expert", ""});
        turns.push_back({Role::User, prompt_text("hpa_review_strict"), std::nullopt, "expert", ""});
        feedback = text::trim(gateway_.chat(turns, {}, model_).content);
        if (leaks_gold(feedback, task.gold_sql)) {
            d.flags.push_back("sanitized-fallback");
            feedback = fallback_text(result, d.outcome_tag);
        }
    }
    if (feedback.empty()) feedback = fallback_text(result, d.outcome_tag);
    if (result.outcome.status == ExecStatus::SqlError && !text::contains(feedback, result.outcome.error_text)) {
        feedback += "\n\nSQLite error: " + result.outcome.error_text;
    }
    d.verdict = FeedbackDecision::Verdict::Feedback;
    d.text = feedback;
    return d;
}

}  // namespace tacit
