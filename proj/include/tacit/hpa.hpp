#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "tacit/agent.hpp"

namespace tacit {

struct ReferenceSolution {
    std::string task_id;
    std::string cot_text;
};

// Shared across the sessions of one run; each task is prepared once.
class ReferenceCache {
public:
    std::optional<ReferenceSolution> find(const std::string& task_id) const;
    void put(const ReferenceSolution& r);
    std::size_t size() const;

private:
    mutable std::mutex mu_;
    std::map<std::string, ReferenceSolution> items_;
};

inline constexpr std::size_t kLeakFragmentChars = 40;
inline constexpr int kTranscriptTail = 6;

// True when the whole gold query (whitespace-normalized, case-insensitive,
// trailing semicolon ignored) appears in `feedback`.
bool leaks_gold(const std::string& feedback, const std::string& gold_sql);

// Replaces every verbatim occurrence of the gold query with "[redacted]".
std::string sanitize(const std::string& feedback, const std::string& gold_sql);

class HumanProxyAgent final : public FeedbackSource {
public:
    HumanProxyAgent(const Corpus& corpus, Gateway& gateway, ModelConfig model, ExecOptions exec,
                    std::shared_ptr<ReferenceCache> cache = nullptr);

    ReferenceSolution prepare_reference(const TaskInstance& task);

    FeedbackDecision review(const std::string& candidate_sql, const TaskInstance& task,
                            const std::vector<ChatTurn>& transcript) override;

    std::size_t reference_calls() const { return reference_calls_; }
    const std::shared_ptr<ReferenceCache>& cache() const { return cache_; }

private:
    const Corpus& corpus_;
    Gateway& gateway_;
    ModelConfig model_;
    ExecOptions exec_;
    std::shared_ptr<ReferenceCache> cache_;
    std::size_t reference_calls_ = 0;
};

std::string render_transcript_tail(const std::vector<ChatTurn>& transcript, int n = kTranscriptTail);

}  // namespace tacit
