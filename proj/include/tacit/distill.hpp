#pragma once

#include <string>
#include <vector>

#include "tacit/agent.hpp"

namespace tacit {

struct DistilledKnowledge {
    std::string facts_text;
    std::string mistake_notes;   // step 1 thought
    std::string revealed_notes;  // step 2 thought
    bool had_feedback = false;
    bool completed = false;
};

struct SavedMemory {
    MemoryKind kind;
    std::string key;
    std::string body;
};

// Runs the three-step dialogue. Appends its turns to t.distill_events.
// ContextExceeded and tool-protocol failures leave completed=false and flag
// the trajectory "distill-skipped".
DistilledKnowledge distill_knowledge(Trajectory& t, const AgentConfig& config, const DatabaseCatalog& catalog,
                                     Gateway& gateway);

// SimilarQuestion record: key = NLQ verbatim, body = SQL plus a Knowledge
// block when level >= 1.
InsertResult commit_question_record(const TaskInstance& task, const std::string& final_sql,
                                    const DistilledKnowledge& facts, int level, MemoryStoreSet& store,
                                    const Provenance& provenance);

// Level >= 2 only. Sends the save instruction and dispatches save_memory
// calls with a fresh session counter.
std::vector<SavedMemory> solicit_saves(Trajectory& t, const DistilledKnowledge& facts, const AgentConfig& config,
                                       const DatabaseCatalog& catalog, Gateway& gateway, MemoryStoreSet& store,
                                       const Provenance& provenance);

// Everything that follows a Solved online trajectory: distill (level >= 1),
// commit, solicit saves (level >= 2).
struct LearnResult {
    DistilledKnowledge knowledge;
    InsertResult question_insert = InsertResult::DuplicateKeyIgnored;
    std::vector<SavedMemory> saved;
};
LearnResult learn_from(Trajectory& t, const TaskInstance& task, const AgentConfig& config,
                       const DatabaseCatalog& catalog, Gateway& gateway, MemoryStoreSet& store,
                       const Provenance& provenance);

}  // namespace tacit
