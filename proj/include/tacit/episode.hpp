#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "tacit/agent.hpp"
#include "tacit/distill.hpp"
#include "tacit/sqlexec.hpp"

namespace tacit {

struct SeedMemory {
    MemoryKind kind = MemoryKind::SimilarQuestion;
    std::string key;
    std::string body;
};

// A single agent run on one task, as described by a cassette header line
// {"meta": {...}}.
struct EpisodeSpec {
    std::string name;
    std::string task_id;
    std::string agent = "NP-0";
    bool online = false;
    // Distill and commit after a solved online run.
    bool learn = false;
    std::vector<SeedMemory> memory;
    std::string run_id = "episode";
};

nlohmann::json to_json(const EpisodeSpec& s);
EpisodeSpec episode_spec_from_json(const nlohmann::json& j);

// Reads the header of a cassette; throws data_error when it has none.
EpisodeSpec read_episode_spec(const std::filesystem::path& cassette);
// Truncates `cassette` and writes the header line.
void write_episode_header(const std::filesystem::path& cassette, const EpisodeSpec& spec);

struct EpisodeResult {
    Trajectory trajectory;
    std::optional<TaskResult> result;  // comparator verdict on final_sql
    LearnResult learned;
    StoreContents memory;  // store after the run
};

EpisodeResult run_episode(const Corpus& corpus, const EpisodeSpec& spec, Gateway& gateway,
                          std::shared_ptr<Embedder> embedder = nullptr);

// A few human-readable lines: outcome, feedback rounds, final SQL, rows.
std::string episode_summary(const EpisodeResult& r);

}  // namespace tacit
