#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "tacit/agent.hpp"
#include "tacit/corpus.hpp"
#include "tacit/embedding.hpp"
#include "tacit/hpa.hpp"
#include "tacit/memory.hpp"
#include "tacit/sqlparse.hpp"

namespace tacit {

enum class Protocol { SameQuestion, NewQuestion };
std::string to_string(Protocol p);                         // "same", "new"
std::optional<Protocol> protocol_from_string(const std::string& s);  // also accepts SameQuestion/NewQuestion

enum class ErrorCategory { Filter, Distinct, Join, Aggregation, TableSelection, Other };
std::string to_string(ErrorCategory c);
std::optional<ErrorCategory> error_category_from_string(const std::string& s);

struct Classification {
    ErrorCategory category = ErrorCategory::Other;
    std::string tag;  // "unparsed", "no-sql", or empty
};

// Rule-based comparison of clause inventories. Priority on multiple
// differences: TableSelection > Join > Aggregation > Filter > Distinct > Other.
Classification classify_error(const SqlInventory& gold, const SqlInventory& candidate);
Classification classify_error(const TaskInstance& task, const std::string& candidate_sql);

// Half-up to one decimal, in percent units.
double round1(double x);

struct TaskScore {
    std::string task_id;
    std::string db_id;
    Phase phase = Phase::Initial;
    int z = 0;
    std::string outcome;  // agent outcome
    int feedback_rounds = 0;
    std::string final_sql;
    std::optional<ErrorCategory> error_category;  // failures in offline phases
    std::string error_tag;
    std::vector<std::string> flags;

    bool operator==(const TaskScore&) const = default;
};

struct PhaseSummary {
    Phase phase = Phase::Initial;
    std::string db_id;
    std::vector<TaskScore> results;
    std::vector<std::string> excluded;  // gold-defect task ids
    bool completed = true;

    std::size_t scorable() const { return results.size(); }
    std::size_t correct() const;
    // Percent, unrounded; 0 when nothing is scorable.
    double accuracy() const;
};

struct CurvePoint {
    std::string db_id;  // "all" for pooled points
    std::size_t t = 0;
    double accuracy = 0.0;
    std::size_t memory_size = 0;
    std::optional<double> coverage;  // fraction in [0, 1]

    bool operator==(const CurvePoint&) const = default;
};

struct RunReport {
    std::string run_id;
    std::string label;
    Protocol protocol = Protocol::NewQuestion;
    std::uint64_t seed = 0;
    std::vector<PhaseSummary> phases;  // per db, Initial/Online/Final
    // Question-weighted, rounded to one decimal.
    double initial = 0, online = 0, final = 0;
    double delta_i = 0, delta_o = 0;
    std::vector<CurvePoint> curve;
    std::map<std::string, std::size_t> error_histogram;  // failed Final tasks
    bool incomplete = false;
    std::vector<std::string> notes;
    std::vector<RunReport> runs;  // per-run reports when averaged
    nlohmann::json snapshots;     // snapshot manifest, null when none

    std::size_t task_count() const;
    const PhaseSummary* summary(const std::string& db_id, Phase phase) const;
};

// Recomputes aggregates and deltas from the per-db summaries.
void finalize_aggregates(RunReport& report);

// Deltas from rounded phase accuracies; the identity the tables obey.
struct DeltaRow {
    double delta_i = 0;
    double delta_o = 0;
};
DeltaRow deltas_from(double initial, double online, double final);

struct HarnessOptions {
    std::string run_id = "run";
    // Trajectories, snapshots and report files go under out_root/run_id when set.
    std::optional<std::filesystem::path> out_root;
    std::shared_ptr<Embedder> embedder;  // defaults to HashEmbedder
    // Stop the online phase after this many tasks (the Final pass then uses
    // that prefix's memory).
    std::optional<std::size_t> online_limit;
    bool run_final = true;
    bool run_initial = true;
    // Learning-curve grid (ascending online counts). Empty: no curve.
    std::vector<std::size_t> curve_grid;
    // When > 0 and curve_grid is empty: default_grid(train size, curve_step)
    // per database.
    std::size_t curve_step = 0;
    std::shared_ptr<ReferenceCache> references;
};

std::vector<std::size_t> default_grid(std::size_t train_size, std::size_t step = 5);

struct DbRun {
    PhaseSummary initial, online, final;
    std::vector<CurvePoint> curve;
    std::vector<std::string> notes;
    bool incomplete = false;
};

// All phases on one database; snapshots after every online task go into
// `snapshots` (shared across the databases of a run).
DbRun run_database(const Corpus& corpus, const std::string& db_id, const AgentConfig& config, Protocol protocol,
                   std::uint64_t seed, Gateway& gateway, const HarnessOptions& options, SnapshotRegistry& snapshots);

RunReport run_protocol(const Corpus& corpus, const std::string& db_id, const AgentConfig& config, Protocol protocol,
                       std::uint64_t seed, Gateway& gateway, const HarnessOptions& options = {});

// Several databases; `jobs` workers across databases, sequential inside one.
RunReport run_protocol(const Corpus& corpus, const std::vector<std::string>& db_ids, const AgentConfig& config,
                       Protocol protocol, std::uint64_t seed, Gateway& gateway, const HarnessOptions& options = {},
                       int jobs = 1);

// Seeds s, s+1, ...; mean aggregates plus per-run reports in `runs`.
RunReport run_averaged(const Corpus& corpus, const std::vector<std::string>& db_ids, const AgentConfig& config,
                       Protocol protocol, std::uint64_t seed, int n_runs, Gateway& gateway,
                       const HarnessOptions& options = {}, int jobs = 1);

// Final-pass accuracy on the test split against the snapshot after t online
// tasks, for each t in grid. Throws not_found naming t if a snapshot is missing.
std::vector<CurvePoint> curve_from_snapshots(const Corpus& corpus, const EvalSplit& split, const AgentConfig& config,
                                             const std::vector<std::size_t>& grid, const SnapshotRegistry& snapshots,
                                             Gateway& gateway, const HarnessOptions& options);

std::vector<CurvePoint> learning_curve(const Corpus& corpus, const std::string& db_id, const AgentConfig& config,
                                       const std::vector<std::size_t>& grid, std::uint64_t seed, Gateway& gateway,
                                       const HarnessOptions& options = {});

inline constexpr double kCoverageThreshold = 0.9;
inline constexpr const char* kEmptyEvidence = "(no evidence)";

// Fraction of test tasks whose evidence embedding has cosine similarity
// >= 0.9 with some train-prefix task's evidence.
double evidence_coverage(const std::vector<TaskInstance>& train_prefix, const std::vector<TaskInstance>& test,
                         Embedder& embedder);
double evidence_coverage(const std::vector<Embedding>& train_prefix, const std::vector<Embedding>& test);

nlohmann::json to_json(const RunReport& r);
RunReport report_from_json(const nlohmann::json& j);

std::string results_csv(const RunReport& r);
// Rebuilds per-db phase summaries from results.csv text.
std::vector<PhaseSummary> results_from_csv(const std::string& csv);
std::string curve_csv(const RunReport& r);
// Table-shaped text: Initial/Online/Final/Δi/Δo for the same-question
// protocol, Initial/Final/Δi for the new-question protocol.
std::string report_text(const RunReport& r);

// Writes report.json, results.csv, curve.csv, report.txt and, when the report
// carries one, snapshots.json into dir.
void build_report(const RunReport& r, const std::filesystem::path& dir);

}  // namespace tacit
