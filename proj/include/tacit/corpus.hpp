#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace tacit {

struct TaskInstance {
    std::string task_id;
    std::string db_id;
    std::string nlq;
    std::string gold_sql;
    std::string evidence;
    std::optional<std::string> difficulty;

    bool operator==(const TaskInstance&) const = default;
};

struct ColumnInfo {
    std::string name;
    std::string declared_type;
    bool operator==(const ColumnInfo&) const = default;
};

struct TableInfo {
    std::string name;
    std::vector<ColumnInfo> columns;
    bool operator==(const TableInfo&) const = default;
};

// One row of a BIRD database_description CSV.
struct ColumnDescription {
    std::string original_column_name;
    std::string column_name;
    std::string column_description;
    std::string data_format;
    std::string value_description;
    bool operator==(const ColumnDescription&) const = default;
};

struct DatabaseCatalog {
    std::string db_id;
    std::filesystem::path sqlite_path;
    std::vector<TableInfo> tables;
    // Keyed by table name as it appears in the SQLite master table.
    std::map<std::string, std::vector<ColumnDescription>> descriptions;
    std::string schema_text;

    bool operator==(const DatabaseCatalog&) const = default;
};

struct Corpus {
    std::vector<TaskInstance> tasks;
    std::map<std::string, DatabaseCatalog> catalogs;
    std::vector<std::string> warnings;

    const DatabaseCatalog& catalog(const std::string& db_id) const;
    const TaskInstance& task(const std::string& task_id) const;
    std::vector<TaskInstance> tasks_for(const std::string& db_id) const;
    std::map<std::string, std::size_t> counts_by_db() const;
};

struct EvalSplit {
    std::string db_id;
    std::vector<TaskInstance> train;
    std::vector<TaskInstance> test;
    std::uint64_t seed = 0;
};

// Reads <root>/dev.json and <root>/dev_databases/<db_id>/.
Corpus load_bird(const std::filesystem::path& root);

// Reads table and column metadata from the SQLite file and attaches the
// description CSVs found next to it. Missing or unreadable CSVs are appended
// to `warnings`.
DatabaseCatalog load_catalog(const std::string& db_id, const std::filesystem::path& db_dir,
                             std::vector<std::string>* warnings = nullptr);

std::string render_schema(const DatabaseCatalog& catalog);

EvalSplit split_tasks(const Corpus& corpus, const std::string& db_id, std::uint64_t seed);

// Parses RFC 4180 CSV text. Exposed for tests.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

nlohmann::json to_json(const TaskInstance& task);
TaskInstance task_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DatabaseCatalog& catalog);
DatabaseCatalog catalog_from_json(const nlohmann::json& j);

// Full-fidelity corpus manifest (tasks, catalogs, per-db counts).
nlohmann::json corpus_manifest(const Corpus& corpus);
Corpus corpus_from_manifest(const nlohmann::json& j);

}  // namespace tacit
