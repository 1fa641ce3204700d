#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "tacit/corpus.hpp"

namespace tacit {

struct Null {
    bool operator==(const Null&) const = default;
};
struct Blob {
    std::vector<std::uint8_t> bytes;
    bool operator==(const Blob&) const = default;
};

// One SQLite scalar.
using Value = std::variant<Null, std::int64_t, double, std::string, Blob>;
using Row = std::vector<Value>;

enum class ExecStatus { Rows, SqlError, Timeout };

struct ExecutionOutcome {
    ExecStatus status = ExecStatus::Rows;
    std::vector<Row> rows;    // status == Rows
    std::size_t columns = 0;  // result arity, known even for empty results
    std::string error_text;   // status == SqlError (engine message verbatim) or Timeout
    bool overflow = false;    // row cap reached; rows truncated
    double elapsed_ms = 0.0;

    bool ok() const { return status == ExecStatus::Rows; }
};

struct ExecOptions {
    int timeout_ms = 30'000;
    std::size_t row_cap = 100'000;
};

enum class MismatchReason { Arity, Values, Error, Timeout, GoldDefect };

struct TaskResult {
    std::string task_id;
    std::string candidate_sql;
    std::optional<int> z;  // empty when the gold query itself is defective
    ExecutionOutcome outcome;
    std::optional<MismatchReason> mismatch_reason;

    bool gold_defect() const { return mismatch_reason == MismatchReason::GoldDefect; }
};

inline constexpr double kRealTolerance = 1e-6;

// Static screen for statements that could write; returns the offending
// keyword if one is found outside string literals and comments.
std::optional<std::string> find_write_keyword(const std::string& sql);

ExecutionOutcome execute(const DatabaseCatalog& catalog, const std::string& sql, const ExecOptions& opts = {});

// Set equality of row tuples (duplicates collapsed, row order ignored,
// column order significant). False unless both sides are Rows.
bool outputs_match(const ExecutionOutcome& a, const ExecutionOutcome& b);

// Scalar comparison used by outputs_match: reals within kRealTolerance,
// integers compare equal to reals of the same value.
bool values_equal(const Value& a, const Value& b);

TaskResult score(const DatabaseCatalog& catalog, const TaskInstance& task, const std::string& candidate_sql,
                 const ExecOptions& opts = {});

std::string to_string(ExecStatus s);
std::string to_string(MismatchReason r);
std::optional<MismatchReason> mismatch_reason_from_string(const std::string& s);

// Python-literal style rendering, e.g. "[(96,)]".
std::string format_rows(const std::vector<Row>& rows, std::size_t limit = SIZE_MAX);
std::string format_value(const Value& v);

nlohmann::json to_json(const Value& v);
Value value_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExecutionOutcome& o, std::size_t row_limit = SIZE_MAX);
nlohmann::json to_json(const TaskResult& r);

}  // namespace tacit
