#include "tacit/sqlexec.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <set>
#include <tuple>

#include "sqlite_handle.hpp"
#include "tacit/text.hpp"

namespace tacit {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 10> kWriteKeywords = {
    "INSERT", "UPDATE", "DELETE", "DROP", "ALTER", "CREATE", "ATTACH", "PRAGMA", "DETACH", "VACUUM"};

bool ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || static_cast<unsigned char>(c) >= 0x80;
}

// Canonical scalar used for set comparison. Numbers are quantized to the
// kRealTolerance grid so that equality stays an equivalence relation.
struct NumKey {
    std::int64_t whole = 0;
    std::int64_t micro = 0;
    auto operator<=>(const NumKey&) const = default;
};
struct RawDouble {
    double v = 0;
    auto operator<=>(const RawDouble&) const = default;
};
using CanonValue = std::variant<std::monostate, NumKey, RawDouble, std::string, std::vector<std::uint8_t>>;
using CanonRow = std::vector<CanonValue>;

constexpr std::int64_t kMicro = 1'000'000;

CanonValue canonical(const Value& v) {
    struct Visitor {
        CanonValue operator()(const Null&) const { return std::monostate{}; }
        CanonValue operator()(std::int64_t i) const { return NumKey{i, 0}; }
        CanonValue operator()(double d) const {
            if (std::fabs(d) < 9.0e12) {
                auto q = static_cast<std::int64_t>(std::llround(d * static_cast<double>(kMicro)));
                std::int64_t whole = q / kMicro;
                std::int64_t micro = q % kMicro;
                if (micro < 0) {
                    micro += kMicro;
                    whole -= 1;
                }
                return NumKey{whole, micro};
            }
            if (d == std::trunc(d) && std::fabs(d) < 9.2e18) return NumKey{static_cast<std::int64_t>(d), 0};
            return RawDouble{d};
        }
        CanonValue operator()(const std::string& s) const { return s; }
        CanonValue operator()(const Blob& b) const { return b.bytes; }
    };
    return std::visit(Visitor{}, v);
}

std::set<CanonRow> row_set(const std::vector<Row>& rows) {
    std::set<CanonRow> out;
    for (const auto& r : rows) {
        CanonRow c;
        c.reserve(r.size());
        for (const auto& v : r) c.push_back(canonical(v));
        out.insert(std::move(c));
    }
    return out;
}

struct Deadline {
    std::chrono::steady_clock::time_point at;
    bool fired = false;
};

int progress_callback(void* ctx) {
    auto* d = static_cast<Deadline*>(ctx);
    if (std::chrono::steady_clock::now() >= d->at) {
        d->fired = true;
        return 1;
    }
    return 0;
}

bool only_trivia(const char* tail) {
    if (tail == nullptr) return true;
    std::string_view s(tail);
    std::size_t i = 0;
    while (i < s.size()) {
        if (std::isspace(static_cast<unsigned char>(s[i])) || s[i] == ';') {
            ++i;
        } else if (s.substr(i, 2) == "--") {
            auto nl = s.find('\n', i);
            i = nl == std::string_view::npos ? s.size() : nl + 1;
        } else if (s.substr(i, 2) == "/*") {
            auto end = s.find("*/", i + 2);
            i = end == std::string_view::npos ? s.size() : end + 2;
        } else {
            return false;
        }
    }
    return true;
}

}  // namespace

std::optional<std::string> find_write_keyword(const std::string& sql) {
    std::size_t i = 0;
    const std::size_t n = sql.size();
    while (i < n) {
        char c = sql[i];
        if (c == '\'' || c == '"' || c == '`' || c == '[') {
            char close = c == '[' ? ']' : c;
            ++i;
            while (i < n) {
                if (sql[i] == close) {
                    if (close != ']' && i + 1 < n && sql[i + 1] == close) {
                        i += 2;
                        continue;
                    }
                    break;
                }
                ++i;
            }
            ++i;
        } else if (c == '-' && i + 1 < n && sql[i + 1] == '-') {
            while (i < n && sql[i] != '\n') ++i;
        } else if (c == '/' && i + 1 < n && sql[i + 1] == '*') {
            auto end = sql.find("*/", i + 2);
            i = end == std::string::npos ? n : end + 2;
        } else if (ident_char(c)) {
            std::size_t start = i;
            while (i < n && ident_char(sql[i])) ++i;
            auto word = text::to_upper(std::string_view(sql).substr(start, i - start));
            for (auto kw : kWriteKeywords) {
                if (word == kw) return word;
            }
        } else {
            ++i;
        }
    }
    return std::nullopt;
}

ExecutionOutcome execute(const DatabaseCatalog& catalog, const std::string& sql, const ExecOptions& opts) {
    ExecutionOutcome out;
    const auto start = std::chrono::steady_clock::now();
    auto finish = [&](ExecutionOutcome& o) -> ExecutionOutcome& {
        o.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        return o;
    };

    if (auto kw = find_write_keyword(sql)) {
        out.status = ExecStatus::SqlError;
        out.error_text = "write statement rejected: " + *kw + " is not allowed in read-only execution";
        return finish(out);
    }

    auto db = detail::open_readonly(catalog.sqlite_path);
    Deadline deadline{start + std::chrono::milliseconds(opts.timeout_ms > 0 ? opts.timeout_ms : 1)};
    sqlite3_progress_handler(db.get(), 1000, &progress_callback, &deadline);

    sqlite3_stmt* raw = nullptr;
    const char* tail = nullptr;
    int rc = sqlite3_prepare_v2(db.get(), sql.c_str(), static_cast<int>(sql.size()), &raw, &tail);
    detail::StmtHandle stmt(raw);
    if (rc != SQLITE_OK) {
        out.status = deadline.fired ? ExecStatus::Timeout : ExecStatus::SqlError;
        out.error_text = deadline.fired ? "query timed out" : sqlite3_errmsg(db.get());
        return finish(out);
    }
    if (!stmt) {
        out.status = ExecStatus::SqlError;
        out.error_text = "empty statement";
        return finish(out);
    }
    if (!only_trivia(tail)) {
        out.status = ExecStatus::SqlError;
        out.error_text = "You can only execute one statement at a time.";
        return finish(out);
    }
    if (!sqlite3_stmt_readonly(stmt.get())) {
        out.status = ExecStatus::SqlError;
        out.error_text = "write statement rejected: statement is not read-only";
        return finish(out);
    }

    out.columns = static_cast<std::size_t>(sqlite3_column_count(stmt.get()));
    while (true) {
        rc = sqlite3_step(stmt.get());
        if (rc == SQLITE_DONE) break;
        if (rc != SQLITE_ROW) {
            if (deadline.fired) {
                out.status = ExecStatus::Timeout;
                out.error_text = "query exceeded " + std::to_string(opts.timeout_ms) + " ms";
            } else {
                out.status = ExecStatus::SqlError;
                out.error_text = sqlite3_errmsg(db.get());
            }
            out.rows.clear();
            return finish(out);
        }
        if (out.rows.size() >= opts.row_cap) {
            out.overflow = true;
            break;
        }
        Row row;
        row.reserve(out.columns);
        for (int c = 0; c < static_cast<int>(out.columns); ++c) {
            switch (sqlite3_column_type(stmt.get(), c)) {
                case SQLITE_INTEGER:
                    row.emplace_back(static_cast<std::int64_t>(sqlite3_column_int64(stmt.get(), c)));
                    break;
                case SQLITE_FLOAT:
                    row.emplace_back(sqlite3_column_double(stmt.get(), c));
                    break;
                case SQLITE_TEXT:
                    row.emplace_back(detail::column_text(stmt.get(), c));
                    break;
                case SQLITE_BLOB: {
                    const auto* p = static_cast<const std::uint8_t*>(sqlite3_column_blob(stmt.get(), c));
                    auto len = static_cast<std::size_t>(sqlite3_column_bytes(stmt.get(), c));
                    row.emplace_back(Blob{std::vector<std::uint8_t>(p, p + len)});
                    break;
                }
                default:
                    row.emplace_back(Null{});
            }
        }
        out.rows.push_back(std::move(row));
    }
    return finish(out);
}

bool values_equal(const Value& a, const Value& b) { return canonical(a) == canonical(b); }

bool outputs_match(const ExecutionOutcome& a, const ExecutionOutcome& b) {
    if (!a.ok() || !b.ok()) return false;
    return row_set(a.rows) == row_set(b.rows);
}

TaskResult score(const DatabaseCatalog& catalog, const TaskInstance& task, const std::string& candidate_sql,
                 const ExecOptions& opts) {
    TaskResult result;
    result.task_id = task.task_id;
    result.candidate_sql = candidate_sql;

    auto gold = execute(catalog, task.gold_sql, opts);
    result.outcome = execute(catalog, candidate_sql, opts);
    if (!gold.ok()) {
        result.mismatch_reason = MismatchReason::GoldDefect;
        return result;
    }
    switch (result.outcome.status) {
        case ExecStatus::SqlError:
            result.z = 0;
            result.mismatch_reason = MismatchReason::Error;
            return result;
        case ExecStatus::Timeout:
            result.z = 0;
            result.mismatch_reason = MismatchReason::Timeout;
            return result;
        case ExecStatus::Rows:
            break;
    }
    if (outputs_match(gold, result.outcome)) {
        result.z = 1;
    } else {
        result.z = 0;
        result.mismatch_reason = gold.columns != result.outcome.columns ? MismatchReason::Arity
                                                                       : MismatchReason::Values;
    }
    return result;
}

std::string to_string(ExecStatus s) {
    switch (s) {
        case ExecStatus::Rows: return "rows";
        case ExecStatus::SqlError: return "sql-error";
        case ExecStatus::Timeout: return "timeout";
    }
    return "unknown";
}

std::string to_string(MismatchReason r) {
    switch (r) {
        case MismatchReason::Arity: return "arity";
        case MismatchReason::Values: return "values";
        case MismatchReason::Error: return "error";
        case MismatchReason::Timeout: return "timeout";
        case MismatchReason::GoldDefect: return "gold-defect";
    }
    return "unknown";
}

std::optional<MismatchReason> mismatch_reason_from_string(const std::string& s) {
    for (auto r : {MismatchReason::Arity, MismatchReason::Values, MismatchReason::Error, MismatchReason::Timeout,
                   MismatchReason::GoldDefect}) {
        if (to_string(r) == s) return r;
    }
    return std::nullopt;
}

std::string format_value(const Value& v) {
    struct Visitor {
        std::string operator()(const Null&) const { return "None"; }
        std::string operator()(std::int64_t i) const { return std::to_string(i); }
        std::string operator()(double d) const {
            char buf[64];
            auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), d);
            std::string s(buf, end);
            if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
            return s;
        }
        std::string operator()(const std::string& s) const {
            std::string out = "'";
            for (char c : s) {
                if (c == '\'' || c == '\\') out.push_back('\\');
                out.push_back(c);
            }
            return out + "'";
        }
        std::string operator()(const Blob& b) const { return "<blob " + std::to_string(b.bytes.size()) + " bytes>"; }
    };
    return std::visit(Visitor{}, v);
}

std::string format_rows(const std::vector<Row>& rows, std::size_t limit) {
    std::string out = "[";
    for (std::size_t i = 0; i < rows.size() && i < limit; ++i) {
        if (i) out += ", ";
        out += "(";
        for (std::size_t c = 0; c < rows[i].size(); ++c) {
            if (c) out += ", ";
            out += format_value(rows[i][c]);
        }
        if (rows[i].size() == 1) out += ",";
        out += ")";
    }
    if (rows.size() > limit) out += ", ...";
    return out + "]";
}

json to_json(const Value& v) {
    struct Visitor {
        json operator()(const Null&) const { return nullptr; }
        json operator()(std::int64_t i) const { return i; }
        json operator()(double d) const { return d; }
        json operator()(const std::string& s) const { return s; }
        json operator()(const Blob& b) const { return json{{"blob", b.bytes}}; }
    };
    return std::visit(Visitor{}, v);
}

Value value_from_json(const json& j) {
    if (j.is_null()) return Null{};
    if (j.is_number_integer()) return j.get<std::int64_t>();
    if (j.is_number_float()) return j.get<double>();
    if (j.is_string()) return j.get<std::string>();
    if (j.is_object() && j.contains("blob")) return Blob{j["blob"].get<std::vector<std::uint8_t>>()};
    return Null{};
}

json to_json(const ExecutionOutcome& o, std::size_t row_limit) {
    json j{{"status", to_string(o.status)}};
    if (o.ok()) {
        json rows = json::array();
        for (std::size_t i = 0; i < o.rows.size() && i < row_limit; ++i) {
            json r = json::array();
            for (const auto& v : o.rows[i]) r.push_back(to_json(v));
            rows.push_back(std::move(r));
        }
        j["rows"] = std::move(rows);
        j["row_count"] = o.rows.size();
        j["columns"] = o.columns;
        j["overflow"] = o.overflow;
    } else {
        j["error_text"] = o.error_text;
    }
    return j;
}

json to_json(const TaskResult& r) {
    json j{{"task_id", r.task_id}, {"candidate_sql", r.candidate_sql}, {"outcome", to_json(r.outcome, 50)}};
    j["z"] = r.z ? json(*r.z) : json(nullptr);
    j["mismatch_reason"] = r.mismatch_reason ? json(to_string(*r.mismatch_reason)) : json(nullptr);
    return j;
}

}  // namespace tacit
