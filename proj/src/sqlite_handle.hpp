#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include <sqlite3.h>

#include "tacit/error.hpp"

namespace tacit::detail {

struct DbCloser {
    void operator()(sqlite3* db) const { sqlite3_close_v2(db); }
};
struct StmtFinalizer {
    void operator()(sqlite3_stmt* stmt) const { sqlite3_finalize(stmt); }
};

using DbHandle = std::unique_ptr<sqlite3, DbCloser>;
using StmtHandle = std::unique_ptr<sqlite3_stmt, StmtFinalizer>;

// Opens an existing database file read-only. Uses a URI so that immutable
// files on read-only media still open.
inline DbHandle open_readonly(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw data_error("sqlite file not found: " + path.string());
    }
    sqlite3* raw = nullptr;
    int rc = sqlite3_open_v2(path.c_str(), &raw, SQLITE_OPEN_READONLY | SQLITE_OPEN_NOMUTEX, nullptr);
    DbHandle db(raw);
    if (rc != SQLITE_OK) {
        std::string msg = raw ? sqlite3_errmsg(raw) : "out of memory";
        throw data_error("cannot open " + path.string() + ": " + msg);
    }
    return db;
}

inline StmtHandle prepare(sqlite3* db, const std::string& sql) {
    sqlite3_stmt* raw = nullptr;
    if (sqlite3_prepare_v2(db, sql.c_str(), static_cast<int>(sql.size()), &raw, nullptr) != SQLITE_OK) {
        throw data_error(sqlite3_errmsg(db));
    }
    return StmtHandle(raw);
}

inline std::string column_text(sqlite3_stmt* stmt, int col) {
    const auto* p = sqlite3_column_text(stmt, col);
    if (p == nullptr) return {};
    return {reinterpret_cast<const char*>(p), static_cast<std::size_t>(sqlite3_column_bytes(stmt, col))};
}

}  // namespace tacit::detail
