#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace tacit {

// Clause inventory of one SELECT statement; enough structure for the failure
// taxonomy, not a full grammar. Subqueries contribute their tables,
// aggregates and predicates to the enclosing inventory.
struct SqlInventory {
    std::set<std::string> tables;          // lower-cased base tables
    std::string result_table;              // first table of the outermost FROM
    std::size_t join_count = 0;
    std::set<std::string> join_conditions; // normalized ON predicates, aliases resolved
    std::set<std::string> aggregates;      // count, sum, avg, min, max, group_concat, total
    std::set<std::string> predicates;      // normalized WHERE/HAVING atoms, aliases resolved
    std::set<std::string> literals;        // string and numeric literals in WHERE/HAVING
    bool distinct = false;
    std::size_t select_items = 0;          // outermost SELECT list length
    std::vector<std::string> select_list;  // normalized outermost select items
    std::string group_by;
    std::string order_by;
    std::string limit;
};

struct SqlToken {
    enum class Kind { Word, Quoted, String, Number, Symbol };
    Kind kind;
    std::string text;  // words lower-cased; quoted identifiers unquoted
};

std::vector<SqlToken> tokenize_sql(const std::string& sql);

// Empty when the statement is not a recognizable SELECT.
std::optional<SqlInventory> parse_inventory(const std::string& sql);

}  // namespace tacit
