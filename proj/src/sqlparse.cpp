#include "tacit/sqlparse.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "tacit/text.hpp"

namespace tacit {

std::vector<SqlToken> tokenize_sql(const std::string& sql) {
    std::vector<SqlToken> out;
    std::size_t i = 0;
    const auto n = sql.size();
    auto ch = [&](std::size_t k) -> char { return k < n ? sql[k] : '\0'; };
    while (i < n) {
        char c = sql[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
        } else if (c == '-' && ch(i + 1) == '-') {
            while (i < n && sql[i] != '\n') ++i;
        } else if (c == '/' && ch(i + 1) == '*') {
            auto end = sql.find("*/", i + 2);
            i = end == std::string::npos ? n : end + 2;
        } else if (c == '\'') {
            std::string s = "'";
            ++i;
            while (i < n) {
                if (sql[i] == '\'' && ch(i + 1) == '\'') {
                    s += "''";
                    i += 2;
                } else if (sql[i] == '\'') {
                    ++i;
                    break;
                } else {
                    s += sql[i++];
                }
            }
            out.push_back({SqlToken::Kind::String, s + "'"});
        } else if (c == '"' || c == '`' || c == '[') {
            char close = c == '[' ? ']' : c;
            std::string s;
            ++i;
            while (i < n && sql[i] != close) s += sql[i++];
            ++i;
            out.push_back({SqlToken::Kind::Quoted, text::to_lower(s)});
        } else if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && std::isdigit(static_cast<unsigned char>(ch(i + 1))))) {
            std::string s;
            while (i < n && (std::isalnum(static_cast<unsigned char>(sql[i])) || sql[i] == '.')) s += sql[i++];
            out.push_back({SqlToken::Kind::Number, s});
        } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::string s;
            while (i < n && (std::isalnum(static_cast<unsigned char>(sql[i])) || sql[i] == '_' || sql[i] == '$')) s += sql[i++];
            out.push_back({SqlToken::Kind::Word, text::to_lower(s)});
        } else {
            static const char* two[] = {"<=", ">=", "<>", "!=", "==", "||"};
            std::string s(1, c);
            for (auto t : two) {
                if (c == t[0] && ch(i + 1) == t[1]) s = t;
            }
            i += s.size();
            out.push_back({SqlToken::Kind::Symbol, s});
        }
    }
    return out;
}

namespace {

using Kind = SqlToken::Kind;

const std::set<std::string> kClauseWords = {"select", "from",  "where",  "group",     "having", "order",
                                            "limit",  "union", "except", "intersect", "on",     "join",
                                            "inner",  "left",  "right",  "cross",     "natural", "full",
                                            "outer",  "using", "offset", "window"};
const std::set<std::string> kAggregates = {"count", "sum", "avg", "min", "max", "group_concat", "total"};

bool is_word(const SqlToken& t, std::string_view w) { return t.kind == Kind::Word && t.text == w; }
bool is_sym(const SqlToken& t, std::string_view s) { return t.kind == Kind::Symbol && t.text == s; }
bool is_ident(const SqlToken& t) { return t.kind == Kind::Quoted || (t.kind == Kind::Word && !kClauseWords.count(t.text)); }

enum class Clause { None, Select, From, On, Where, GroupBy, Having, OrderBy, Limit };

struct Parser {
    const std::vector<SqlToken>& toks;
    std::map<std::string, std::string> alias;  // alias -> table
    SqlInventory inv;

    // Token text with alias-qualified columns resolved; qualifiers dropped
    // entirely when `qualify` is false.
    std::string render(std::size_t b, std::size_t e, bool qualify) const {
        std::vector<std::string> parts;
        for (std::size_t i = b; i < e; ++i) {
            const auto& t = toks[i];
            if (is_ident(t) && i + 2 < e && is_sym(toks[i + 1], ".") && (is_ident(toks[i + 2]) || is_sym(toks[i + 2], "*"))) {
                auto it = alias.find(t.text);
                auto table = it == alias.end() ? t.text : it->second;
                parts.push_back(qualify ? table + "." + toks[i + 2].text : toks[i + 2].text);
                i += 2;
                continue;
            }
            parts.push_back(t.text);
        }
        std::string s;
        for (const auto& p : parts) {
            if (!s.empty() && p != "," && p != ")" && s.back() != '(') s += ' ';
            s += p;
        }
        return s;
    }

    // Splits [b, e) on AND/OR at relative depth 0; nested SELECTs become a
    // placeholder.
    std::vector<std::string> atoms(std::size_t b, std::size_t e, bool qualify) const {
        std::vector<std::string> out;
        int depth = 0;
        std::size_t start = b;
        bool between = false;
        auto flush = [&](std::size_t end) {
            if (end > start) out.push_back(normalize_atom(start, end, qualify));
        };
        for (std::size_t i = b; i < e; ++i) {
            const auto& t = toks[i];
            if (is_sym(t, "(")) ++depth;
            else if (is_sym(t, ")")) --depth;
            else if (depth == 0 && is_word(t, "between")) between = true;
            else if (depth == 0 && (is_word(t, "and") || is_word(t, "or"))) {
                if (between && is_word(t, "and")) {
                    between = false;
                    continue;
                }
                flush(i);
                start = i + 1;
            }
        }
        flush(e);
        return out;
    }

    std::string normalize_atom(std::size_t b, std::size_t e, bool qualify) const {
        // strip enclosing parentheses
        while (e - b >= 2 && is_sym(toks[b], "(") && is_sym(toks[e - 1], ")") && matching(b) == e - 1 &&
               !(b + 1 < e && is_word(toks[b + 1], "select"))) {
            ++b, --e;
        }
        // collapse subqueries
        std::string s;
        std::size_t last = b;
        std::vector<std::string> pieces;
        for (std::size_t i = b; i < e; ++i) {
            if (is_sym(toks[i], "(") && i + 1 < e && is_word(toks[i + 1], "select")) {
                pieces.push_back(render(last, i, qualify));
                pieces.push_back("(subquery)");
                i = matching(i);
                last = i + 1;
            }
        }
        pieces.push_back(render(last, e, qualify));
        for (const auto& p : pieces) {
            if (p.empty()) continue;
            if (!s.empty()) s += ' ';
            s += p;
        }
        // order-insensitive equality
        auto eq = s.find(" = ");
        if (eq != std::string::npos && s.find(" = ", eq + 1) == std::string::npos) {
            auto l = s.substr(0, eq), r = s.substr(eq + 3);
            if (r < l) s = r + " = " + l;
        }
        return s;
    }

    std::size_t matching(std::size_t open) const {
        int depth = 0;
        for (std::size_t i = open; i < toks.size(); ++i) {
            if (is_sym(toks[i], "(")) ++depth;
            else if (is_sym(toks[i], ")") && --depth == 0) return i;
        }
        return toks.size() - 1;
    }

    void collect_aliases() {
        for (std::size_t i = 0; i + 1 < toks.size(); ++i) {
            bool from_like = is_word(toks[i], "from") || is_word(toks[i], "join") || is_sym(toks[i], ",");
            if (!from_like || !is_ident(toks[i + 1])) continue;
            if (is_sym(toks[i], ",") && !in_from_list(i)) continue;
            const auto& table = toks[i + 1].text;
            std::size_t j = i + 2;
            if (j < toks.size() && is_word(toks[j], "as")) ++j;
            if (j < toks.size() && is_ident(toks[j]) && !(j + 1 < toks.size() && is_sym(toks[j + 1], "("))) {
                alias[toks[j].text] = table;
            }
            alias.emplace(table, table);
        }
    }

    // Whether the comma at i sits in a FROM list (same depth, after FROM,
    // before the next clause keyword).
    bool in_from_list(std::size_t i) const {
        int depth = 0;
        for (std::size_t k = i; k-- > 0;) {
            if (is_sym(toks[k], ")")) ++depth;
            else if (is_sym(toks[k], "(")) {
                if (depth == 0) return false;
                --depth;
            } else if (depth == 0 && toks[k].kind == Kind::Word) {
                if (toks[k].text == "from") return true;
                if (toks[k].text == "select" || toks[k].text == "where" || toks[k].text == "group" ||
                    toks[k].text == "order" || toks[k].text == "having" || toks[k].text == "on") {
                    return false;
                }
            }
        }
        return false;
    }

    void run() {
        collect_aliases();
        // clause state per parenthesis depth
        std::vector<Clause> stack{Clause::None};
        std::vector<std::size_t> clause_start{0};
        bool first_select = true;
        bool outer_from_seen = false;

        auto close_clause = [&](std::size_t end) {
            auto c = stack.back();
            auto b = clause_start.back();
            bool outer = stack.size() == 1;
            if (end <= b) return;
            switch (c) {
                case Clause::On:
                    for (auto& a : atoms(b, end, true)) inv.join_conditions.insert(a);
                    break;
                case Clause::Where:
                case Clause::Having:
                    for (auto& a : atoms(b, end, false)) inv.predicates.insert(a);
                    for (auto i = b; i < end; ++i) {
                        if (toks[i].kind == Kind::String || toks[i].kind == Kind::Number) inv.literals.insert(toks[i].text);
                    }
                    break;
                case Clause::Select:
                    if (outer) {
                        int depth = 0;
                        std::size_t s = b;
                        if (s < end && is_word(toks[s], "distinct")) ++s;
                        for (auto i = s; i <= end; ++i) {
                            if (i == end || (depth == 0 && is_sym(toks[i], ","))) {
                                inv.select_list.push_back(render(s, i, false));
                                s = i + 1;
                                continue;
                            }
                            if (is_sym(toks[i], "(")) ++depth;
                            else if (is_sym(toks[i], ")")) --depth;
                        }
                        inv.select_items = inv.select_list.size();
                    }
                    break;
                case Clause::GroupBy:
                    if (outer) inv.group_by = render(b, end, false);
                    break;
                case Clause::OrderBy:
                    if (outer) inv.order_by = render(b, end, false);
                    break;
                case Clause::Limit:
                    if (outer) inv.limit = render(b, end, false);
                    break;
                default: break;
            }
        };
        auto open_clause = [&](Clause c, std::size_t start) {
            stack.back() = c;
            clause_start.back() = start;
        };

        for (std::size_t i = 0; i < toks.size(); ++i) {
            const auto& t = toks[i];
            if (is_sym(t, "(")) {
                stack.push_back(Clause::None);
                clause_start.push_back(i + 1);
                continue;
            }
            if (is_sym(t, ")")) {
                close_clause(i);
                if (stack.size() > 1) {
                    stack.pop_back();
                    clause_start.pop_back();
                }
                continue;
            }
            if (t.kind == Kind::Word && kAggregates.count(t.text) && i + 1 < toks.size() && is_sym(toks[i + 1], "(")) {
                inv.aggregates.insert(t.text);
            }
            if (is_word(t, "distinct")) inv.distinct = true;
            if (t.kind != Kind::Word) {
                if (stack.back() == Clause::From && is_sym(t, ",") && i + 1 < toks.size() && is_ident(toks[i + 1])) {
                    add_table(toks[i + 1].text, stack.size() == 1, outer_from_seen);
                    ++inv.join_count;
                }
                continue;
            }
            const auto& w = t.text;
            Clause next = Clause::None;
            std::size_t skip = 0;
            if (w == "select") next = Clause::Select;
            else if (w == "from") next = Clause::From;
            else if (w == "where") next = Clause::Where;
            else if (w == "having") next = Clause::Having;
            else if (w == "on") next = Clause::On;
            else if (w == "limit") next = Clause::Limit;
            else if (w == "group" && i + 1 < toks.size() && is_word(toks[i + 1], "by")) next = Clause::GroupBy, skip = 1;
            else if (w == "order" && i + 1 < toks.size() && is_word(toks[i + 1], "by")) next = Clause::OrderBy, skip = 1;
            else if (w == "join") next = Clause::From;
            else if (w == "union" || w == "except" || w == "intersect") next = Clause::None;
            else continue;

            close_clause(i);
            if (w == "select" && first_select) first_select = false;
            if (w == "join") ++inv.join_count;
            if ((w == "from" || w == "join") && i + 1 < toks.size() && is_ident(toks[i + 1])) {
                add_table(toks[i + 1].text, stack.size() == 1, outer_from_seen);
            }
            open_clause(next, i + 1 + skip);
            i += skip;
        }
        close_clause(toks.size());
    }

    void add_table(const std::string& name, bool outer, bool& outer_from_seen) {
        inv.tables.insert(name);
        if (outer && !outer_from_seen) {
            inv.result_table = name;
            outer_from_seen = true;
        }
    }
};

bool balanced(const std::vector<SqlToken>& toks) {
    int depth = 0;
    for (const auto& t : toks) {
        if (is_sym(t, "(")) ++depth;
        else if (is_sym(t, ")") && --depth < 0) return false;
    }
    return depth == 0;
}

}  // namespace

std::optional<SqlInventory> parse_inventory(const std::string& sql) {
    auto toks = tokenize_sql(sql);
    while (!toks.empty() && is_sym(toks.back(), ";")) toks.pop_back();
    if (toks.empty() || !balanced(toks)) return std::nullopt;
    std::size_t first = 0;
    while (first < toks.size() && is_sym(toks[first], "(")) ++first;
    if (first >= toks.size() || !(is_word(toks[first], "select") || is_word(toks[first], "with"))) return std::nullopt;
    for (const auto& t : toks) {
        if (is_sym(t, ";")) return std::nullopt;  // multiple statements
    }
    Parser p{toks, {}, {}};
    p.run();
    if (p.inv.tables.empty() && p.inv.select_items == 0) return std::nullopt;
    return p.inv;
}

}  // namespace tacit
