#include <catch2/catch_amalgamated.hpp>

#include "support.hpp"
#include "tacit/sqlexec.hpp"

using namespace tacit;
using namespace testsupport;

namespace {

const DatabaseCatalog& financial() { return corpus().catalog("financial"); }

ExecutionOutcome rows(std::vector<Row> r, std::size_t cols) {
    ExecutionOutcome o;
    o.rows = std::move(r);
    o.columns = cols;
    return o;
}

}  // namespace

TEST_CASE("execute basics", "[sqlexec]") {
    auto one = execute(financial(), "SELECT 1");
    REQUIRE(one.ok());
    CHECK(format_rows(one.rows) == "[(1,)]");

    auto bad = execute(financial(), "SELEC 1");
    CHECK(bad.status == ExecStatus::SqlError);
    CHECK_FALSE(bad.error_text.empty());
    CHECK(bad.rows.empty());
}

TEST_CASE("worked queries on the financial fixture", "[sqlexec]") {
    const auto& t1 = corpus().task("1");
    auto out = execute(financial(), t1.gold_sql);
    REQUIRE(out.ok());
    CHECK(format_rows(out.rows) == "[(96,)]");

    const auto& t0 = corpus().task("0");
    auto out0 = execute(financial(), t0.gold_sql);
    REQUIRE(out0.ok());
    CHECK(format_rows(out0.rows) == "[(10451,)]");
}

TEST_CASE("writes are refused", "[sqlexec]") {
    CHECK(find_write_keyword("DELETE FROM account") == "DELETE");
    CHECK_FALSE(find_write_keyword("SELECT 'delete me' FROM account -- drop"));
    auto out = execute(financial(), "DROP TABLE account");
    CHECK(out.status == ExecStatus::SqlError);
    // the table survived
    CHECK(execute(financial(), "SELECT COUNT(*) FROM account").ok());
}

TEST_CASE("timeout", "[sqlexec]") {
    ExecOptions o;
    o.timeout_ms = 100;
    auto out = execute(financial(),
                       "WITH RECURSIVE r(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM r) SELECT COUNT(*) FROM r", o);
    CHECK(out.status == ExecStatus::Timeout);
}

TEST_CASE("row cap", "[sqlexec]") {
    ExecOptions o;
    o.row_cap = 10;
    auto out = execute(financial(), "SELECT account_id FROM account", o);
    REQUIRE(out.ok());
    CHECK(out.rows.size() == 10);
    CHECK(out.overflow);
}

TEST_CASE("outputs_match", "[sqlexec]") {
    CHECK(outputs_match(rows({{std::int64_t{10451}}}, 1), rows({{std::int64_t{10451}}}, 1)));
    CHECK(outputs_match(rows({{std::int64_t{1}, std::string("a")}, {std::int64_t{2}, std::string("b")}}, 2),
                        rows({{std::int64_t{2}, std::string("b")}, {std::int64_t{1}, std::string("a")}}, 2)));
    CHECK_FALSE(outputs_match(rows({{std::int64_t{96}}}, 1), rows({{std::int64_t{97}}}, 1)));
    // duplicates collapse
    CHECK(outputs_match(rows({{std::int64_t{1}}, {std::int64_t{1}}}, 1), rows({{std::int64_t{1}}}, 1)));
    // column order matters
    CHECK_FALSE(outputs_match(rows({{std::int64_t{1}, std::int64_t{2}}}, 2), rows({{std::int64_t{2}, std::int64_t{1}}}, 2)));
    // reals within tolerance, ints equal to reals of the same value
    CHECK(values_equal(Value{1.0}, Value{1.0 + 1e-9}));
    CHECK(values_equal(Value{std::int64_t{3}}, Value{3.0}));
    CHECK_FALSE(values_equal(Value{std::string("3")}, Value{std::int64_t{3}}));
    CHECK(values_equal(Value{Null{}}, Value{Null{}}));

    ExecutionOutcome err;
    err.status = ExecStatus::SqlError;
    CHECK_FALSE(outputs_match(err, err));
}

TEST_CASE("score", "[sqlexec]") {
    const auto& t1 = corpus().task("1");
    auto same = score(financial(), t1, t1.gold_sql);
    CHECK(same.z == 1);

    auto extra = score(financial(), t1,
                       "SELECT COUNT(T1.client_id), 1 FROM client AS T1 INNER JOIN district AS T2 ON T1.district_id = "
                       "T2.district_id WHERE T1.gender = 'M' AND T2.A15 = (SELECT T3.A15 FROM district AS T3 ORDER BY "
                       "T3.A15 DESC LIMIT 1, 1)");
    CHECK(extra.z == 0);
    CHECK(extra.mismatch_reason == MismatchReason::Arity);

    auto err = score(financial(), t1, "SELEC 1");
    CHECK(err.z == 0);
    CHECK(err.mismatch_reason == MismatchReason::Error);

    TaskInstance broken = t1;
    broken.gold_sql = "SELECT nope FROM nowhere";
    auto gd = score(financial(), broken, "SELECT 1");
    CHECK_FALSE(gd.z);
    CHECK(gd.gold_defect());
}

TEST_CASE("reordered rows of the gold query still score 1", "[sqlexec]") {
    // every task whose gold has no ORDER BY: reversing row order via a wrapper
    int checked = 0;
    for (const auto& t : corpus().tasks_for("financial")) {
        if (text::icontains(t.gold_sql, "order by") || text::icontains(t.gold_sql, "limit")) continue;
        auto r = score(financial(), t, "SELECT * FROM (" + t.gold_sql + ") ORDER BY 1 DESC");
        INFO(t.task_id);
        CHECK(r.z == 1);
        ++checked;
    }
    CHECK(checked > 5);
}

TEST_CASE("value formatting and json", "[sqlexec]") {
    CHECK(format_value(Value{Null{}}) == "None");
    CHECK(format_value(Value{std::string("a'b")}) == "'a\\'b'");
    CHECK(format_rows({{std::int64_t{1}, std::string("x")}}) == "[(1, 'x')]");
    for (const Value& v : {Value{Null{}}, Value{std::int64_t{-4}}, Value{2.5}, Value{std::string("s")},
                           Value{Blob{{1, 2, 255}}}}) {
        CHECK(value_from_json(to_json(v)) == v);
    }
}
