#include "tacit/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "sqlite_handle.hpp"
#include "tacit/error.hpp"
#include "tacit/text.hpp"

namespace tacit {

using nlohmann::json;
namespace fs = std::filesystem;

const DatabaseCatalog& Corpus::catalog(const std::string& db_id) const {
    auto it = catalogs.find(db_id);
    if (it == catalogs.end()) throw not_found("unknown db_id: " + db_id);
    return it->second;
}

const TaskInstance& Corpus::task(const std::string& task_id) const {
    auto it = std::find_if(tasks.begin(), tasks.end(),
                           [&](const TaskInstance& t) { return t.task_id == task_id; });
    if (it == tasks.end()) throw not_found("unknown task id: " + task_id);
    return *it;
}

std::vector<TaskInstance> Corpus::tasks_for(const std::string& db_id) const {
    std::vector<TaskInstance> out;
    for (const auto& t : tasks) {
        if (t.db_id == db_id) out.push_back(t);
    }
    return out;
}

std::map<std::string, std::size_t> Corpus::counts_by_db() const {
    std::map<std::string, std::size_t> counts;
    for (const auto& [db_id, _] : catalogs) counts[db_id] = 0;
    for (const auto& t : tasks) ++counts[t.db_id];
    return counts;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                quoted = true;
                any = true;
                break;
            case ',':
                row.push_back(std::move(field));
                field.clear();
                any = true;
                break;
            case '\r':
                break;
            case '\n':
                if (any || !field.empty()) {
                    row.push_back(std::move(field));
                    rows.push_back(std::move(row));
                }
                row.clear();
                field.clear();
                any = false;
                break;
            default:
                field.push_back(c);
                any = true;
        }
    }
    if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<TableInfo> read_tables(const fs::path& sqlite_path) {
    auto db = detail::open_readonly(sqlite_path);
    std::vector<TableInfo> tables;
    auto stmt = detail::prepare(db.get(),
        "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid");
    while (sqlite3_step(stmt.get()) == SQLITE_ROW) {
        tables.push_back({detail::column_text(stmt.get(), 0), {}});
    }
    for (auto& table : tables) {
        std::string quoted = "\"";
        for (char c : table.name) {
            if (c == '"') quoted.push_back('"');
            quoted.push_back(c);
        }
        quoted.push_back('"');
        auto info = detail::prepare(db.get(), "PRAGMA table_info(" + quoted + ")");
        while (sqlite3_step(info.get()) == SQLITE_ROW) {
            table.columns.push_back({detail::column_text(info.get(), 1), detail::column_text(info.get(), 2)});
        }
    }
    return tables;
}

std::string strip_bom(std::string s) {
    if (s.size() >= 3 && s.compare(0, 3, "\xEF\xBB\xBF") == 0) s.erase(0, 3);
    return s;
}

}  // namespace

DatabaseCatalog load_catalog(const std::string& db_id, const fs::path& db_dir,
                             std::vector<std::string>* warnings) {
    auto warn = [&](const std::string& msg) {
        if (warnings) warnings->push_back(msg);
    };
    DatabaseCatalog cat;
    cat.db_id = db_id;
    cat.sqlite_path = fs::absolute(db_dir / (db_id + ".sqlite")).lexically_normal();
    if (!fs::exists(cat.sqlite_path)) {
        throw data_error("database '" + db_id + "': missing sqlite file " + cat.sqlite_path.string());
    }
    cat.tables = read_tables(cat.sqlite_path);

    auto desc_dir = db_dir / "database_description";
    if (!fs::is_directory(desc_dir)) {
        warn("database '" + db_id + "': no database_description directory; schema from sqlite metadata only");
    } else {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(desc_dir)) {
            if (entry.is_regular_file() && text::to_lower(entry.path().extension().string()) == ".csv") {
                files.push_back(entry.path());
            }
        }
        std::sort(files.begin(), files.end());
        for (const auto& file : files) {
            auto stem = file.stem().string();
            auto table = std::find_if(cat.tables.begin(), cat.tables.end(), [&](const TableInfo& t) {
                return text::to_lower(t.name) == text::to_lower(stem);
            });
            if (table == cat.tables.end()) {
                warn("database '" + db_id + "': description " + file.filename().string() +
                     " names no table in the sqlite file; ignored");
                continue;
            }
            std::string raw;
            try {
                raw = strip_bom(read_file(file));
            } catch (const Error& e) {
                warn("database '" + db_id + "': " + e.what());
                continue;
            }
            if (!text::is_valid_utf8(raw)) {
                warn("database '" + db_id + "': " + file.filename().string() + " is not UTF-8; decoded as Latin-1");
                raw = text::latin1_to_utf8(raw);
            }
            auto rows = parse_csv(raw);
            std::vector<ColumnDescription> descs;
            for (std::size_t i = 1; i < rows.size(); ++i) {
                auto& r = rows[i];
                r.resize(5);
                descs.push_back({text::trim(r[0]), text::trim(r[1]), text::trim(r[2]), text::trim(r[3]),
                                 text::trim(r[4])});
            }
            cat.descriptions[table->name] = std::move(descs);
        }
    }
    cat.schema_text = render_schema(cat);
    return cat;
}

std::string render_schema(const DatabaseCatalog& catalog) {
    std::ostringstream out;
    out << "Database: " << catalog.db_id << "\n";
    for (const auto& table : catalog.tables) {
        const std::vector<ColumnDescription>* descs = nullptr;
        if (auto it = catalog.descriptions.find(table.name); it != catalog.descriptions.end()) {
            descs = &it->second;
        }
        out << "\nCREATE TABLE \"" << table.name << "\" (\n";
        for (std::size_t i = 0; i < table.columns.size(); ++i) {
            const auto& col = table.columns[i];
            out << "  " << col.name;
            if (!col.declared_type.empty()) out << " " << col.declared_type;
            if (i + 1 < table.columns.size()) out << ",";
            if (descs) {
                auto d = std::find_if(descs->begin(), descs->end(), [&](const ColumnDescription& cd) {
                    return text::to_lower(cd.original_column_name) == text::to_lower(col.name);
                });
                if (d != descs->end()) {
                    std::vector<std::string> parts;
                    if (!d->column_name.empty() && d->column_name != col.name) parts.push_back(d->column_name);
                    if (!d->column_description.empty() && d->column_description != d->column_name) {
                        parts.push_back(d->column_description);
                    }
                    if (!d->value_description.empty()) {
                        parts.push_back("values: " + text::normalize_whitespace(d->value_description));
                    }
                    if (!parts.empty()) {
                        out << " -- ";
                        for (std::size_t p = 0; p < parts.size(); ++p) {
                            if (p) out << "; ";
                            out << parts[p];
                        }
                    }
                }
            }
            out << "\n";
        }
        out << ");\n";
    }
    return out.str();
}

Corpus load_bird(const fs::path& root) {
    Corpus corpus;
    auto dev_json = root / "dev.json";
    auto raw = read_file(dev_json);
    json questions;
    try {
        questions = json::parse(raw);
    } catch (const json::parse_error& e) {
        throw data_error(dev_json.string() + ": malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    if (!questions.is_array()) throw data_error(dev_json.string() + ": expected a JSON array at byte 0");

    std::set<std::string> ids;
    std::vector<std::string> db_order;
    for (std::size_t i = 0; i < questions.size(); ++i) {
        const auto& q = questions[i];
        TaskInstance t;
        if (q.contains("question_id")) {
            t.task_id = q["question_id"].is_string() ? q["question_id"].get<std::string>()
                                                     : std::to_string(q["question_id"].get<long long>());
        } else {
            t.task_id = std::to_string(i);
        }
        t.db_id = q.value("db_id", "");
        t.nlq = q.value("question", "");
        t.gold_sql = q.value("SQL", "");
        t.evidence = q.value("evidence", "");
        if (q.contains("difficulty") && q["difficulty"].is_string()) t.difficulty = q["difficulty"].get<std::string>();
        if (t.db_id.empty() || t.nlq.empty() || t.gold_sql.empty()) {
            throw data_error(dev_json.string() + ": entry " + std::to_string(i) +
                             " lacks db_id, question, or SQL");
        }
        if (!ids.insert(t.task_id).second) throw data_error("duplicate task id " + t.task_id);
        if (std::find(db_order.begin(), db_order.end(), t.db_id) == db_order.end()) db_order.push_back(t.db_id);
        corpus.tasks.push_back(std::move(t));
    }

    std::vector<std::string> missing;
    for (const auto& db_id : db_order) {
        auto dir = root / "dev_databases" / db_id;
        if (!fs::exists(dir / (db_id + ".sqlite"))) {
            missing.push_back(db_id);
            continue;
        }
        corpus.catalogs.emplace(db_id, load_catalog(db_id, dir, &corpus.warnings));
    }
    if (!missing.empty()) {
        std::string msg = "missing sqlite file for database(s):";
        for (const auto& m : missing) msg += " " + m;
        throw data_error(msg);
    }
    return corpus;
}

EvalSplit split_tasks(const Corpus& corpus, const std::string& db_id, std::uint64_t seed) {
    if (!corpus.catalogs.count(db_id)) throw not_found("unknown db_id: " + db_id);
    auto tasks = corpus.tasks_for(db_id);

    // Fisher-Yates over mt19937_64 with rejection sampling; both are fully
    // specified so the split is identical on every standard library.
    std::mt19937_64 rng(seed);
    for (std::size_t i = tasks.size(); i > 1; --i) {
        const std::uint64_t bound = i;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    (std::numeric_limits<std::uint64_t>::max() % bound);
        std::uint64_t r = 0;
        do {
            r = rng();
        } while (r >= limit);
        std::swap(tasks[i - 1], tasks[r % bound]);
    }

    EvalSplit split;
    split.db_id = db_id;
    split.seed = seed;
    const std::size_t n_train = (tasks.size() + 1) / 2;
    split.train.assign(tasks.begin(), tasks.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test.assign(tasks.begin() + static_cast<std::ptrdiff_t>(n_train), tasks.end());
    return split;
}

json to_json(const TaskInstance& t) {
    json j{{"task_id", t.task_id}, {"db_id", t.db_id}, {"question", t.nlq}, {"SQL", t.gold_sql},
           {"evidence", t.evidence}};
    if (t.difficulty) j["difficulty"] = *t.difficulty;
    return j;
}

TaskInstance task_from_json(const json& j) {
    TaskInstance t;
    t.task_id = j.at("task_id").get<std::string>();
    t.db_id = j.at("db_id").get<std::string>();
    t.nlq = j.at("question").get<std::string>();
    t.gold_sql = j.at("SQL").get<std::string>();
    t.evidence = j.value("evidence", "");
    if (j.contains("difficulty")) t.difficulty = j["difficulty"].get<std::string>();
    return t;
}

json to_json(const DatabaseCatalog& c) {
    json tables = json::array();
    for (const auto& t : c.tables) {
        json cols = json::array();
        for (const auto& col : t.columns) cols.push_back({{"name", col.name}, {"type", col.declared_type}});
        tables.push_back({{"name", t.name}, {"columns", cols}});
    }
    json descs = json::object();
    for (const auto& [table, rows] : c.descriptions) {
        json arr = json::array();
        for (const auto& d : rows) {
            arr.push_back({d.original_column_name, d.column_name, d.column_description, d.data_format,
                           d.value_description});
        }
        descs[table] = arr;
    }
    return {{"db_id", c.db_id}, {"sqlite_path", c.sqlite_path.string()}, {"tables", tables},
            {"descriptions", descs}, {"schema_text", c.schema_text}};
}

DatabaseCatalog catalog_from_json(const json& j) {
    DatabaseCatalog c;
    c.db_id = j.at("db_id").get<std::string>();
    c.sqlite_path = j.at("sqlite_path").get<std::string>();
    for (const auto& t : j.at("tables")) {
        TableInfo info{t.at("name").get<std::string>(), {}};
        for (const auto& col : t.at("columns")) {
            info.columns.push_back({col.at("name").get<std::string>(), col.at("type").get<std::string>()});
        }
        c.tables.push_back(std::move(info));
    }
    for (const auto& [table, rows] : j.at("descriptions").items()) {
        auto& out = c.descriptions[table];
        for (const auto& r : rows) {
            out.push_back({r[0].get<std::string>(), r[1].get<std::string>(), r[2].get<std::string>(),
                           r[3].get<std::string>(), r[4].get<std::string>()});
        }
    }
    c.schema_text = j.at("schema_text").get<std::string>();
    return c;
}

json corpus_manifest(const Corpus& corpus) {
    json tasks = json::array();
    for (const auto& t : corpus.tasks) tasks.push_back(to_json(t));
    json catalogs = json::array();
    for (const auto& [_, c] : corpus.catalogs) catalogs.push_back(to_json(c));
    json counts = json::object();
    for (const auto& [db, n] : corpus.counts_by_db()) counts[db] = n;
    return {{"format", "tacit-corpus/1"},
            {"database_count", corpus.catalogs.size()},
            {"task_count", corpus.tasks.size()},
            {"tasks_per_db", counts},
            {"warnings", corpus.warnings},
            {"tasks", tasks},
            {"catalogs", catalogs}};
}

Corpus corpus_from_manifest(const json& j) {
    Corpus c;
    for (const auto& t : j.at("tasks")) c.tasks.push_back(task_from_json(t));
    for (const auto& cat : j.at("catalogs")) {
        auto parsed = catalog_from_json(cat);
        c.catalogs.emplace(parsed.db_id, std::move(parsed));
    }
    c.warnings = j.value("warnings", std::vector<std::string>{});
    return c;
}

}  // namespace tacit
