// Python bindings for the core operations. Structured results cross the
// boundary as JSON-shaped dicts and lists.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tacit/agent.hpp"
#include "tacit/corpus.hpp"
#include "tacit/episode.hpp"
#include "tacit/error.hpp"
#include "tacit/harness.hpp"
#include "tacit/llm.hpp"
#include "tacit/memory.hpp"
#include "tacit/sqlexec.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace tacit;

namespace {

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::object& o) { return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>()); }

MemoryKind kind_of(const std::string& s) {
    auto k = memory_kind_from_string(s);
    if (!k) throw usage_error("unknown memory kind: " + s);
    return *k;
}

Protocol protocol_of(const std::string& s) {
    auto p = protocol_from_string(s);
    if (!p) throw usage_error("protocol must be 'same' or 'new', got " + s);
    return *p;
}

std::shared_ptr<Backend> backend_for(const std::string& kind, const std::optional<std::filesystem::path>& cassette) {
    return make_backend(kind, cassette, std::nullopt);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "continual-learning text-to-SQL agents";

    static py::exception<Error> tacit_error(m, "TacitError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::set_error(tacit_error, e.what());
        }
    });

    py::class_<Corpus>(m, "Corpus")
        .def_property_readonly("db_ids",
                               [](const Corpus& c) {
                                   std::vector<std::string> ids;
                                   for (const auto& [id, _] : c.catalogs) ids.push_back(id);
                                   return ids;
                               })
        .def_property_readonly("warnings", [](const Corpus& c) { return c.warnings; })
        .def("__len__", [](const Corpus& c) { return c.tasks.size(); })
        .def("counts_by_db", &Corpus::counts_by_db)
        .def("task", [](const Corpus& c, const std::string& id) { return to_py(to_json(c.task(id))); })
        .def("tasks", [](const Corpus& c, const std::optional<std::string>& db) {
                 json out = json::array();
                 for (const auto& t : db ? c.tasks_for(*db) : c.tasks) out.push_back(to_json(t));
                 return to_py(out);
             },
             py::arg("db_id") = std::nullopt)
        .def("schema", [](const Corpus& c, const std::string& db) { return c.catalog(db).schema_text; })
        .def("split", [](const Corpus& c, const std::string& db, std::uint64_t seed) {
                 auto s = split_tasks(c, db, seed);
                 std::vector<std::string> train, test;
                 for (const auto& t : s.train) train.push_back(t.task_id);
                 for (const auto& t : s.test) test.push_back(t.task_id);
                 return py::make_tuple(train, test);
             },
             py::arg("db_id"), py::arg("seed") = 0);

    m.def("load_bird", &load_bird, py::arg("root"), "Load dev.json and dev_databases/ from a BIRD-layout directory.");

    m.def("execute",
          [](const Corpus& c, const std::string& db, const std::string& sql, int timeout_ms) {
              ExecOptions o;
              o.timeout_ms = timeout_ms;
              py::gil_scoped_release release;
              auto out = to_json(execute(c.catalog(db), sql, o));
              py::gil_scoped_acquire acquire;
              return to_py(out);
          },
          py::arg("corpus"), py::arg("db_id"), py::arg("sql"), py::arg("timeout_ms") = 30'000);

    m.def("score",
          [](const Corpus& c, const std::string& task_id, const std::string& sql) {
              const auto& t = c.task(task_id);
              return to_py(to_json(score(c.catalog(t.db_id), t, sql)));
          },
          py::arg("corpus"), py::arg("task_id"), py::arg("sql"));

    m.def("outputs_match",
          [](const Corpus& c, const std::string& db, const std::string& a, const std::string& b) {
              const auto& cat = c.catalog(db);
              return outputs_match(execute(cat, a), execute(cat, b));
          },
          py::arg("corpus"), py::arg("db_id"), py::arg("sql_a"), py::arg("sql_b"));

    m.def("embed", [](const std::string& text, std::size_t dim) { return HashEmbedder(dim).embed(text); },
          py::arg("text"), py::arg("dim") = 4096, "Deterministic hashed bag-of-words embedding.");

    py::class_<MemoryStoreSet>(m, "MemoryStore")
        .def(py::init([](const std::string& db, int level) {
                 return std::make_unique<MemoryStoreSet>(db, level, std::make_shared<HashEmbedder>());
             }),
             py::arg("db_id"), py::arg("level"))
        .def_property_readonly("level", &MemoryStoreSet::level)
        .def("insert",
             [](MemoryStoreSet& s, const std::string& kind, const std::string& key, const std::string& body) {
                 return to_string(s.insert(kind_of(kind), key, body, Provenance{"python", "", 0}));
             },
             py::arg("kind"), py::arg("key"), py::arg("body"))
        .def("retrieve",
             [](const MemoryStoreSet& s, const std::string& kind, const std::string& query, int k, double max_distance) {
                 py::list out;
                 for (const auto& h : s.retrieve(kind_of(kind), query, k, max_distance)) {
                     out.append(py::make_tuple(h.record.key, h.record.body, h.distance));
                 }
                 return out;
             },
             py::arg("kind"), py::arg("query"), py::arg("k") = kDefaultRetrievalK,
             py::arg("max_distance") = kDefaultMaxDistance)
        .def("size", [](const MemoryStoreSet& s, const std::string& kind) { return s.size(kind_of(kind)); })
        .def("__len__", &MemoryStoreSet::total_size);

    m.def("replay_episode",
          [](const Corpus& c, const std::filesystem::path& cassette) {
              auto spec = read_episode_spec(cassette);
              Gateway g(std::make_shared<ReplayBackend>(cassette));
              auto r = run_episode(c, spec, g);
              json out{{"trajectory", to_json(r.trajectory)},
                       {"saved", r.learned.saved.size()},
                       {"summary", episode_summary(r)}};
              out["result"] = r.result ? to_json(*r.result) : json(nullptr);
              return to_py(out);
          },
          py::arg("corpus"), py::arg("cassette"), "Run the single episode a cassette header describes.");

    m.def("run_protocol",
          [](const Corpus& c, const std::string& db, const std::string& agent, const std::string& protocol,
             std::uint64_t seed, const std::string& backend, const std::optional<std::filesystem::path>& cassette,
             const std::optional<std::filesystem::path>& out_root, const std::string& run_id) {
              Gateway g(backend_for(backend, cassette));
              HarnessOptions o;
              o.out_root = out_root;
              o.run_id = run_id;
              py::gil_scoped_release release;
              auto r = run_protocol(c, db, AgentConfig::from_label(agent), protocol_of(protocol), seed, g, o);
              if (out_root) build_report(r, *out_root / run_id);
              auto j = to_json(r);
              py::gil_scoped_acquire acquire;
              return to_py(j);
          },
          py::arg("corpus"), py::arg("db_id"), py::arg("agent") = "P-3", py::arg("protocol") = "new",
          py::arg("seed") = 0, py::arg("backend") = "replay", py::arg("cassette") = std::nullopt,
          py::arg("out_root") = std::nullopt, py::arg("run_id") = "run");

    m.def("report_text", [](const py::object& report) { return report_text(report_from_json(from_py(report))); },
          py::arg("report"));

    m.def("round1", &round1, py::arg("x"));
    m.def("deltas",
          [](double initial, double online, double final) {
              auto d = deltas_from(initial, online, final);
              return py::make_tuple(d.delta_i, d.delta_o);
          },
          py::arg("initial"), py::arg("online"), py::arg("final"));

    m.def("evidence_coverage",
          [](const std::vector<Embedding>& train, const std::vector<Embedding>& test) {
              return evidence_coverage(train, test);
          },
          py::arg("train"), py::arg("test"));

    m.def("classify_error",
          [](const Corpus& c, const std::string& task_id, const std::string& sql) {
              auto r = classify_error(c.task(task_id), sql);
              return py::make_tuple(to_string(r.category), r.tag);
          },
          py::arg("corpus"), py::arg("task_id"), py::arg("sql"));

    m.def("agent_labels", &agent_labels);
}
