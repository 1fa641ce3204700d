// tacit: command-line front door for the text-to-SQL learning harness.
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"

#include "tacit/corpus.hpp"
#include "tacit/episode.hpp"
#include "tacit/error.hpp"
#include "tacit/harness.hpp"
#include "tacit/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tacit;

namespace {

constexpr const char* kDefaultManifest = "corpus_manifest.json";

struct CorpusFlags {
    std::string root;
    std::string manifest = kDefaultManifest;
};

struct BackendFlags {
    std::string kind = "live";
    std::string cassette;
    std::string script;
    std::string record;
};

void add_corpus_flags(CLI::App* cmd, CorpusFlags& f) {
    cmd->add_option("--root", f.root, "BIRD-layout directory (dev.json + dev_databases/); overrides --manifest");
    cmd->add_option("--manifest", f.manifest, "corpus manifest written by ingest")->capture_default_str();
}

void add_backend_flags(CLI::App* cmd, BackendFlags& f) {
    cmd->add_option("--backend", f.kind, "model backend")
        ->check(CLI::IsMember({"live", "replay", "scripted"}))
        ->capture_default_str();
    cmd->add_option("--cassette", f.cassette, "cassette JSONL for --backend replay");
    cmd->add_option("--script", f.script, "assistant-turn JSONL for --backend scripted");
    cmd->add_option("--record", f.record, "append every exchange to this cassette");
}

Corpus load_corpus(const CorpusFlags& f) {
    if (!f.root.empty()) return load_bird(f.root);
    std::ifstream in(f.manifest);
    if (!in) throw data_error("corpus manifest " + f.manifest + " not found; run `tacit ingest --root <dir>` or pass --root");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw data_error(f.manifest + ": " + e.what());
    }
    return corpus_from_manifest(j);
}

std::shared_ptr<Backend> open_backend(const BackendFlags& f) {
    auto opt = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<fs::path>(s); };
    auto b = make_backend(f.kind, opt(f.cassette), opt(f.script));
    if (!f.record.empty()) b = std::make_shared<RecordingBackend>(b, f.record);
    return b;
}

// A remote embedding model only with the live backend and TACIT_EMBEDDING_MODEL
// set; everything else keeps the hashed embedder so replays stay reproducible.
std::shared_ptr<Embedder> open_embedder(const BackendFlags& f) {
    auto ep = LiveEndpoint::from_env();
    if (f.kind != "live" || ep.embedding_model.empty()) return nullptr;
    std::size_t dim = 1536;
    if (const char* d = std::getenv("TACIT_EMBEDDING_DIM")) {
        try {
            dim = std::stoul(d);
        } catch (const std::exception&) {
            throw usage_error(std::string("TACIT_EMBEDDING_DIM is not a number: ") + d);
        }
    }
    return std::make_shared<CachingEmbedder>(std::make_shared<RemoteEmbedder>(ep, dim));
}

std::size_t replay_misses(const std::shared_ptr<Backend>& b) {
    if (auto* r = dynamic_cast<ReplayBackend*>(b.get())) return r->misses();
    return 0;
}

void warn_misses(const std::shared_ptr<Backend>& b) {
    if (auto n = replay_misses(b)) {
        std::cerr << "warning: " << n << " request(s) had no cassette entry; affected tasks were aborted\n";
    }
}

std::vector<std::string> resolve_dbs(const Corpus& corpus, const std::string& db) {
    std::vector<std::string> out;
    if (db == "all") {
        for (const auto& [id, c] : corpus.catalogs) out.push_back(id);
        return out;
    }
    if (!corpus.catalogs.count(db)) throw not_found("unknown db_id: " + db);
    out.push_back(db);
    return out;
}

void write_file(const fs::path& p, const std::string& content) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw data_error("cannot write " + p.string());
}

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::Usage: return 2;
        case ErrorKind::Backend: return 4;
        case ErrorKind::Data:
        case ErrorKind::State:
        case ErrorKind::NotFound: return 3;
    }
    return 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tacit: continual-learning text-to-SQL agents"};
    app.set_config("--config", "", "TOML file with defaults; command-line flags win");
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "validate a BIRD-layout corpus and write its manifest");
    std::string ingest_root, ingest_out = kDefaultManifest;
    ingest->add_option("--root", ingest_root, "corpus directory")->required();
    ingest->add_option("--out", ingest_out, "manifest path")->capture_default_str();

    // run
    auto* run = app.add_subcommand("run", "run the evaluation protocol for one agent label");
    CorpusFlags run_corpus;
    BackendFlags run_backend;
    std::string agent = "P-3", protocol = "new", db = "all", out_root = "runs", run_id;
    std::uint64_t seed = 0;
    int runs = 1, jobs = 1;
    std::size_t grid = 0;
    add_corpus_flags(run, run_corpus);
    add_backend_flags(run, run_backend);
    run->add_option("--agent", agent)->check(CLI::IsMember(agent_labels()))->capture_default_str();
    run->add_option("--protocol", protocol)->check(CLI::IsMember({"same", "new"}))->capture_default_str();
    run->add_option("--db", db, "database id or all")->capture_default_str();
    run->add_option("--seed", seed)->capture_default_str();
    run->add_option("--runs", runs, "independent runs (seeds s, s+1, ...), reported per run and averaged")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    run->add_option("--jobs", jobs, "parallel databases")->check(CLI::PositiveNumber)->capture_default_str();
    run->add_option("--out", out_root, "output root")->capture_default_str();
    run->add_option("--run-id", run_id, "defaults to <agent>-<protocol>-<db>-s<seed>");
    run->add_option("--grid", grid, "also compute a learning curve with this step (0: none)")->capture_default_str();

    // curve
    auto* curve = app.add_subcommand("curve", "learning curve: final-pass accuracy against online prefixes");
    CorpusFlags curve_corpus;
    BackendFlags curve_backend;
    std::string curve_agent = "P-3", curve_db = "all", curve_out = "runs", curve_id;
    std::uint64_t curve_seed = 0;
    std::size_t curve_step = 5;
    add_corpus_flags(curve, curve_corpus);
    add_backend_flags(curve, curve_backend);
    curve->add_option("--agent", curve_agent)->check(CLI::IsMember(agent_labels()))->capture_default_str();
    curve->add_option("--db", curve_db)->capture_default_str();
    curve->add_option("--seed", curve_seed)->capture_default_str();
    curve->add_option("--grid", curve_step, "grid step")->check(CLI::PositiveNumber)->capture_default_str();
    curve->add_option("--out", curve_out)->capture_default_str();
    curve->add_option("--run-id", curve_id, "defaults to curve-<agent>-<db>-s<seed>");

    // coverage
    auto* coverage = app.add_subcommand("coverage", "evidence coverage of the test split by train prefixes");
    CorpusFlags cov_corpus;
    std::string cov_db = "all", cov_out;
    std::uint64_t cov_seed = 0;
    std::size_t cov_step = 5;
    add_corpus_flags(coverage, cov_corpus);
    coverage->add_option("--db", cov_db)->capture_default_str();
    coverage->add_option("--seed", cov_seed)->capture_default_str();
    coverage->add_option("--grid", cov_step)->check(CLI::PositiveNumber)->capture_default_str();
    coverage->add_option("--out", cov_out, "also write the CSV here");

    // report
    auto* report = app.add_subcommand("report", "re-render the report files of a finished run");
    std::string report_id, report_root = "runs";
    report->add_option("run_id", report_id)->required();
    report->add_option("--out", report_root, "output root the run was written to")->capture_default_str();

    // serve
    auto* serve = app.add_subcommand("serve", "host the feedback service HTTP API");
    CorpusFlags serve_corpus;
    BackendFlags serve_backend;
    std::string host = "127.0.0.1", ui_dir, memory_dir, token;
    int port = 8080;
    int human_timeout_s = 1800;
    add_corpus_flags(serve, serve_corpus);
    add_backend_flags(serve, serve_backend);
    serve->add_option("--host", host)->capture_default_str();
    serve->add_option("--port", port)->check(CLI::Range(1, 65535))->capture_default_str();
    serve->add_option("--ui-dir", ui_dir, "static UI assets mounted at /");
    serve->add_option("--memory-dir", memory_dir, "persist stores under <dir>/<db_id>/");
    serve->add_option("--token", token, "bearer token required on every request");
    serve->add_option("--human-timeout", human_timeout_s, "seconds before a waiting session is marked paused")
        ->capture_default_str();

    // replay
    auto* replay = app.add_subcommand("replay", "run the single episode a cassette describes, offline");
    CorpusFlags replay_corpus;
    std::string replay_cassette, replay_out;
    add_corpus_flags(replay, replay_corpus);
    replay->add_option("--cassette", replay_cassette)->required()->check(CLI::ExistingFile);
    replay->add_option("--out", replay_out, "write the trajectory JSONL here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*ingest) {
            auto corpus = load_bird(ingest_root);
            for (const auto& w : corpus.warnings) std::cerr << "warning: " << w << "\n";
            write_file(ingest_out, corpus_manifest(corpus).dump(2) + "\n");
            std::cout << "databases: " << corpus.catalogs.size() << "\n";
            for (const auto& [id, n] : corpus.counts_by_db()) std::cout << "  " << id << " " << n << "\n";
            std::cout << "tasks: " << corpus.tasks.size() << "\nmanifest: " << ingest_out << "\n";
            return 0;
        }

        if (*run) {
            auto backend = open_backend(run_backend);
            auto corpus = load_corpus(run_corpus);
            auto dbs = resolve_dbs(corpus, db);
            Gateway gateway(backend);
            auto config = AgentConfig::from_label(agent);
            HarnessOptions opts;
            opts.run_id = run_id.empty() ? agent + "-" + protocol + "-" + db + "-s" + std::to_string(seed) : run_id;
            opts.out_root = out_root;
            opts.embedder = open_embedder(run_backend);
            opts.curve_step = grid;
            auto proto = *protocol_from_string(protocol);
            auto r = run_averaged(corpus, dbs, config, proto, seed, runs, gateway, opts, jobs);
            auto dir = fs::path(out_root) / opts.run_id;
            for (const auto& sub : r.runs) build_report(sub, fs::path(out_root) / sub.run_id);
            build_report(r, dir);
            std::cout << report_text(r);
            std::cout << "written: " << dir.string() << "\n";
            warn_misses(backend);
            return 0;
        }

        if (*curve) {
            auto backend = open_backend(curve_backend);
            auto corpus = load_corpus(curve_corpus);
            auto dbs = resolve_dbs(corpus, curve_db);
            Gateway gateway(backend);
            auto config = AgentConfig::from_label(curve_agent);
            RunReport r;
            r.run_id = curve_id.empty() ? "curve-" + curve_agent + "-" + curve_db + "-s" + std::to_string(curve_seed) : curve_id;
            r.label = curve_agent;
            r.protocol = Protocol::NewQuestion;
            r.seed = curve_seed;
            HarnessOptions opts;
            opts.run_id = r.run_id;
            opts.out_root = curve_out;
            opts.embedder = open_embedder(curve_backend);
            for (const auto& id : dbs) {
                auto split = split_tasks(corpus, id, curve_seed);
                auto pts = learning_curve(corpus, id, config, default_grid(split.train.size(), curve_step), curve_seed,
                                          gateway, opts);
                r.curve.insert(r.curve.end(), pts.begin(), pts.end());
            }
            auto text = curve_csv(r);
            write_file(fs::path(curve_out) / r.run_id / "curve.csv", text);
            std::cout << text;
            warn_misses(backend);
            return 0;
        }

        if (*coverage) {
            auto corpus = load_corpus(cov_corpus);
            HashEmbedder embedder;
            std::ostringstream csv;
            csv << "db_id,t,coverage\n";
            for (const auto& id : resolve_dbs(corpus, cov_db)) {
                auto split = split_tasks(corpus, id, cov_seed);
                for (auto t : default_grid(split.train.size(), cov_step)) {
                    std::vector<TaskInstance> prefix(split.train.begin(), split.train.begin() + t);
                    char buf[32];
                    std::snprintf(buf, sizeof buf, "%.4f", evidence_coverage(prefix, split.test, embedder));
                    csv << id << "," << t << "," << buf << "\n";
                }
            }
            if (!cov_out.empty()) write_file(cov_out, csv.str());
            std::cout << csv.str();
            return 0;
        }

        if (*report) {
            auto dir = fs::path(report_root) / report_id;
            std::ifstream in(dir / "report.json");
            if (!in) throw not_found("no report.json under " + dir.string());
            auto r = report_from_json(json::parse(in));
            build_report(r, dir);
            std::cout << report_text(r);
            return 0;
        }

        if (*serve) {
            auto backend = open_backend(serve_backend);
            auto corpus = load_corpus(serve_corpus);
            Gateway gateway(backend);
            ServiceOptions opts;
            if (!memory_dir.empty()) opts.memory_root = memory_dir;
            if (!ui_dir.empty()) opts.ui_dir = ui_dir;
            opts.token = token;
            opts.embedder = open_embedder(serve_backend);
            opts.human_timeout = std::chrono::seconds(human_timeout_s);
            FeedbackService service(corpus, gateway, opts);
            httplib::Server server;
            service.mount(server);
            std::cout << "listening on http://" << host << ":" << port << std::endl;
            if (!server.listen(host, port)) throw usage_error("cannot listen on " + host + ":" + std::to_string(port));
            return 0;
        }

        if (*replay) {
            auto spec = read_episode_spec(replay_cassette);
            auto backend = std::make_shared<ReplayBackend>(fs::path(replay_cassette));
            auto corpus = load_corpus(replay_corpus);
            Gateway gateway(backend);
            auto r = run_episode(corpus, spec, gateway);
            if (!replay_out.empty()) write_file(replay_out, trajectory_jsonl(r.trajectory));
            if (!spec.name.empty()) std::cout << spec.name << "\n";
            std::cout << episode_summary(r);
            if (backend->misses()) {
                warn_misses(backend);
                return 4;
            }
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
