#include "tacit/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "tacit/distill.hpp"
#include "tacit/error.hpp"
#include "tacit/text.hpp"

namespace tacit {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Protocol p) { return p == Protocol::SameQuestion ? "same" : "new"; }

std::optional<Protocol> protocol_from_string(const std::string& s) {
    auto l = text::to_lower(s);
    if (l == "same" || l == "samequestion" || l == "same-question") return Protocol::SameQuestion;
    if (l == "new" || l == "newquestion" || l == "new-question") return Protocol::NewQuestion;
    return std::nullopt;
}

std::string to_string(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::Filter: return "Filter";
        case ErrorCategory::Distinct: return "Distinct";
        case ErrorCategory::Join: return "Join";
        case ErrorCategory::Aggregation: return "Aggregation";
        case ErrorCategory::TableSelection: return "TableSelection";
        case ErrorCategory::Other: return "Other";
    }
    return "Other";
}

std::optional<ErrorCategory> error_category_from_string(const std::string& s) {
    for (auto c : {ErrorCategory::Filter, ErrorCategory::Distinct, ErrorCategory::Join, ErrorCategory::Aggregation,
                   ErrorCategory::TableSelection, ErrorCategory::Other}) {
        if (to_string(c) == s) return c;
    }
    return std::nullopt;
}

Classification classify_error(const SqlInventory& gold, const SqlInventory& cand) {
    std::vector<std::string> shared;
    std::set_intersection(gold.tables.begin(), gold.tables.end(), cand.tables.begin(), cand.tables.end(),
                          std::back_inserter(shared));
    if (shared.empty() || !gold.tables.count(cand.result_table)) return {ErrorCategory::TableSelection, ""};
    if (gold.tables != cand.tables || gold.join_conditions != cand.join_conditions) return {ErrorCategory::Join, ""};
    if (gold.aggregates != cand.aggregates) return {ErrorCategory::Aggregation, ""};
    if (gold.predicates != cand.predicates || gold.literals != cand.literals) return {ErrorCategory::Filter, ""};
    if (gold.distinct != cand.distinct) return {ErrorCategory::Distinct, ""};
    return {ErrorCategory::Other, ""};
}

Classification classify_error(const TaskInstance& task, const std::string& candidate_sql) {
    if (text::trim(candidate_sql).empty()) return {ErrorCategory::Other, "no-sql"};
    auto gold = parse_inventory(task.gold_sql);
    auto cand = parse_inventory(candidate_sql);
    if (!gold || !cand) return {ErrorCategory::Other, "unparsed"};
    return classify_error(*gold, *cand);
}

double round1(double x) {
    // half-up on the decimal representation; the nudge absorbs binary error
    // such as 42.25 stored as 42.2499999...
    return std::floor(x * 10.0 + 0.5 + 1e-9) / 10.0;
}

std::size_t PhaseSummary::correct() const {
    std::size_t n = 0;
    for (const auto& r : results) n += r.z == 1;
    return n;
}

double PhaseSummary::accuracy() const {
    if (results.empty()) return 0.0;
    return 100.0 * static_cast<double>(correct()) / static_cast<double>(results.size());
}

std::size_t RunReport::task_count() const {
    std::size_t n = 0;
    for (const auto& p : phases) n += p.results.size();
    return n;
}

const PhaseSummary* RunReport::summary(const std::string& db_id, Phase phase) const {
    for (const auto& p : phases) {
        if (p.db_id == db_id && p.phase == phase) return &p;
    }
    return nullptr;
}

DeltaRow deltas_from(double initial, double online, double final) {
    // inputs are already one-decimal values; rounding removes float noise
    auto r = [](double x) { return std::round(x * 10.0) / 10.0 + 0.0; };
    return {r(final - initial), r(final - online)};
}

void finalize_aggregates(RunReport& report) {
    std::map<Phase, std::pair<std::size_t, std::size_t>> pooled;  // correct, scorable
    for (const auto& p : report.phases) {
        auto& [c, n] = pooled[p.phase];
        c += p.correct();
        n += p.scorable();
    }
    auto acc = [&](Phase ph) {
        auto it = pooled.find(ph);
        if (it == pooled.end() || it->second.second == 0) return 0.0;
        return round1(100.0 * static_cast<double>(it->second.first) / static_cast<double>(it->second.second));
    };
    report.initial = acc(Phase::Initial);
    report.online = acc(Phase::Online);
    report.final = acc(Phase::Final);
    auto d = deltas_from(report.initial, report.online, report.final);
    report.delta_i = d.delta_i;
    report.delta_o = d.delta_o;

    report.error_histogram.clear();
    for (auto c : {ErrorCategory::Filter, ErrorCategory::Distinct, ErrorCategory::Join, ErrorCategory::Aggregation,
                   ErrorCategory::TableSelection, ErrorCategory::Other}) {
        report.error_histogram[to_string(c)] = 0;
    }
    for (const auto& p : report.phases) {
        if (p.phase != Phase::Final) continue;
        for (const auto& r : p.results) {
            if (r.z == 0 && r.error_category) ++report.error_histogram[to_string(*r.error_category)];
        }
    }
}

std::vector<std::size_t> default_grid(std::size_t train_size, std::size_t step) {
    std::vector<std::size_t> g;
    if (step == 0) step = 5;
    for (std::size_t t = 0; t < train_size; t += step) g.push_back(t);
    g.push_back(train_size);
    return g;
}

double evidence_coverage(const std::vector<Embedding>& train_prefix, const std::vector<Embedding>& test) {
    if (test.empty()) return 0.0;
    std::size_t covered = 0;
    for (const auto& q : test) {
        for (const auto& m : train_prefix) {
            // exactly 0.9 counts; the slack only absorbs rounding in the norms
            if (cosine_similarity(q, m) >= kCoverageThreshold - 1e-12) {
                ++covered;
                break;
            }
        }
    }
    return static_cast<double>(covered) / static_cast<double>(test.size());
}

namespace {

std::vector<Embedding> evidence_embeddings(const std::vector<TaskInstance>& tasks, Embedder& embedder) {
    std::vector<Embedding> out;
    out.reserve(tasks.size());
    for (const auto& t : tasks) {
        auto ev = text::trim(t.evidence);
        out.push_back(embedder.embed(ev.empty() ? kEmptyEvidence : ev));
    }
    return out;
}

}  // namespace

double evidence_coverage(const std::vector<TaskInstance>& train_prefix, const std::vector<TaskInstance>& test,
                         Embedder& embedder) {
    return evidence_coverage(evidence_embeddings(train_prefix, embedder), evidence_embeddings(test, embedder));
}

namespace {

std::optional<fs::path> run_dir(const HarnessOptions& o) {
    if (!o.out_root) return std::nullopt;
    return *o.out_root / o.run_id;
}

std::shared_ptr<Embedder> embedder_of(const HarnessOptions& o) {
    return o.embedder ? o.embedder : std::make_shared<HashEmbedder>();
}

void save_trajectory(const HarnessOptions& o, const Trajectory& t, const std::string& phase_dir) {
    auto dir = run_dir(o);
    if (!dir) return;
    write_trajectory_jsonl(t, *dir / t.db_id / phase_dir / (t.task_id + ".jsonl"));
}

std::set<std::string> gold_defects(const DatabaseCatalog& catalog, const std::vector<TaskInstance>& tasks,
                                   const ExecOptions& exec) {
    std::set<std::string> bad;
    for (const auto& t : tasks) {
        if (!execute(catalog, t.gold_sql, exec).ok()) bad.insert(t.task_id);
    }
    return bad;
}

TaskScore offline_score(const Trajectory& traj, const TaskInstance& task, const DatabaseCatalog& catalog,
                        const ExecOptions& exec) {
    TaskScore s;
    s.task_id = task.task_id;
    s.db_id = task.db_id;
    s.phase = traj.phase;
    s.outcome = to_string(traj.outcome);
    s.flags = traj.flags;
    s.final_sql = traj.final_sql.value_or("");
    if (traj.final_sql) s.z = score(catalog, task, *traj.final_sql, exec).z.value_or(0);
    if (s.z == 0) {
        auto c = classify_error(task, s.final_sql);
        s.error_category = c.category;
        s.error_tag = c.tag;
    }
    return s;
}

PhaseSummary offline_pass(Phase phase, const std::string& phase_dir, const std::vector<TaskInstance>& tasks,
                          const std::set<std::string>& excluded, const DatabaseCatalog& catalog,
                          const AgentConfig& config, MemoryStoreSet& store, Gateway& gateway,
                          const HarnessOptions& options) {
    PhaseSummary summary;
    summary.phase = phase;
    summary.db_id = catalog.db_id;
    for (const auto& task : tasks) {
        if (excluded.count(task.task_id)) {
            summary.excluded.push_back(task.task_id);
            continue;
        }
        auto traj = run_offline(task, config, {catalog, store, gateway}, phase);
        save_trajectory(options, traj, phase_dir);
        summary.results.push_back(offline_score(traj, task, catalog, config.exec));
    }
    return summary;
}

std::size_t snapshot_size(const StoreContents& c) {
    std::size_t n = 0;
    for (const auto& [k, v] : c.stores) n += v.size();
    return n;
}

}  // namespace

std::vector<CurvePoint> curve_from_snapshots(const Corpus& corpus, const EvalSplit& split, const AgentConfig& config,
                                             const std::vector<std::size_t>& grid, const SnapshotRegistry& snapshots,
                                             Gateway& gateway, const HarnessOptions& options) {
    if (!std::is_sorted(grid.begin(), grid.end())) throw usage_error("curve grid must be ascending");
    const auto& catalog = corpus.catalog(split.db_id);
    auto embedder = embedder_of(options);
    auto excluded = gold_defects(catalog, split.test, config.exec);
    auto train_ev = evidence_embeddings(split.train, *embedder);
    auto test_ev = evidence_embeddings(split.test, *embedder);

    std::vector<CurvePoint> out;
    for (auto t : grid) {
        if (t > split.train.size()) throw usage_error("curve grid point " + std::to_string(t) + " exceeds train size");
        auto id = snapshots.find_by_count(split.db_id, t);
        if (!id) throw not_found("no memory snapshot after " + std::to_string(t) + " online tasks for " + split.db_id);
        auto store = snapshots.restore(*id, embedder);
        auto before = store->write_count();
        auto summary = offline_pass(Phase::Final, "final@t" + std::to_string(t), split.test, excluded, catalog, config,
                                    *store, gateway, options);
        if (store->write_count() != before) throw state_error("final pass wrote to the memory store");
        CurvePoint p;
        p.db_id = split.db_id;
        p.t = t;
        p.accuracy = round1(summary.accuracy());
        p.memory_size = snapshot_size(snapshots.contents(*id));
        p.coverage = evidence_coverage(std::vector<Embedding>(train_ev.begin(), train_ev.begin() + t), test_ev);
        out.push_back(p);
    }
    return out;
}

DbRun run_database(const Corpus& corpus, const std::string& db_id, const AgentConfig& config, Protocol protocol,
                   std::uint64_t seed, Gateway& gateway, const HarnessOptions& options, SnapshotRegistry& snapshots) {
    const auto& catalog = corpus.catalog(db_id);
    auto split = split_tasks(corpus, db_id, seed);
    const auto& eval = protocol == Protocol::SameQuestion ? split.train : split.test;
    auto train = split.train;
    if (options.online_limit && *options.online_limit < train.size()) train.resize(*options.online_limit);

    auto embedder = embedder_of(options);
    auto excluded = gold_defects(catalog, split.train, config.exec);
    for (const auto& id : gold_defects(catalog, split.test, config.exec)) excluded.insert(id);

    DbRun run;
    run.online.phase = Phase::Online;
    run.online.db_id = db_id;
    run.final.phase = Phase::Final;
    run.final.db_id = db_id;
    run.initial.db_id = db_id;

    auto abort_phase = [&](PhaseSummary& s, const std::exception& e) {
        s.completed = false;
        run.incomplete = true;
        run.notes.push_back(db_id + " " + to_string(s.phase) + " phase aborted: " + e.what());
    };

    if (options.run_initial) {
        try {
            MemoryStoreSet empty(db_id, config.memory_level, embedder);
            run.initial = offline_pass(Phase::Initial, "initial", eval, excluded, catalog, config, empty, gateway, options);
            if (empty.write_count() != 0) throw state_error("initial pass wrote to the memory store");
        } catch (const std::exception& e) {
            abort_phase(run.initial, e);
        }
    }

    MemoryStoreSet store(db_id, config.memory_level, embedder);
    HumanProxyAgent hpa(corpus, gateway, config.model, config.exec, options.references);
    snapshots.snapshot(store, "online", 0);
    try {
        for (std::size_t i = 0; i < train.size(); ++i) {
            const auto& task = train[i];
            if (excluded.count(task.task_id)) {
                run.online.excluded.push_back(task.task_id);
                snapshots.snapshot(store, "online", i + 1);
                continue;
            }
            auto traj = run_online(task, config, {catalog, store, gateway}, hpa);
            TaskScore s;
            s.task_id = task.task_id;
            s.db_id = db_id;
            s.phase = Phase::Online;
            s.z = traj.outcome == Outcome::Solved ? 1 : 0;
            s.feedback_rounds = traj.feedback_rounds;
            s.final_sql = traj.final_sql.value_or("");
            if (traj.outcome == Outcome::Solved) {
                try {
                    learn_from(traj, task, config, catalog, gateway, store,
                               Provenance{options.run_id, task.task_id, static_cast<std::int64_t>(i + 1)});
                } catch (const std::exception& e) {
                    traj.add_flag("learn-failed");
                    run.notes.push_back(task.task_id + ": learning step failed: " + e.what());
                }
            }
            s.outcome = to_string(traj.outcome);
            s.flags = traj.flags;
            save_trajectory(options, traj, "online");
            run.online.results.push_back(std::move(s));
            snapshots.snapshot(store, "online", i + 1);
        }
    } catch (const std::exception& e) {
        abort_phase(run.online, e);
    }

    if (options.run_final && run.online.completed) {
        try {
            auto id = snapshots.find_by_count(db_id, train.size());
            auto restored = snapshots.restore(*id, embedder);
            auto before = restored->write_count();
            run.final = offline_pass(Phase::Final, "final", eval, excluded, catalog, config, *restored, gateway, options);
            if (restored->write_count() != before) throw state_error("final pass wrote to the memory store");
        } catch (const std::exception& e) {
            abort_phase(run.final, e);
        }
    }

    auto grid = options.curve_grid;
    if (grid.empty() && options.curve_step > 0) grid = default_grid(train.size(), options.curve_step);
    if (!grid.empty() && run.online.completed) {
        try {
            // endpoints are the Initial and Final passes of the new-question
            // protocol; only the interior points need extra offline runs
            EvalSplit curve_split = split;
            curve_split.train = train;
            std::vector<std::size_t> interior;
            for (auto t : grid) {
                bool reuse = protocol == Protocol::NewQuestion &&
                             ((t == 0 && options.run_initial) || (t == train.size() && options.run_final));
                if (!reuse) interior.push_back(t);
            }
            auto points = curve_from_snapshots(corpus, curve_split, config, interior, snapshots, gateway, options);
            auto train_ev = evidence_embeddings(train, *embedder);
            auto test_ev = evidence_embeddings(split.test, *embedder);
            for (auto t : grid) {
                auto it = std::find_if(points.begin(), points.end(), [&](const CurvePoint& p) { return p.t == t; });
                if (it != points.end()) {
                    run.curve.push_back(*it);
                    continue;
                }
                CurvePoint p;
                p.db_id = db_id;
                p.t = t;
                p.accuracy = round1(t == 0 ? run.initial.accuracy() : run.final.accuracy());
                p.memory_size = snapshot_size(snapshots.contents(*snapshots.find_by_count(db_id, t)));
                p.coverage = evidence_coverage(std::vector<Embedding>(train_ev.begin(), train_ev.begin() + t), test_ev);
                run.curve.push_back(p);
            }
        } catch (const std::exception& e) {
            run.incomplete = true;
            run.notes.push_back(db_id + " learning curve failed: " + e.what());
        }
    }
    return run;
}

RunReport run_protocol(const Corpus& corpus, const std::vector<std::string>& db_ids, const AgentConfig& config,
                       Protocol protocol, std::uint64_t seed, Gateway& gateway, const HarnessOptions& options,
                       int jobs) {
    for (const auto& db : db_ids) {
        if (!corpus.catalogs.count(db)) throw not_found("unknown db_id: " + db);
    }
    HarnessOptions opts = options;
    if (!opts.references) opts.references = std::make_shared<ReferenceCache>();
    if (!opts.embedder) opts.embedder = std::make_shared<CachingEmbedder>(std::make_shared<HashEmbedder>());
    SnapshotRegistry snapshots(opts.run_id, opts.out_root);

    std::vector<DbRun> runs(db_ids.size());
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::vector<std::string> errors;
    auto worker = [&] {
        for (auto i = next++; i < db_ids.size(); i = next++) {
            try {
                runs[i] = run_database(corpus, db_ids[i], config, protocol, seed, gateway, opts, snapshots);
            } catch (const std::exception& e) {
                std::lock_guard lock(err_mu);
                errors.push_back(db_ids[i] + ": " + e.what());
                runs[i].incomplete = true;
            }
        }
    };
    auto n = static_cast<std::size_t>(std::max(1, jobs));
    if (n == 1 || db_ids.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t k = 0; k < std::min(n, db_ids.size()); ++k) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    RunReport r;
    r.run_id = opts.run_id;
    r.label = config.label;
    r.protocol = protocol;
    r.seed = seed;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        auto& d = runs[i];
        d.initial.phase = Phase::Initial;
        for (auto* s : {&d.initial, &d.online, &d.final}) {
            s->db_id = db_ids[i];
            r.phases.push_back(*s);
        }
        r.curve.insert(r.curve.end(), d.curve.begin(), d.curve.end());
        r.notes.insert(r.notes.end(), d.notes.begin(), d.notes.end());
        r.incomplete = r.incomplete || d.incomplete;
    }
    r.notes.insert(r.notes.end(), errors.begin(), errors.end());
    r.snapshots = snapshots.manifest();
    finalize_aggregates(r);
    if (r.task_count() == 0) r.notes.push_back("no tasks");
    return r;
}

RunReport run_protocol(const Corpus& corpus, const std::string& db_id, const AgentConfig& config, Protocol protocol,
                       std::uint64_t seed, Gateway& gateway, const HarnessOptions& options) {
    return run_protocol(corpus, std::vector<std::string>{db_id}, config, protocol, seed, gateway, options, 1);
}

RunReport run_averaged(const Corpus& corpus, const std::vector<std::string>& db_ids, const AgentConfig& config,
                       Protocol protocol, std::uint64_t seed, int n_runs, Gateway& gateway,
                       const HarnessOptions& options, int jobs) {
    if (n_runs < 1) throw usage_error("runs must be >= 1");
    if (n_runs == 1) return run_protocol(corpus, db_ids, config, protocol, seed, gateway, options, jobs);
    RunReport mean;
    mean.run_id = options.run_id;
    mean.label = config.label;
    mean.protocol = protocol;
    mean.seed = seed;
    for (int k = 0; k < n_runs; ++k) {
        auto opts = options;
        opts.run_id = options.run_id + "/seed" + std::to_string(seed + k);
        mean.runs.push_back(run_protocol(corpus, db_ids, config, protocol, seed + k, gateway, opts, jobs));
    }
    double si = 0, so = 0, sf = 0;
    for (const auto& r : mean.runs) {
        si += r.initial;
        so += r.online;
        sf += r.final;
        mean.incomplete = mean.incomplete || r.incomplete;
        for (const auto& [k, v] : r.error_histogram) mean.error_histogram[k] += v;
    }
    auto n = static_cast<double>(n_runs);
    mean.initial = round1(si / n);
    mean.online = round1(so / n);
    mean.final = round1(sf / n);
    auto d = deltas_from(mean.initial, mean.online, mean.final);
    mean.delta_i = d.delta_i;
    mean.delta_o = d.delta_o;

    // mean curve over points present in every run
    std::map<std::pair<std::string, std::size_t>, std::vector<CurvePoint>> by_point;
    for (const auto& r : mean.runs) {
        for (const auto& p : r.curve) by_point[{p.db_id, p.t}].push_back(p);
    }
    for (const auto& [key, pts] : by_point) {
        if (pts.size() != mean.runs.size()) continue;
        CurvePoint m;
        m.db_id = key.first;
        m.t = key.second;
        double acc = 0, cov = 0, size = 0;
        for (const auto& p : pts) {
            acc += p.accuracy;
            cov += p.coverage.value_or(0);
            size += static_cast<double>(p.memory_size);
        }
        m.accuracy = round1(acc / n);
        m.coverage = cov / n;
        m.memory_size = static_cast<std::size_t>(std::lround(size / n));
        mean.curve.push_back(m);
    }
    mean.notes.push_back("mean of " + std::to_string(n_runs) + " runs, seeds " + std::to_string(seed) + ".." +
                         std::to_string(seed + n_runs - 1));
    return mean;
}

std::vector<CurvePoint> learning_curve(const Corpus& corpus, const std::string& db_id, const AgentConfig& config,
                                       const std::vector<std::size_t>& grid, std::uint64_t seed, Gateway& gateway,
                                       const HarnessOptions& options) {
    auto opts = options;
    opts.run_initial = false;
    opts.run_final = false;
    if (!grid.empty()) opts.online_limit = grid.back();
    if (!opts.references) opts.references = std::make_shared<ReferenceCache>();
    SnapshotRegistry snapshots(opts.run_id, opts.out_root);
    auto run = run_database(corpus, db_id, config, Protocol::NewQuestion, seed, gateway, opts, snapshots);
    if (!run.online.completed) throw state_error("online phase failed: " + (run.notes.empty() ? "" : run.notes.back()));
    auto split = split_tasks(corpus, db_id, seed);
    if (opts.online_limit && *opts.online_limit < split.train.size()) split.train.resize(*opts.online_limit);
    return curve_from_snapshots(corpus, split, config, grid, snapshots, gateway, opts);
}

// ---------------------------------------------------------------- serialization

namespace {

json to_json(const TaskScore& s) {
    json j{{"task_id", s.task_id}, {"db_id", s.db_id}, {"phase", to_string(s.phase)}, {"z", s.z},
           {"outcome", s.outcome}, {"feedback_rounds", s.feedback_rounds}, {"final_sql", s.final_sql},
           {"flags", s.flags}};
    if (s.error_category) j["error_category"] = to_string(*s.error_category);
    if (!s.error_tag.empty()) j["error_tag"] = s.error_tag;
    return j;
}

TaskScore score_from_json(const json& j) {
    TaskScore s;
    s.task_id = j.at("task_id").get<std::string>();
    s.db_id = j.at("db_id").get<std::string>();
    s.phase = phase_from_string(j.at("phase").get<std::string>()).value_or(Phase::Initial);
    s.z = j.at("z").get<int>();
    s.outcome = j.value("outcome", "");
    s.feedback_rounds = j.value("feedback_rounds", 0);
    s.final_sql = j.value("final_sql", "");
    s.flags = j.value("flags", std::vector<std::string>{});
    if (j.contains("error_category")) s.error_category = error_category_from_string(j["error_category"].get<std::string>());
    s.error_tag = j.value("error_tag", "");
    return s;
}

json to_json(const PhaseSummary& p) {
    json results = json::array();
    for (const auto& r : p.results) results.push_back(to_json(r));
    return {{"phase", to_string(p.phase)}, {"db_id", p.db_id}, {"accuracy", round1(p.accuracy())},
            {"scorable", p.scorable()}, {"correct", p.correct()}, {"excluded", p.excluded},
            {"completed", p.completed}, {"results", results}};
}

PhaseSummary summary_from_json(const json& j) {
    PhaseSummary p;
    p.phase = phase_from_string(j.at("phase").get<std::string>()).value_or(Phase::Initial);
    p.db_id = j.at("db_id").get<std::string>();
    p.excluded = j.value("excluded", std::vector<std::string>{});
    p.completed = j.value("completed", true);
    for (const auto& r : j.at("results")) p.results.push_back(score_from_json(r));
    return p;
}

json to_json(const CurvePoint& p) {
    json j{{"db_id", p.db_id}, {"t", p.t}, {"accuracy", p.accuracy}, {"memory_size", p.memory_size}};
    if (p.coverage) j["coverage"] = *p.coverage;
    return j;
}

CurvePoint curve_from_json(const json& j) {
    CurvePoint p;
    p.db_id = j.at("db_id").get<std::string>();
    p.t = j.at("t").get<std::size_t>();
    p.accuracy = j.at("accuracy").get<double>();
    p.memory_size = j.value("memory_size", std::size_t{0});
    if (j.contains("coverage")) p.coverage = j["coverage"].get<double>();
    return p;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string fmt1(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", round1(x) + 0.0);
    return buf;
}

std::string pad(const std::string& s, std::size_t w) {
    // width in code points so the delta glyphs line up
    std::size_t cps = 0;
    for (unsigned char c : s) cps += (c & 0xC0) != 0x80;
    return s + std::string(w > cps ? w - cps : 0, ' ');
}

}  // namespace

json to_json(const RunReport& r) {
    json phases = json::array();
    for (const auto& p : r.phases) phases.push_back(to_json(p));
    json curve = json::array();
    for (const auto& p : r.curve) curve.push_back(to_json(p));
    json runs = json::array();
    for (const auto& x : r.runs) runs.push_back(to_json(x));
    return {{"run_id", r.run_id},
            {"label", r.label},
            {"protocol", to_string(r.protocol)},
            {"seed", r.seed},
            {"initial", r.initial},
            {"online", r.online},
            {"final", r.final},
            {"delta_i", r.delta_i},
            {"delta_o", r.delta_o},
            {"phases", phases},
            {"curve", curve},
            {"error_histogram", r.error_histogram},
            {"error_taxonomy", "rule-based reconstruction from clause inventories"},
            {"incomplete", r.incomplete},
            {"notes", r.notes},
            {"runs", runs}};
}

RunReport report_from_json(const json& j) {
    RunReport r;
    r.run_id = j.value("run_id", "");
    r.label = j.value("label", "");
    r.protocol = protocol_from_string(j.value("protocol", "new")).value_or(Protocol::NewQuestion);
    r.seed = j.value("seed", std::uint64_t{0});
    r.initial = j.value("initial", 0.0);
    r.online = j.value("online", 0.0);
    r.final = j.value("final", 0.0);
    r.delta_i = j.value("delta_i", 0.0);
    r.delta_o = j.value("delta_o", 0.0);
    for (const auto& p : j.value("phases", json::array())) r.phases.push_back(summary_from_json(p));
    for (const auto& p : j.value("curve", json::array())) r.curve.push_back(curve_from_json(p));
    r.error_histogram = j.value("error_histogram", std::map<std::string, std::size_t>{});
    r.incomplete = j.value("incomplete", false);
    r.notes = j.value("notes", std::vector<std::string>{});
    for (const auto& x : j.value("runs", json::array())) r.runs.push_back(report_from_json(x));
    return r;
}

std::string results_csv(const RunReport& r) {
    std::string out = "db_id,phase,task_id,z,outcome,feedback_rounds,error_category,error_tag,flags,final_sql\n";
    for (const auto& p : r.phases) {
        for (const auto& s : p.results) {
            std::string flags;
            for (const auto& f : s.flags) flags += (flags.empty() ? "" : ";") + f;
            out += csv_field(s.db_id) + "," + to_string(s.phase) + "," + csv_field(s.task_id) + "," +
                   std::to_string(s.z) + "," + s.outcome + "," + std::to_string(s.feedback_rounds) + "," +
                   (s.error_category ? to_string(*s.error_category) : "") + "," + s.error_tag + "," +
                   csv_field(flags) + "," + csv_field(s.final_sql) + "\n";
        }
        for (const auto& id : p.excluded) {
            out += csv_field(p.db_id) + "," + to_string(p.phase) + "," + csv_field(id) + ",,gold-defect,0,,,,\n";
        }
    }
    return out;
}

std::vector<PhaseSummary> results_from_csv(const std::string& csv) {
    auto rows = parse_csv(csv);
    std::vector<PhaseSummary> out;
    if (rows.empty()) return out;
    auto find = [&](const std::string& db, Phase ph) -> PhaseSummary& {
        for (auto& p : out) {
            if (p.db_id == db && p.phase == ph) return p;
        }
        PhaseSummary p;
        p.db_id = db;
        p.phase = ph;
        out.push_back(p);
        return out.back();
    };
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& row = rows[i];
        if (row.size() < 10) continue;
        auto phase = phase_from_string(row[1]);
        if (!phase) throw data_error("results.csv line " + std::to_string(i + 1) + ": bad phase " + row[1]);
        auto& summary = find(row[0], *phase);
        if (row[4] == "gold-defect" && row[3].empty()) {
            summary.excluded.push_back(row[2]);
            continue;
        }
        TaskScore s;
        s.db_id = row[0];
        s.phase = *phase;
        s.task_id = row[2];
        s.z = std::stoi(row[3]);
        s.outcome = row[4];
        s.feedback_rounds = std::stoi(row[5]);
        if (!row[6].empty()) s.error_category = error_category_from_string(row[6]);
        s.error_tag = row[7];
        if (!row[8].empty()) {
            std::stringstream ss(row[8]);
            for (std::string f; std::getline(ss, f, ';');) s.flags.push_back(f);
        }
        s.final_sql = row[9];
        summary.results.push_back(s);
    }
    return out;
}

std::string curve_csv(const RunReport& r) {
    std::string out = "db_id,t,accuracy,memory_size,coverage\n";
    for (const auto& p : r.curve) {
        char cov[32] = "";
        if (p.coverage) std::snprintf(cov, sizeof cov, "%.4f", *p.coverage);
        out += csv_field(p.db_id) + "," + std::to_string(p.t) + "," + fmt1(p.accuracy) + "," +
               std::to_string(p.memory_size) + "," + cov + "\n";
    }
    return out;
}

std::string report_text(const RunReport& r) {
    const bool same = r.protocol == Protocol::SameQuestion;
    std::ostringstream out;
    out << "Agent: " << r.label << "   protocol: " << (same ? "same questions" : "new questions")
        << "   seed: " << r.seed << "\n\n";
    std::set<std::string> dbs;
    for (const auto& p : r.phases) dbs.insert(p.db_id);
    std::size_t w = 14;
    for (const auto& db : dbs) w = std::max(w, db.size() + 10);
    auto header = [&](const std::string& first) {
        out << pad(first, w) << pad("Initial", 9);
        if (same) out << pad("Online", 9);
        out << pad("Final", 9) << pad("Δi", 8);
        if (same) out << pad("Δo", 8);
        out << "\n";
    };
    auto row = [&](const std::string& name, double i, double o, double f, double di, double d_o) {
        out << pad(name, w) << pad(fmt1(i), 9);
        if (same) out << pad(fmt1(o), 9);
        out << pad(fmt1(f), 9) << pad(fmt1(di), 8);
        if (same) out << pad(fmt1(d_o), 8);
        out << "\n";
    };
    header("Agent Label");
    if (r.task_count() == 0 && r.runs.empty()) {
        out << "(no tasks)\n";
        return out.str();
    }
    row(r.label, r.initial, r.online, r.final, r.delta_i, r.delta_o);
    for (std::size_t k = 0; k < r.runs.size(); ++k) {
        const auto& x = r.runs[k];
        row("  run " + std::to_string(k + 1), x.initial, x.online, x.final, x.delta_i, x.delta_o);
    }

    if (!dbs.empty()) {
        out << "\nPer database (n = scorable tasks in the evaluated split)\n";
        header("Database");
        for (const auto& db : dbs) {
            auto acc = [&](Phase ph) {
                auto* s = r.summary(db, ph);
                return s ? round1(s->accuracy()) : 0.0;
            };
            auto d = deltas_from(acc(Phase::Initial), acc(Phase::Online), acc(Phase::Final));
            auto* f = r.summary(db, Phase::Final);
            row(db + " (" + std::to_string(f ? f->scorable() : 0) + ")", acc(Phase::Initial), acc(Phase::Online),
                acc(Phase::Final), d.delta_i, d.delta_o);
        }
    }
    if (!r.error_histogram.empty()) {
        out << "\nFinal-phase failures by category (rule-based reconstruction)\n";
        for (const auto& [k, v] : r.error_histogram) out << "  " << pad(k, 16) << v << "\n";
    }
    if (r.incomplete) out << "\nINCOMPLETE: at least one phase aborted\n";
    for (const auto& n : r.notes) out << "note: " << n << "\n";
    return out.str();
}

void build_report(const RunReport& r, const fs::path& dir) {
    fs::create_directories(dir);
    auto write = [&](const std::string& name, const std::string& body) {
        std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
        if (!f) throw data_error("cannot write " + (dir / name).string());
        f << body;
        if (!f) throw data_error("write failed: " + (dir / name).string());
    };
    write("report.json", to_json(r).dump(2) + "\n");
    write("results.csv", results_csv(r));
    write("curve.csv", curve_csv(r));
    write("report.txt", report_text(r));
    if (!r.snapshots.is_null()) write("snapshots.json", r.snapshots.dump(2) + "\n");
}

}  // namespace tacit
