#include "tacit/service.hpp"

#include <algorithm>

#include "httplib.h"

#include "tacit/distill.hpp"
#include "tacit/error.hpp"
#include "tacit/sqlexec.hpp"
#include "tacit/text.hpp"

namespace tacit {

namespace detail {
std::string_view openapi_json();
}

std::string_view openapi_document() { return detail::openapi_json(); }

using nlohmann::json;

std::string to_string(SessionState s) {
    switch (s) {
        case SessionState::Idle: return "Idle";
        case SessionState::AgentWorking: return "AgentWorking";
        case SessionState::AwaitingHuman: return "AwaitingHuman";
        case SessionState::Completed: return "Completed";
    }
    return "Idle";
}

struct FeedbackService::Session {
    enum class Action { None, Feedback, Approve, Skip };

    std::string id;
    std::string db_id;
    std::vector<TaskInstance> tasks;
    AgentConfig config;

    mutable std::mutex mu;
    mutable std::condition_variable cv;
    SessionState state = SessionState::Idle;
    bool paused = false;
    bool stop = false;
    std::optional<json> pending;
    std::vector<json> transcript;
    std::vector<json> results;
    std::size_t task_index = 0;
    std::size_t synced = 0;  // events of the current trajectory already in transcript
    int round = 0;
    Action action = Action::None;
    std::string action_text;

    // caller holds mu
    void append(const ChatTurn& turn, const std::string& task_id, const std::string& phase) {
        auto j = to_json(turn);
        j["seq"] = transcript.size();
        j["task_id"] = task_id;
        j["phase"] = phase;
        transcript.push_back(std::move(j));
    }
    void sync(const std::vector<ChatTurn>& events, const std::string& task_id) {
        for (; synced < events.size(); ++synced) append(events[synced], task_id, "online");
    }
};

namespace {

struct SkipRequested : std::runtime_error {
    SkipRequested() : std::runtime_error("skipped by expert") {}
};
struct SessionStopped : std::runtime_error {
    SessionStopped() : std::runtime_error("service shutting down") {}
};

json preview_json(const ExecutionOutcome& o) {
    json j{{"status", to_string(o.status)}, {"row_count", o.rows.size()}, {"columns", o.columns},
           {"truncated", o.overflow || o.rows.size() > kPreviewRows}};
    json rows = json::array();
    for (std::size_t i = 0; i < o.rows.size() && i < kPreviewRows; ++i) {
        json row = json::array();
        for (const auto& v : o.rows[i]) row.push_back(to_json(v));
        rows.push_back(row);
    }
    j["rows"] = rows;
    if (!o.ok()) j["error"] = o.error_text;
    return j;
}

class HumanFeedbackSource final : public FeedbackSource {
public:
    HumanFeedbackSource(FeedbackService::Session& s, const DatabaseCatalog& catalog, std::chrono::milliseconds timeout)
        : s_(s), catalog_(catalog), timeout_(timeout) {}

    FeedbackDecision review(const std::string& candidate_sql, const TaskInstance& task,
                            const std::vector<ChatTurn>& transcript) override {
        auto outcome = execute(catalog_, candidate_sql, s_.config.exec);
        std::unique_lock lock(s_.mu);
        s_.sync(transcript, task.task_id);
        ++s_.round;
        auto schema = catalog_.schema_text;
        if (schema.size() > 4000) schema = schema.substr(0, 4000) + "\n...";
        s_.pending = json{{"task_id", task.task_id},
                          {"nlq", task.nlq},
                          {"schema_excerpt", schema},
                          {"candidate_sql", candidate_sql},
                          {"preview", preview_json(outcome)},
                          {"round", s_.round},
                          {"budget_remaining", std::max(0, s_.config.max_feedback_steps - (s_.round - 1))}};
        s_.state = SessionState::AwaitingHuman;
        s_.action = FeedbackService::Session::Action::None;
        s_.cv.notify_all();
        while (s_.action == FeedbackService::Session::Action::None && !s_.stop) {
            if (!s_.cv.wait_for(lock, timeout_, [&] {
                    return s_.action != FeedbackService::Session::Action::None || s_.stop;
                })) {
                s_.paused = true;  // resumable: keep waiting for the human
            }
        }
        if (s_.stop) throw SessionStopped();
        auto action = s_.action;
        auto text_in = s_.action_text;
        s_.action = FeedbackService::Session::Action::None;
        s_.pending.reset();
        s_.paused = false;
        s_.state = SessionState::AgentWorking;
        s_.cv.notify_all();
        lock.unlock();

        FeedbackDecision d;
        d.test_sql = candidate_sql;
        d.outcome_tag = outcome.ok() ? "rows" : (outcome.status == ExecStatus::SqlError ? "sql-error" : "timeout");
        switch (action) {
            case FeedbackService::Session::Action::Skip: throw SkipRequested();
            case FeedbackService::Session::Action::Feedback:
                d.verdict = FeedbackDecision::Verdict::Feedback;
                d.text = text_in;
                break;
            case FeedbackService::Session::Action::Approve: {
                d.verdict = FeedbackDecision::Verdict::Correct;
                d.text = "The SQL query is correct.";
                auto r = score(catalog_, task, candidate_sql, s_.config.exec);
                d.z = r.z;
                if (r.z != 1) d.flags.push_back("human-override");
                break;
            }
            case FeedbackService::Session::Action::None: break;
        }
        return d;
    }

private:
    FeedbackService::Session& s_;
    const DatabaseCatalog& catalog_;
    std::chrono::milliseconds timeout_;
};

}  // namespace

FeedbackService::FeedbackService(const Corpus& corpus, Gateway& gateway, ServiceOptions options)
    : corpus_(corpus), gateway_(gateway), options_(std::move(options)) {
    if (!options_.embedder) options_.embedder = std::make_shared<CachingEmbedder>(std::make_shared<HashEmbedder>());
}

FeedbackService::~FeedbackService() {
    {
        std::lock_guard lock(mu_);
        for (auto& [id, s] : sessions_) {
            std::lock_guard sl(s->mu);
            s->stop = true;
            s->cv.notify_all();
        }
    }
    for (auto& t : threads_) {
        if (t.joinable()) t.join();
    }
}

MemoryStoreSet& FeedbackService::store(const std::string& db_id, int level) {
    std::lock_guard lock(mu_);
    auto& slot = stores_[db_id];
    if (!slot) {
        if (options_.memory_root && std::filesystem::exists(*options_.memory_root / db_id)) {
            slot = std::make_unique<MemoryStoreSet>(read_store_files(*options_.memory_root / db_id, db_id, level),
                                                    options_.embedder);
        } else {
            slot = std::make_unique<MemoryStoreSet>(db_id, level, options_.embedder);
        }
        if (options_.memory_root) slot->attach_persistence(*options_.memory_root / db_id);
    }
    if (slot->level() != level) {
        throw ServiceError(409, "memory store for " + db_id + " is at level " + std::to_string(slot->level()) +
                                    "; requested level " + std::to_string(level));
    }
    return *slot;
}

std::string FeedbackService::create_session(const std::string& db_id, const std::vector<std::string>& task_ids,
                                            const AgentConfig& config) {
    if (!corpus_.catalogs.count(db_id)) throw ServiceError(404, "unknown db_id: " + db_id);
    if (task_ids.empty()) throw ServiceError(400, "task_ids must not be empty");
    auto s = std::make_shared<Session>();
    for (const auto& id : task_ids) {
        auto it = std::find_if(corpus_.tasks.begin(), corpus_.tasks.end(), [&](const TaskInstance& t) { return t.task_id == id; });
        if (it == corpus_.tasks.end()) throw ServiceError(404, "unknown task id: " + id);
        if (it->db_id != db_id) throw ServiceError(404, "task " + id + " does not belong to " + db_id);
        s->tasks.push_back(*it);
    }
    store(db_id, config.memory_level);  // creates it and checks the level
    s->db_id = db_id;
    s->config = config;
    std::lock_guard lock(mu_);
    s->id = "s" + std::to_string(next_id_++);
    sessions_[s->id] = s;
    order_.push_back(s->id);
    if (!db_locks_[db_id]) db_locks_[db_id] = std::make_shared<std::timed_mutex>();
    threads_.emplace_back([this, s] { run_session(s); });
    return s->id;
}

void FeedbackService::run_session(std::shared_ptr<Session> s) {
    std::shared_ptr<std::timed_mutex> db_lock;
    {
        std::lock_guard lock(mu_);
        db_lock = db_locks_[s->db_id];
    }
    // One writer per database: later sessions wait here in state Idle.
    std::unique_lock writer(*db_lock, std::defer_lock);
    while (!writer.try_lock_for(std::chrono::milliseconds(50))) {
        std::lock_guard sl(s->mu);
        if (s->stop) return;
    }
    const auto& catalog = corpus_.catalog(s->db_id);
    auto& memory = store(s->db_id, s->config.memory_level);
    {
        std::lock_guard sl(s->mu);
        s->state = SessionState::AgentWorking;
        s->cv.notify_all();
    }
    HumanFeedbackSource source(*s, catalog, options_.human_timeout);
    for (std::size_t i = 0; i < s->tasks.size(); ++i) {
        const auto& task = s->tasks[i];
        {
            std::lock_guard sl(s->mu);
            if (s->stop) break;
            s->task_index = i;
            s->synced = 0;
            s->round = 0;
        }
        auto traj = run_online(task, s->config, {catalog, memory, gateway_}, source);
        if (traj.cause == SessionStopped().what()) break;
        if (traj.outcome == Outcome::Aborted && traj.cause == SkipRequested().what()) {
            traj.outcome = Outcome::StepCapExceeded;
            traj.add_flag("skipped");
        }
        {
            std::lock_guard sl(s->mu);
            s->sync(traj.events, task.task_id);
            s->cv.notify_all();
        }
        std::optional<int> z;
        if (traj.outcome == Outcome::Solved) {
            z = traj.final_sql ? score(catalog, task, *traj.final_sql, s->config.exec).z : std::nullopt;
            try {
                learn_from(traj, task, s->config, catalog, gateway_, memory,
                           Provenance{options_.run_id + "/" + s->id, task.task_id, static_cast<std::int64_t>(i + 1)});
            } catch (const std::exception& e) {
                traj.add_flag("learn-failed");
            }
        }
        std::lock_guard sl(s->mu);
        for (const auto& turn : traj.distill_events) s->append(turn, task.task_id, "distill");
        json r{{"task_id", task.task_id}, {"outcome", to_string(traj.outcome)},
               {"feedback_rounds", traj.feedback_rounds}, {"flags", traj.flags}, {"cause", traj.cause}};
        r["final_sql"] = traj.final_sql ? json(*traj.final_sql) : json(nullptr);
        r["z"] = z ? json(*z) : json(nullptr);
        s->results.push_back(r);
        s->cv.notify_all();
    }
    std::lock_guard sl(s->mu);
    s->state = SessionState::Completed;
    s->pending.reset();
    s->cv.notify_all();
}

std::shared_ptr<FeedbackService::Session> FeedbackService::find(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ServiceError(404, "unknown session: " + id);
    return it->second;
}

namespace {

void act(FeedbackService::Session& s, FeedbackService::Session::Action a, const std::string& text, const char* what) {
    std::lock_guard lock(s.mu);
    if (s.state != SessionState::AwaitingHuman || s.action != FeedbackService::Session::Action::None) {
        throw ServiceError(409, std::string(what) + " not allowed in state " + to_string(s.state));
    }
    s.action = a;
    s.action_text = text;
    s.state = SessionState::AgentWorking;
    s.cv.notify_all();
}

}  // namespace

void FeedbackService::submit_feedback(const std::string& session_id, const std::string& text) {
    auto s = find(session_id);
    {
        std::lock_guard lock(s->mu);
        if (s->state != SessionState::AwaitingHuman) {
            throw ServiceError(409, "feedback not allowed in state " + to_string(s->state));
        }
    }
    if (text::trim(text).empty()) throw ServiceError(400, "feedback text must not be empty");
    act(*s, Session::Action::Feedback, text, "feedback");
}

void FeedbackService::approve(const std::string& session_id) { act(*find(session_id), Session::Action::Approve, "", "approve"); }

void FeedbackService::skip(const std::string& session_id) { act(*find(session_id), Session::Action::Skip, "", "skip"); }

json FeedbackService::session_view(const std::string& session_id) const {
    auto s = find(session_id);
    std::lock_guard lock(s->mu);
    json tasks = json::array();
    for (const auto& t : s->tasks) tasks.push_back({{"task_id", t.task_id}, {"nlq", t.nlq}});
    return {{"session_id", s->id},
            {"db_id", s->db_id},
            {"agent", s->config.label},
            {"state", to_string(s->state)},
            {"paused", s->paused},
            {"tasks", tasks},
            {"task_index", s->task_index},
            {"pending", s->pending ? *s->pending : json(nullptr)},
            {"transcript", s->transcript},
            {"results", s->results},
            {"max_feedback_rounds", s->config.max_feedback_steps}};
}

json FeedbackService::list_sessions() const {
    std::vector<std::shared_ptr<Session>> all;
    {
        std::lock_guard lock(mu_);
        for (const auto& id : order_) all.push_back(sessions_.at(id));
    }
    json out = json::array();
    for (const auto& s : all) {
        std::lock_guard lock(s->mu);
        out.push_back({{"session_id", s->id}, {"db_id", s->db_id}, {"agent", s->config.label},
                       {"state", to_string(s->state)}, {"task_count", s->tasks.size()},
                       {"completed_tasks", s->results.size()}});
    }
    return {{"sessions", out}};
}

json FeedbackService::memory_view(const std::string& session_id) const {
    auto s = find(session_id);
    const MemoryStoreSet* set = nullptr;
    {
        std::lock_guard lock(mu_);
        auto it = stores_.find(s->db_id);
        if (it != stores_.end()) set = it->second.get();
    }
    json stores = json::object();
    for (auto kind : kAllMemoryKinds) {
        json arr = json::array();
        if (set) {
            for (const auto& r : set->records(kind)) {
                arr.push_back({{"key", r.key}, {"body", r.body},
                               {"provenance", {{"run_id", r.provenance.run_id}, {"task_id", r.provenance.task_id},
                                               {"created_at", r.provenance.created_at}}}});
            }
        }
        stores[to_string(kind)] = arr;
    }
    return {{"db_id", s->db_id}, {"level", set ? set->level() : s->config.memory_level}, {"stores", stores}};
}

std::vector<json> FeedbackService::events_since(const std::string& session_id, std::size_t from,
                                                std::chrono::milliseconds wait, bool& done) const {
    auto s = find(session_id);
    std::unique_lock lock(s->mu);
    s->cv.wait_for(lock, wait, [&] { return s->transcript.size() > from || s->state == SessionState::Completed || s->stop; });
    std::vector<json> out;
    for (auto i = from; i < s->transcript.size(); ++i) out.push_back(s->transcript[i]);
    done = (s->state == SessionState::Completed || s->stop) && from + out.size() >= s->transcript.size();
    return out;
}

bool FeedbackService::wait_for_state(const std::string& session_id, SessionState state,
                                     std::chrono::milliseconds timeout) const {
    auto s = find(session_id);
    std::unique_lock lock(s->mu);
    return s->cv.wait_for(lock, timeout, [&] { return s->state == state; });
}

// ---------------------------------------------------------------- HTTP

namespace {

void send_json(httplib::Response& res, const json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& msg) {
    send_json(res, {{"error", msg}}, status);
}

template <class F>
httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const ServiceError& e) {
            send_error(res, e.status(), e.what());
        } catch (const json::exception& e) {
            send_error(res, 400, std::string("invalid JSON body: ") + e.what());
        } catch (const Error& e) {
            int status = e.kind() == ErrorKind::NotFound ? 404 : e.kind() == ErrorKind::Usage ? 400 : 500;
            send_error(res, status, e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    };
}

json body_of(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    auto j = json::parse(req.body);
    if (!j.is_object()) throw ServiceError(400, "request body must be a JSON object");
    return j;
}

}  // namespace

void FeedbackService::mount(httplib::Server& server) {
    if (!options_.token.empty()) {
        auto expected = "Bearer " + options_.token;
        server.set_pre_routing_handler([expected](const httplib::Request& req, httplib::Response& res) {
            if (req.path.rfind("/sessions", 0) != 0) return httplib::Server::HandlerResponse::Unhandled;
            if (req.get_header_value("Authorization") == expected) return httplib::Server::HandlerResponse::Unhandled;
            send_error(res, 401, "missing or wrong bearer token");
            return httplib::Server::HandlerResponse::Handled;
        });
    }
    server.Get("/openapi.json", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(std::string(openapi_document()), "application/json");
    });
    server.Get("/sessions", guarded([this](const httplib::Request&, httplib::Response& res) { send_json(res, list_sessions()); }));
    server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
        auto body = body_of(req);
        if (!body.contains("db_id") || !body["db_id"].is_string()) throw ServiceError(400, "db_id (string) is required");
        if (!body.contains("task_ids") || !body["task_ids"].is_array()) throw ServiceError(400, "task_ids (array) is required");
        auto label = body.value("agent", std::string("P-3"));
        auto labels = agent_labels();
        if (std::find(labels.begin(), labels.end(), label) == labels.end()) throw ServiceError(400, "unknown agent label: " + label);
        auto config = AgentConfig::from_label(label);
        if (body.contains("max_feedback_rounds")) config.max_feedback_steps = body["max_feedback_rounds"].get<int>();
        std::vector<std::string> ids;
        for (const auto& t : body["task_ids"]) ids.push_back(t.is_string() ? t.get<std::string>() : t.dump());
        auto id = create_session(body["db_id"].get<std::string>(), ids, config);
        send_json(res, {{"session_id", id}, {"state", session_view(id)["state"]}});
    }));
    server.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        send_json(res, session_view(req.matches[1]));
    }));
    server.Post(R"(/sessions/([^/]+)/feedback)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        auto body = body_of(req);
        if (!body.contains("text") || !body["text"].is_string()) throw ServiceError(400, "text (string) is required");
        submit_feedback(req.matches[1], body["text"].get<std::string>());
        send_json(res, {{"ok", true}});
    }));
    server.Post(R"(/sessions/([^/]+)/approve)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        approve(req.matches[1]);
        send_json(res, {{"ok", true}});
    }));
    server.Post(R"(/sessions/([^/]+)/skip)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        skip(req.matches[1]);
        send_json(res, {{"ok", true}});
    }));
    server.Get(R"(/sessions/([^/]+)/memory)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        send_json(res, memory_view(req.matches[1]));
    }));
    server.Get(R"(/sessions/([^/]+)/events)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        std::string id = req.matches[1];
        find(id);  // 404 before the stream starts
        std::size_t from = 0;
        if (req.has_param("from")) from = std::stoul(req.get_param_value("from"));
        if (req.has_header("Last-Event-ID")) from = std::stoul(req.get_header_value("Last-Event-ID")) + 1;
        auto cursor = std::make_shared<std::size_t>(from);
        res.set_chunked_content_provider("text/event-stream", [this, id, cursor](std::size_t, httplib::DataSink& sink) {
            bool done = false;
            auto events = events_since(id, *cursor, std::chrono::milliseconds(1000), done);
            for (const auto& e : events) {
                auto frame = "id: " + std::to_string(*cursor) + "\nevent: turn\ndata: " + e.dump() + "\n\n";
                if (!sink.write(frame.data(), frame.size())) return false;
                ++*cursor;
            }
            if (done) {
                std::string end = "event: end\ndata: {}\n\n";
                sink.write(end.data(), end.size());
                sink.done();
                return true;
            }
            if (events.empty()) {
                std::string ping = ": keep-alive\n\n";
                if (!sink.write(ping.data(), ping.size())) return false;
            }
            return true;
        });
    }));
    if (options_.ui_dir) server.set_mount_point("/", options_.ui_dir->string());
}

}  // namespace tacit
