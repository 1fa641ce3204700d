#include <catch2/catch_amalgamated.hpp>

#include <thread>

#include "httplib.h"

#include "support.hpp"
#include "tacit/service.hpp"

using namespace tacit;
using namespace testsupport;
using namespace std::chrono_literals;

namespace {

struct Fixture {
    std::shared_ptr<ScriptedBackend> backend;
    Gateway gateway;
    FeedbackService service;
    httplib::Server server;
    std::thread th;
    int port = 0;

    explicit Fixture(bool wrong_first, std::string token = "")
        : Fixture(std::make_shared<ScriptedBackend>(GoldModel(corpus(), wrong_first)), std::move(token)) {}

    Fixture(std::shared_ptr<ScriptedBackend> b, std::string token)
        : backend(std::move(b)),
          gateway(backend),
          service(corpus(), gateway, opts(std::move(token))) {
        service.mount(server);
        port = server.bind_to_any_port("127.0.0.1");
        th = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~Fixture() {
        server.stop();
        th.join();
    }

    static ServiceOptions opts(std::string token) {
        ServiceOptions o;
        o.token = std::move(token);
        return o;
    }

    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(10, 0);
        return c;
    }

    json view(const std::string& id) { return service.session_view(id); }

    void await(const std::string& id, SessionState s) { REQUIRE(service.wait_for_state(id, s, 10s)); }
};

const TaskInstance& task1() { return corpus().task("1"); }

// Everything the service could show a human, flattened.
std::string all_payloads(FeedbackService& svc, const std::string& id) {
    bool done = false;
    std::string out = svc.session_view(id).dump() + svc.memory_view(id).dump() + svc.list_sessions().dump();
    for (const auto& e : svc.events_since(id, 0, 0ms, done)) out += e.dump();
    return out;
}

}  // namespace

TEST_CASE("feedback, refinement, approval", "[service]") {
    Fixture f(true);
    auto id = f.service.create_session("financial", {"1"}, AgentConfig::from_label("NP-0"));
    f.await(id, SessionState::AwaitingHuman);

    auto v = f.view(id);
    CHECK(v["pending"]["round"] == 1);
    CHECK(v["pending"]["budget_remaining"] == 25);
    CHECK(v["pending"]["candidate_sql"] == GoldModel::wrong(task1()));
    CHECK(v["pending"]["preview"]["row_count"] == 0);

    f.service.submit_feedback(id, "Gender is stored as 'M', and rank by A15.");
    f.await(id, SessionState::AwaitingHuman);
    CHECK(f.view(id)["pending"]["round"] == 2);
    CHECK(text::contains(f.backend->requests().back().turns.back().content, "Gender is stored as 'M', and rank by A15."));

    f.service.approve(id);
    f.await(id, SessionState::Completed);
    v = f.view(id);
    REQUIRE(v["results"].size() == 1);
    CHECK(v["results"][0]["outcome"] == "Solved");
    CHECK(v["results"][0]["feedback_rounds"] == 1);
    CHECK(v["results"][0]["z"] == 1);
    CHECK(v["pending"].is_null());

    auto mem = f.service.memory_view(id);
    CHECK(mem["stores"]["similar_question"].size() == 1);
    CHECK(mem["stores"]["similar_question"][0]["key"] == task1().nlq);

    CHECK_THROWS_AS(f.service.approve(id), ServiceError);
}

TEST_CASE("empty feedback is rejected", "[service]") {
    auto b = std::make_shared<ScriptedBackend>();
    b->set_responder([](const ChatRequest&) { return say("```sql\nSELECT COUNT(*) FROM client\n```"); });
    Fixture f(b, "");
    auto id = f.service.create_session("financial", {"1"}, AgentConfig::from_label("NP-0"));
    f.await(id, SessionState::AwaitingHuman);
    CHECK_THROWS_MATCHES(f.service.submit_feedback(id, "  \n"), ServiceError,
                         Catch::Matchers::Predicate<ServiceError>([](const ServiceError& e) { return e.status() == 400; }));
    CHECK(f.view(id)["state"] == "AwaitingHuman");
    f.service.skip(id);
    f.await(id, SessionState::Completed);
    auto r = f.view(id)["results"][0];
    CHECK(r["outcome"] == "StepCapExceeded");
    CHECK(r["flags"].dump().find("skipped") != std::string::npos);
    // the agent never produced gold here, so nothing shown to the human contains it
    CHECK_FALSE(text::contains(all_payloads(f.service, id), task1().gold_sql));
}

TEST_CASE("approving a wrong query is recorded as an override", "[service]") {
    Fixture f(true);
    auto id = f.service.create_session("financial", {"1"}, AgentConfig::from_label("NP-0"));
    f.await(id, SessionState::AwaitingHuman);
    f.service.approve(id);
    f.await(id, SessionState::Completed);
    auto r = f.view(id)["results"][0];
    CHECK(r["z"] == 0);
    CHECK(r["flags"].dump().find("human-override") != std::string::npos);
}

TEST_CASE("procedural session distills after approval", "[service]") {
    Fixture f(false);
    auto id = f.service.create_session("financial", {"1", "0"}, AgentConfig::from_label("P-3"));
    for (int i = 0; i < 2; ++i) {
        f.await(id, SessionState::AwaitingHuman);
        f.service.approve(id);
    }
    f.await(id, SessionState::Completed);
    auto v = f.view(id);
    REQUIRE(v["results"].size() == 2);
    for (const auto& r : v["results"]) CHECK(r["z"] == 1);

    bool done = false;
    auto events = f.service.events_since(id, 0, 0ms, done);
    CHECK(done);
    std::size_t distill = 0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        CHECK(events[i]["seq"] == i);
        distill += events[i]["phase"] == "distill";
    }
    CHECK(distill > 0);
    auto mem = f.service.memory_view(id);
    CHECK(mem["level"] == 3);
    CHECK(mem["stores"]["similar_question"].size() == 2);
    CHECK(mem["stores"]["similar_subtask"].size() == 2);
}

TEST_CASE("HTTP surface", "[service]") {
    Fixture f(true);
    auto c = f.client();

    auto r = c.Get("/sessions");
    REQUIRE(r);
    CHECK(json::parse(r->body)["sessions"].empty());
    CHECK(c.Get("/sessions/nope")->status == 404);
    CHECK(c.Post("/sessions/nope/approve", "", "application/json")->status == 404);
    CHECK(c.Post("/sessions", R"({"db_id": "financial"})", "application/json")->status == 400);
    CHECK(c.Post("/sessions", R"({"db_id": "nowhere", "task_ids": ["1"]})", "application/json")->status == 404);
    CHECK(c.Post("/sessions", R"({"db_id": "financial", "task_ids": ["1"], "agent": "X-9"})", "application/json")->status == 400);
    CHECK(c.Post("/sessions", "not json", "application/json")->status == 400);

    auto openapi = c.Get("/openapi.json");
    REQUIRE(openapi);
    auto doc = json::parse(openapi->body);
    CHECK(doc["paths"].contains("/sessions/{session_id}/events"));

    r = c.Post("/sessions", R"({"db_id": "financial", "task_ids": ["1"], "agent": "NP-0"})", "application/json");
    REQUIRE(r->status == 200);
    std::string id = json::parse(r->body)["session_id"];
    f.await(id, SessionState::AwaitingHuman);
    CHECK(c.Post("/sessions/" + id + "/feedback", R"({"text": ""})", "application/json")->status == 400);
    CHECK(c.Post("/sessions/" + id + "/feedback", R"({"text": "Use 'M'."})", "application/json")->status == 200);
    f.await(id, SessionState::AwaitingHuman);
    CHECK(c.Post("/sessions/" + id + "/approve", "", "application/json")->status == 200);
    f.await(id, SessionState::Completed);
    CHECK(c.Post("/sessions/" + id + "/approve", "", "application/json")->status == 409);
    CHECK(json::parse(c.Get("/sessions/" + id + "/memory")->body)["stores"]["similar_question"].size() == 1);

    // SSE replays the whole transcript in order, then ends
    std::string stream;
    auto sse = c.Get("/sessions/" + id + "/events", [&](const char* d, std::size_t n) {
        stream.append(d, n);
        return true;
    });
    REQUIRE(sse);
    CHECK(sse->get_header_value("Content-Type") == "text/event-stream");
    std::vector<std::size_t> ids;
    for (const auto& line : text::split_lines(stream)) {
        if (line.rfind("id: ", 0) == 0) ids.push_back(std::stoul(line.substr(4)));
    }
    bool done = false;
    auto n = f.service.events_since(id, 0, 0ms, done).size();
    REQUIRE(ids.size() == n);
    for (std::size_t i = 0; i < ids.size(); ++i) CHECK(ids[i] == i);
    CHECK(text::contains(stream, "event: end"));

    // resuming from an id skips what was already seen
    httplib::Headers h{{"Last-Event-ID", std::to_string(n - 2)}};
    std::string tail;
    c.Get("/sessions/" + id + "/events", h, [&](const char* d, std::size_t k) {
        tail.append(d, k);
        return true;
    });
    CHECK(text::contains(tail, "id: " + std::to_string(n - 1) + "\n"));
    CHECK_FALSE(text::contains(tail, "id: " + std::to_string(n - 2) + "\n"));
}

TEST_CASE("bearer token", "[service]") {
    Fixture f(true, "sekrit");
    auto c = f.client();
    CHECK(c.Get("/sessions")->status == 401);
    CHECK(c.Get("/openapi.json")->status == 200);
    c.set_bearer_token_auth("sekrit");
    CHECK(c.Get("/sessions")->status == 200);
}

TEST_CASE("sessions on one database queue behind each other", "[service]") {
    Fixture f(true);
    auto a = f.service.create_session("financial", {"1"}, AgentConfig::from_label("NP-0"));
    auto b = f.service.create_session("financial", {"0"}, AgentConfig::from_label("NP-0"));
    f.await(a, SessionState::AwaitingHuman);
    std::this_thread::sleep_for(100ms);
    CHECK(f.view(b)["state"] == "Idle");
    // nothing to act on while queued
    CHECK_THROWS_MATCHES(f.service.approve(b), ServiceError,
                         Catch::Matchers::Predicate<ServiceError>([](const ServiceError& e) { return e.status() == 409; }));
    CHECK_THROWS_AS(f.service.submit_feedback(b, "x"), ServiceError);
    f.service.skip(a);
    f.await(b, SessionState::AwaitingHuman);
    f.service.skip(b);
    f.await(b, SessionState::Completed);
    CHECK(f.service.list_sessions()["sessions"].size() == 2);
    CHECK_THROWS_AS(f.service.create_session("financial", {"1"}, AgentConfig::from_label("P-3")), ServiceError);
}
