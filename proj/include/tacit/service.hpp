#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "tacit/agent.hpp"
#include "tacit/corpus.hpp"
#include "tacit/memory.hpp"

namespace httplib {
class Server;
}

namespace tacit {

enum class SessionState { Idle, AgentWorking, AwaitingHuman, Completed };
std::string to_string(SessionState s);

inline constexpr std::size_t kPreviewRows = 50;

// Thrown by the service API; `status` is the HTTP status it maps to.
class ServiceError : public std::runtime_error {
public:
    ServiceError(int status, const std::string& msg) : std::runtime_error(msg), status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

struct ServiceOptions {
    std::shared_ptr<Embedder> embedder;  // defaults to HashEmbedder
    // Stores are persisted under memory_root/<db_id>/ when set.
    std::optional<std::filesystem::path> memory_root;
    std::chrono::milliseconds human_timeout{30 * 60 * 1000};
    std::string run_id = "service";
    std::string token;  // bearer token required on every request when non-empty
    std::optional<std::filesystem::path> ui_dir;
};

class FeedbackService {
public:
    FeedbackService(const Corpus& corpus, Gateway& gateway, ServiceOptions options = {});
    ~FeedbackService();

    FeedbackService(const FeedbackService&) = delete;
    FeedbackService& operator=(const FeedbackService&) = delete;

    // Starts the online loop in its own thread. Sessions on the same db_id
    // queue behind each other (one writable store per database).
    std::string create_session(const std::string& db_id, const std::vector<std::string>& task_ids,
                               const AgentConfig& config);

    void submit_feedback(const std::string& session_id, const std::string& text);
    void approve(const std::string& session_id);
    void skip(const std::string& session_id);

    nlohmann::json session_view(const std::string& session_id) const;
    nlohmann::json list_sessions() const;
    nlohmann::json memory_view(const std::string& session_id) const;

    // Transcript events with seq >= from; blocks up to `wait` for new ones.
    // `done` is set once the session completed and every event was returned.
    std::vector<nlohmann::json> events_since(const std::string& session_id, std::size_t from,
                                             std::chrono::milliseconds wait, bool& done) const;

    // Blocks until the session reaches `state` or the timeout passes.
    bool wait_for_state(const std::string& session_id, SessionState state,
                        std::chrono::milliseconds timeout) const;

    MemoryStoreSet& store(const std::string& db_id, int level);

    // Registers the HTTP routes on `server`.
    void mount(httplib::Server& server);

    struct Session;

private:
    std::shared_ptr<Session> find(const std::string& id) const;
    void run_session(std::shared_ptr<Session> s);

    const Corpus& corpus_;
    Gateway& gateway_;
    ServiceOptions options_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::vector<std::string> order_;
    std::map<std::string, std::unique_ptr<MemoryStoreSet>> stores_;
    std::map<std::string, std::shared_ptr<std::timed_mutex>> db_locks_;
    std::vector<std::thread> threads_;
    std::uint64_t next_id_ = 1;
};

// The shipped OpenAPI document.
std::string_view openapi_document();

}  // namespace tacit
