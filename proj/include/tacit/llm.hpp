#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "tacit/embedding.hpp"
#include "tacit/error.hpp"

namespace tacit {

enum class Role { System, User, Assistant, SelfThought, ToolCall, ToolResult };
std::string to_string(Role r);
std::optional<Role> role_from_string(const std::string& s);

struct ToolInvocation {
    std::string name;
    nlohmann::json arguments = nlohmann::json::object();
    std::string call_id;

    bool operator==(const ToolInvocation&) const = default;
};

struct ChatTurn {
    Role role = Role::User;
    std::string content;
    std::optional<ToolInvocation> tool;  // ToolCall and ToolResult turns
    std::string author;                  // "agent", "expert", "human", "system", tool name...
    std::string recipient;

    bool operator==(const ChatTurn&) const = default;
};

nlohmann::json to_json(const ChatTurn& t);
ChatTurn chat_turn_from_json(const nlohmann::json& j);

struct ToolSpec {
    std::string name;
    std::string description;
    nlohmann::json parameters = nlohmann::json::object();  // JSON schema
};

struct RetryPolicy {
    int max_attempts = 3;
    int backoff_ms = 500;
};

struct ModelConfig {
    std::string model_id = "gpt-4o";
    double temperature = 0.0;
    std::size_t max_context_tokens = 128'000;
    RetryPolicy retry;
};

struct Usage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

struct AssistantTurn {
    std::string content;
    std::vector<ToolInvocation> tool_calls;
    std::optional<Usage> usage;
};

nlohmann::json to_json(const AssistantTurn& t);
AssistantTurn assistant_turn_from_json(const nlohmann::json& j);

struct ChatRequest {
    std::vector<ChatTurn> turns;
    std::vector<ToolSpec> tools;
    ModelConfig config;
};

// Normalized request used for cassette keys: only fields that affect the
// response, objects with sorted keys.
nlohmann::json canonical_request(const ChatRequest& req);
std::string request_key(const ChatRequest& req);

class ContextExceeded : public Error {
public:
    ContextExceeded(std::size_t estimate, std::size_t limit)
        : Error(ErrorKind::Backend, "context estimate " + std::to_string(estimate) + " exceeds limit " +
                                        std::to_string(limit)),
          estimate(estimate), limit(limit) {}
    std::size_t estimate;
    std::size_t limit;
};

class ReplayMiss : public Error {
public:
    explicit ReplayMiss(const std::string& key)
        : Error(ErrorKind::Backend, "replay miss: no cassette entry for request " + key), key(key) {}
    std::string key;
};

class ScriptExhausted : public Error {
public:
    ScriptExhausted() : Error(ErrorKind::Backend, "scripted backend exhausted") {}
};

// Model kept producing more than one tool call, or an unknown tool.
class ToolProtocolError : public Error {
public:
    explicit ToolProtocolError(const std::string& what) : Error(ErrorKind::Backend, what) {}
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string name() const = 0;
    virtual AssistantTurn complete(const ChatRequest& req) = 0;
};

// Pops a queue; once empty, falls through to the responder if one is set.
class ScriptedBackend final : public Backend {
public:
    using Responder = std::function<AssistantTurn(const ChatRequest&)>;

    ScriptedBackend() = default;
    explicit ScriptedBackend(std::vector<AssistantTurn> script) : queue_(script.begin(), script.end()) {}
    explicit ScriptedBackend(Responder responder) : responder_(std::move(responder)) {}

    std::string name() const override { return "scripted"; }
    AssistantTurn complete(const ChatRequest& req) override;

    void push(AssistantTurn t);
    void set_responder(Responder r);
    std::size_t remaining() const;
    // Every request seen, in order.
    std::vector<ChatRequest> requests() const;

private:
    mutable std::mutex mu_;
    std::deque<AssistantTurn> queue_;
    Responder responder_;
    std::vector<ChatRequest> seen_;
};

struct CassetteEntry {
    std::string key;
    nlohmann::json request;
    AssistantTurn response;
};

std::vector<CassetteEntry> read_cassette(const std::filesystem::path& path);

// Answers by request key. Repeated identical requests consume recorded
// responses in order and then keep returning the last one.
class ReplayBackend final : public Backend {
public:
    explicit ReplayBackend(const std::filesystem::path& cassette);
    explicit ReplayBackend(std::vector<CassetteEntry> entries);

    std::string name() const override { return "replay"; }
    AssistantTurn complete(const ChatRequest& req) override;
    std::size_t size() const { return entries_; }
    std::size_t misses() const;

private:
    mutable std::mutex mu_;
    std::size_t misses_ = 0;
    std::map<std::string, std::vector<AssistantTurn>> by_key_;
    std::map<std::string, std::size_t> cursor_;
    std::size_t entries_ = 0;
};

// Wraps another backend and appends every exchange to a cassette file.
// With store_requests=false only the key and response are written, which
// keeps long protocol cassettes small.
class RecordingBackend final : public Backend {
public:
    RecordingBackend(std::shared_ptr<Backend> inner, std::filesystem::path cassette, bool truncate = false,
                     bool store_requests = true);

    std::string name() const override { return inner_->name() + "+record"; }
    AssistantTurn complete(const ChatRequest& req) override;

private:
    std::shared_ptr<Backend> inner_;
    std::filesystem::path path_;
    bool store_requests_;
    std::mutex mu_;
};

struct LiveEndpoint {
    std::string base_url;  // e.g. https://api.openai.com/v1
    std::string api_key;
    std::string embedding_model = "text-embedding-3-small";
    int timeout_s = 120;

    // TACIT_LLM_ENDPOINT, TACIT_LLM_API_KEY, TACIT_EMBEDDING_MODEL.
    static LiveEndpoint from_env();
};

// Chat-completions style HTTP backend.
class LiveBackend final : public Backend {
public:
    explicit LiveBackend(LiveEndpoint endpoint);

    std::string name() const override { return "live"; }
    AssistantTurn complete(const ChatRequest& req) override;

    static nlohmann::json wire_request(const ChatRequest& req);
    static AssistantTurn parse_wire_response(const nlohmann::json& body);

private:
    LiveEndpoint ep_;
};

// Remote embeddings endpoint, unit-normalized on return.
class RemoteEmbedder final : public Embedder {
public:
    RemoteEmbedder(LiveEndpoint endpoint, std::size_t dim, RetryPolicy retry = {});

    std::string id() const override { return "remote-" + ep_.embedding_model; }
    std::size_t dim() const override { return dim_; }
    Embedding embed(const std::string& text) override;

private:
    LiveEndpoint ep_;
    std::size_t dim_;
    RetryPolicy retry_;
};

// "live" (endpoint from the environment), "replay" (needs a cassette) or
// "scripted" (needs a JSONL file of assistant turns). Misconfiguration
// throws a Backend-kind error before any call is made.
std::shared_ptr<Backend> make_backend(const std::string& kind, const std::optional<std::filesystem::path>& cassette,
                                      const std::optional<std::filesystem::path>& script);

// chars/4, rounded up; tool arguments and names count as text.
std::size_t estimate_tokens(const std::vector<ChatTurn>& turns);

class Gateway {
public:
    explicit Gateway(std::shared_ptr<Backend> backend) : backend_(std::move(backend)) {}

    // One assistant turn carrying text or at most one tool call. A response
    // with several calls or an unknown tool is retried once with a
    // corrective system note; a second violation throws ToolProtocolError.
    AssistantTurn chat(const std::vector<ChatTurn>& turns, const std::vector<ToolSpec>& tools,
                       const ModelConfig& config);

    std::size_t count_context(const std::vector<ChatTurn>& turns) const { return estimate_tokens(turns); }

    std::uint64_t calls() const { return calls_.load(); }
    Backend& backend() { return *backend_; }

private:
    std::shared_ptr<Backend> backend_;
    std::atomic<std::uint64_t> calls_{0};
};

inline constexpr const char* kOneToolCallNote =
    "Your previous response contained more than one tool call or an unknown tool. Do these actions one at a "
    "time: respond with exactly one tool call from the listed tools, or a plain message.";

}  // namespace tacit
