#include "tacit/llm.hpp"

#include <array>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>

#include "httplib.h"

#include "tacit/text.hpp"

namespace tacit {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<Role, const char*>, 6> kRoleNames = {{
    {Role::System, "system"},
    {Role::User, "user"},
    {Role::Assistant, "assistant"},
    {Role::SelfThought, "self_thought"},
    {Role::ToolCall, "tool_call"},
    {Role::ToolResult, "tool_result"},
}};

}  // namespace

std::string to_string(Role r) {
    for (const auto& [role, name] : kRoleNames) {
        if (role == r) return name;
    }
    return "unknown";
}

std::optional<Role> role_from_string(const std::string& s) {
    for (const auto& [role, name] : kRoleNames) {
        if (s == name) return role;
    }
    return std::nullopt;
}

json to_json(const ChatTurn& t) {
    json j{{"role", to_string(t.role)}, {"content", t.content}};
    if (!t.author.empty()) j["author"] = t.author;
    if (!t.recipient.empty()) j["recipient"] = t.recipient;
    if (t.tool) {
        j["tool"] = {{"name", t.tool->name}, {"arguments", t.tool->arguments}, {"call_id", t.tool->call_id}};
    }
    return j;
}

ChatTurn chat_turn_from_json(const json& j) {
    ChatTurn t;
    auto role = role_from_string(j.at("role").get<std::string>());
    if (!role) throw data_error("unknown chat role: " + j.at("role").get<std::string>());
    t.role = *role;
    t.content = j.value("content", "");
    t.author = j.value("author", "");
    t.recipient = j.value("recipient", "");
    if (j.contains("tool")) {
        const auto& tj = j["tool"];
        t.tool = ToolInvocation{tj.at("name").get<std::string>(), tj.value("arguments", json::object()),
                                tj.value("call_id", "")};
    }
    return t;
}

json to_json(const AssistantTurn& t) {
    json calls = json::array();
    for (const auto& c : t.tool_calls) calls.push_back({{"name", c.name}, {"arguments", c.arguments}});
    json j{{"content", t.content}, {"tool_calls", calls}};
    if (t.usage) j["usage"] = {{"prompt_tokens", t.usage->prompt_tokens}, {"completion_tokens", t.usage->completion_tokens}};
    return j;
}

AssistantTurn assistant_turn_from_json(const json& j) {
    AssistantTurn t;
    t.content = j.value("content", "");
    for (const auto& c : j.value("tool_calls", json::array())) {
        t.tool_calls.push_back({c.at("name").get<std::string>(), c.value("arguments", json::object()), ""});
    }
    if (j.contains("usage")) {
        t.usage = Usage{j["usage"].value("prompt_tokens", std::int64_t{0}), j["usage"].value("completion_tokens", std::int64_t{0})};
    }
    return t;
}

json canonical_request(const ChatRequest& req) {
    // nlohmann::json objects are std::map backed, so keys come out sorted.
    json turns = json::array();
    for (const auto& t : req.turns) {
        json j{{"role", to_string(t.role)}, {"content", t.content}};
        if (t.tool) j["tool"] = {{"name", t.tool->name}, {"arguments", t.tool->arguments}};
        if (!t.author.empty()) j["author"] = t.author;
        if (!t.recipient.empty()) j["recipient"] = t.recipient;
        turns.push_back(std::move(j));
    }
    json tools = json::array();
    for (const auto& s : req.tools) {
        tools.push_back({{"name", s.name}, {"description", s.description}, {"parameters", s.parameters}});
    }
    // Temperature is printed with fixed precision so 0 and 0.0 hash alike.
    char temp[32];
    std::snprintf(temp, sizeof temp, "%.4f", req.config.temperature);
    return {{"model", req.config.model_id}, {"temperature", temp}, {"turns", turns}, {"tools", tools}};
}

std::string request_key(const ChatRequest& req) {
    return text::hex64(text::fnv1a64(canonical_request(req).dump()));
}

// ---- scripted

AssistantTurn ScriptedBackend::complete(const ChatRequest& req) {
    Responder responder;
    {
        std::lock_guard lock(mu_);
        seen_.push_back(req);
        if (!queue_.empty()) {
            auto t = std::move(queue_.front());
            queue_.pop_front();
            return t;
        }
        responder = responder_;
    }
    if (!responder) throw ScriptExhausted();
    return responder(req);
}

void ScriptedBackend::push(AssistantTurn t) {
    std::lock_guard lock(mu_);
    queue_.push_back(std::move(t));
}

void ScriptedBackend::set_responder(Responder r) {
    std::lock_guard lock(mu_);
    responder_ = std::move(r);
}

std::size_t ScriptedBackend::remaining() const {
    std::lock_guard lock(mu_);
    return queue_.size();
}

std::vector<ChatRequest> ScriptedBackend::requests() const {
    std::lock_guard lock(mu_);
    return seen_;
}

// ---- replay

std::vector<CassetteEntry> read_cassette(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open cassette " + path.string());
    std::vector<CassetteEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            auto j = json::parse(line);
            if (j.contains("meta")) continue;  // header line
            out.push_back({j.at("key").get<std::string>(), j.value("request", json()),
                           assistant_turn_from_json(j.at("response"))});
        } catch (const json::exception& e) {
            throw data_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

ReplayBackend::ReplayBackend(const std::filesystem::path& cassette) : ReplayBackend(read_cassette(cassette)) {}

ReplayBackend::ReplayBackend(std::vector<CassetteEntry> entries) {
    for (auto& e : entries) by_key_[e.key].push_back(std::move(e.response));
    entries_ = entries.size();
}

AssistantTurn ReplayBackend::complete(const ChatRequest& req) {
    auto key = request_key(req);
    std::lock_guard lock(mu_);
    auto it = by_key_.find(key);
    if (it == by_key_.end()) {
        ++misses_;
        throw ReplayMiss(key);
    }
    auto& i = cursor_[key];
    const auto& v = it->second;
    auto t = v[std::min(i, v.size() - 1)];
    ++i;
    return t;
}

std::size_t ReplayBackend::misses() const {
    std::lock_guard lock(mu_);
    return misses_;
}

// ---- recording

RecordingBackend::RecordingBackend(std::shared_ptr<Backend> inner, std::filesystem::path cassette, bool truncate,
                                   bool store_requests)
    : inner_(std::move(inner)), path_(std::move(cassette)), store_requests_(store_requests) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, truncate ? std::ios::trunc : std::ios::app);
    if (!out) throw data_error("cannot open cassette for writing: " + path_.string());
}

AssistantTurn RecordingBackend::complete(const ChatRequest& req) {
    auto resp = inner_->complete(req);
    json line{{"key", request_key(req)}, {"response", to_json(resp)}};
    if (store_requests_) line["request"] = canonical_request(req);
    std::lock_guard lock(mu_);
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    out << line.dump() << "\n";
    return resp;
}

// ---- live

LiveEndpoint LiveEndpoint::from_env() {
    LiveEndpoint ep;
    if (const char* u = std::getenv("TACIT_LLM_ENDPOINT")) ep.base_url = u;
    if (const char* k = std::getenv("TACIT_LLM_API_KEY")) ep.api_key = k;
    if (const char* m = std::getenv("TACIT_EMBEDDING_MODEL")) ep.embedding_model = m;
    return ep;
}

namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string prefix;  // path without trailing slash
};

SplitUrl split_url(const std::string& url) {
    auto scheme = url.find("://");
    if (scheme == std::string::npos) throw usage_error("endpoint URL needs a scheme: " + url);
    auto slash = url.find('/', scheme + 3);
    SplitUrl s;
    s.origin = url.substr(0, slash);
    s.prefix = slash == std::string::npos ? "" : url.substr(slash);
    while (!s.prefix.empty() && s.prefix.back() == '/') s.prefix.pop_back();
    return s;
}

bool retryable(int status) { return status == 429 || status >= 500; }

json post_json(const LiveEndpoint& ep, const std::string& path, const json& body, const RetryPolicy& retry) {
    auto url = split_url(ep.base_url);
    httplib::Client cli(url.origin);
    cli.set_read_timeout(ep.timeout_s, 0);
    cli.set_connection_timeout(10, 0);
    httplib::Headers headers{{"Authorization", "Bearer " + ep.api_key}};
    std::string last_error;
    for (int attempt = 1; attempt <= std::max(1, retry.max_attempts); ++attempt) {
        auto res = cli.Post(url.prefix + path, headers, body.dump(), "application/json");
        if (res && res->status == 200) {
            try {
                return json::parse(res->body);
            } catch (const json::exception& e) {
                throw backend_error(std::string("malformed response body: ") + e.what());
            }
        }
        if (res) {
            last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 300);
            if (!retryable(res->status)) break;
        } else {
            last_error = "transport error: " + httplib::to_string(res.error());
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(retry.backoff_ms * (1 << (attempt - 1))));
    }
    throw backend_error("remote call failed: " + last_error);
}

}  // namespace

LiveBackend::LiveBackend(LiveEndpoint endpoint) : ep_(std::move(endpoint)) {
    if (ep_.base_url.empty()) throw usage_error("live backend needs TACIT_LLM_ENDPOINT");
    if (ep_.api_key.empty()) throw usage_error("live backend needs TACIT_LLM_API_KEY");
    split_url(ep_.base_url);
}

json LiveBackend::wire_request(const ChatRequest& req) {
    json messages = json::array();
    int call_no = 0;
    std::string last_call_id;
    for (const auto& t : req.turns) {
        switch (t.role) {
            case Role::System: messages.push_back({{"role", "system"}, {"content", t.content}}); break;
            case Role::User: messages.push_back({{"role", "user"}, {"content", t.content}}); break;
            case Role::Assistant: messages.push_back({{"role", "assistant"}, {"content", t.content}}); break;
            case Role::SelfThought:
                messages.push_back({{"role", "assistant"}, {"name", "thought"}, {"content", t.content}});
                break;
            case Role::ToolCall: {
                last_call_id = t.tool && !t.tool->call_id.empty() ? t.tool->call_id : "call_" + std::to_string(++call_no);
                json fn{{"name", t.tool ? t.tool->name : ""},
                        {"arguments", t.tool ? t.tool->arguments.dump() : "{}"}};
                messages.push_back({{"role", "assistant"},
                                    {"content", nullptr},
                                    {"tool_calls", json::array({{{"id", last_call_id}, {"type", "function"}, {"function", fn}}})}});
                break;
            }
            case Role::ToolResult: {
                auto id = t.tool && !t.tool->call_id.empty() ? t.tool->call_id : last_call_id;
                messages.push_back({{"role", "tool"}, {"tool_call_id", id}, {"content", t.content}});
                break;
            }
        }
    }
    json body{{"model", req.config.model_id}, {"temperature", req.config.temperature}, {"messages", messages}};
    if (!req.tools.empty()) {
        json tools = json::array();
        for (const auto& s : req.tools) {
            tools.push_back({{"type", "function"},
                             {"function", {{"name", s.name}, {"description", s.description}, {"parameters", s.parameters}}}});
        }
        body["tools"] = tools;
        body["parallel_tool_calls"] = false;
    }
    return body;
}

AssistantTurn LiveBackend::parse_wire_response(const json& body) {
    AssistantTurn t;
    const auto& choices = body.at("choices");
    if (choices.empty()) throw backend_error("response has no choices");
    const auto& msg = choices[0].at("message");
    if (msg.contains("content") && msg["content"].is_string()) t.content = msg["content"].get<std::string>();
    if (msg.contains("tool_calls") && msg["tool_calls"].is_array()) {
        for (const auto& c : msg["tool_calls"]) {
            ToolInvocation inv;
            inv.name = c.at("function").at("name").get<std::string>();
            auto args = c.at("function").value("arguments", "{}");
            try {
                inv.arguments = json::parse(args.empty() ? "{}" : args);
            } catch (const json::exception&) {
                inv.arguments = {{"_raw", args}};
            }
            inv.call_id = c.value("id", "");
            t.tool_calls.push_back(std::move(inv));
        }
    }
    if (body.contains("usage")) {
        t.usage = Usage{body["usage"].value("prompt_tokens", std::int64_t{0}),
                        body["usage"].value("completion_tokens", std::int64_t{0})};
    }
    return t;
}

AssistantTurn LiveBackend::complete(const ChatRequest& req) {
    return parse_wire_response(post_json(ep_, "/chat/completions", wire_request(req), req.config.retry));
}

RemoteEmbedder::RemoteEmbedder(LiveEndpoint endpoint, std::size_t dim, RetryPolicy retry)
    : ep_(std::move(endpoint)), dim_(dim), retry_(retry) {}

Embedding RemoteEmbedder::embed(const std::string& text) {
    if (text.empty()) throw usage_error("cannot embed empty text");
    auto body = post_json(ep_, "/embeddings", {{"model", ep_.embedding_model}, {"input", text}}, retry_);
    auto v = body.at("data").at(0).at("embedding").get<Embedding>();
    if (v.size() != dim_) {
        throw backend_error("embedding dimension " + std::to_string(v.size()) + " != configured " + std::to_string(dim_));
    }
    normalize(v);
    return v;
}

// ---- gateway

std::size_t estimate_tokens(const std::vector<ChatTurn>& turns) {
    std::size_t chars = 0;
    for (const auto& t : turns) {
        chars += t.content.size();
        if (t.tool) chars += t.tool->name.size() + t.tool->arguments.dump().size();
    }
    return (chars + 3) / 4;
}

namespace {

bool valid_turn(const AssistantTurn& t, const std::vector<ToolSpec>& tools) {
    if (t.tool_calls.size() > 1) return false;
    if (t.tool_calls.size() == 1) {
        const auto& name = t.tool_calls[0].name;
        bool known = false;
        for (const auto& s : tools) known = known || s.name == name;
        return known;
    }
    return true;
}

}  // namespace

AssistantTurn Gateway::chat(const std::vector<ChatTurn>& turns, const std::vector<ToolSpec>& tools,
                            const ModelConfig& config) {
    if (turns.empty()) throw usage_error("chat needs at least one turn");
    if (config.max_context_tokens == 0) throw usage_error("max_context_tokens must be > 0");
    ChatRequest req{turns, tools, config};
    auto check = [&](const ChatRequest& r) {
        auto est = estimate_tokens(r.turns);
        if (est > r.config.max_context_tokens) throw ContextExceeded(est, r.config.max_context_tokens);
    };
    check(req);
    ++calls_;
    auto resp = backend_->complete(req);
    if (valid_turn(resp, tools)) return resp;

    req.turns.push_back({Role::System, kOneToolCallNote, std::nullopt, "system", ""});
    check(req);
    ++calls_;
    resp = backend_->complete(req);
    if (valid_turn(resp, tools)) return resp;
    throw ToolProtocolError("model violated the one-tool-call rule twice");
}

std::shared_ptr<Backend> make_backend(const std::string& kind, const std::optional<std::filesystem::path>& cassette,
                                      const std::optional<std::filesystem::path>& script) {
    if (kind == "replay") {
        if (!cassette) throw backend_error("replay backend needs --cassette");
        if (!std::filesystem::exists(*cassette)) throw backend_error("cassette not found: " + cassette->string());
        return std::make_shared<ReplayBackend>(*cassette);
    }
    if (kind == "scripted") {
        if (!script) throw backend_error("scripted backend needs --script (JSONL of assistant turns)");
        std::ifstream in(*script, std::ios::binary);
        if (!in) throw backend_error("cannot open script " + script->string());
        std::vector<AssistantTurn> turns;
        for (std::string line; std::getline(in, line);) {
            if (text::trim(line).empty()) continue;
            try {
                turns.push_back(assistant_turn_from_json(json::parse(line)));
            } catch (const json::exception& e) {
                throw backend_error(script->string() + ": " + e.what());
            }
        }
        return std::make_shared<ScriptedBackend>(std::move(turns));
    }
    if (kind == "live") {
        auto ep = LiveEndpoint::from_env();
        if (ep.base_url.empty()) throw backend_error("live backend needs TACIT_LLM_ENDPOINT");
        if (ep.api_key.empty()) throw backend_error("live backend needs TACIT_LLM_API_KEY");
        return std::make_shared<LiveBackend>(ep);
    }
    throw backend_error("unknown backend: " + kind + " (expected live, replay or scripted)");
}

}  // namespace tacit
