#include "tacit/episode.hpp"

#include <fstream>

#include "tacit/error.hpp"
#include "tacit/hpa.hpp"

namespace tacit {

using nlohmann::json;

json to_json(const EpisodeSpec& s) {
    json mem = json::array();
    for (const auto& m : s.memory) mem.push_back({{"kind", to_string(m.kind)}, {"key", m.key}, {"body", m.body}});
    return {{"name", s.name},       {"task_id", s.task_id},
            {"agent", s.agent},     {"mode", s.online ? "online" : "offline"},
            {"learn", s.learn},     {"memory", mem},
            {"run_id", s.run_id}};
}

EpisodeSpec episode_spec_from_json(const json& j) {
    EpisodeSpec s;
    s.name = j.value("name", "");
    s.task_id = j.at("task_id").get<std::string>();
    s.agent = j.value("agent", "NP-0");
    auto mode = j.value("mode", "offline");
    if (mode != "offline" && mode != "online") throw data_error("episode mode must be offline or online, got " + mode);
    s.online = mode == "online";
    s.learn = j.value("learn", false);
    s.run_id = j.value("run_id", "episode");
    for (const auto& m : j.value("memory", json::array())) {
        auto kind = memory_kind_from_string(m.at("kind").get<std::string>());
        if (!kind) throw data_error("unknown memory kind in episode: " + m.at("kind").get<std::string>());
        s.memory.push_back({*kind, m.at("key").get<std::string>(), m.at("body").get<std::string>()});
    }
    return s;
}

EpisodeSpec read_episode_spec(const std::filesystem::path& cassette) {
    std::ifstream in(cassette);
    if (!in) throw not_found("cannot open cassette " + cassette.string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw data_error(cassette.string() + ": bad JSON line: " + e.what());
        }
        if (j.is_object() && j.contains("meta")) return episode_spec_from_json(j["meta"]);
        break;
    }
    throw data_error(cassette.string() + " has no episode header line");
}

void write_episode_header(const std::filesystem::path& cassette, const EpisodeSpec& spec) {
    if (cassette.has_parent_path()) std::filesystem::create_directories(cassette.parent_path());
    std::ofstream out(cassette, std::ios::trunc);
    if (!out) throw data_error("cannot write " + cassette.string());
    out << json{{"meta", to_json(spec)}}.dump() << "\n";
}

EpisodeResult run_episode(const Corpus& corpus, const EpisodeSpec& spec, Gateway& gateway,
                          std::shared_ptr<Embedder> embedder) {
    if (!embedder) embedder = std::make_shared<HashEmbedder>();
    const auto& task = corpus.task(spec.task_id);
    const auto& catalog = corpus.catalog(task.db_id);
    auto config = AgentConfig::from_label(spec.agent);
    MemoryStoreSet store(task.db_id, config.memory_level, embedder);
    for (const auto& m : spec.memory) {
        if (store.insert(m.kind, m.key, m.body, {"seed", "", 0}) != InsertResult::Inserted) {
            throw data_error("episode seed memory rejected at level " + std::to_string(config.memory_level) + ": " + m.key);
        }
    }

    EpisodeResult r;
    AgentContext ctx{catalog, store, gateway};
    if (spec.online) {
        HumanProxyAgent hpa(corpus, gateway, config.model, config.exec);
        r.trajectory = run_online(task, config, ctx, hpa);
        if (spec.learn && r.trajectory.outcome == Outcome::Solved) {
            r.learned = learn_from(r.trajectory, task, config, catalog, gateway, store, {spec.run_id, task.task_id, 1});
        }
    } else {
        r.trajectory = run_offline(task, config, ctx, Phase::Final);
    }
    if (r.trajectory.final_sql) r.result = score(catalog, task, *r.trajectory.final_sql, config.exec);
    r.memory = store.contents();
    return r;
}

std::string episode_summary(const EpisodeResult& r) {
    const auto& t = r.trajectory;
    std::string s = "task " + t.task_id + " (" + t.db_id + ", " + t.label + ", " + to_string(t.phase) + ")\n";
    s += "outcome: " + to_string(t.outcome) + "\n";
    s += "feedback rounds: " + std::to_string(t.feedback_rounds) + "\n";
    s += "events: " + std::to_string(t.events.size());
    if (!t.distill_events.empty()) s += " (+" + std::to_string(t.distill_events.size()) + " distill)";
    s += "\n";
    if (!t.cause.empty()) s += "cause: " + t.cause + "\n";
    if (t.final_sql) s += "final sql: " + *t.final_sql + "\n";
    if (r.result) {
        s += "z: " + (r.result->z ? std::to_string(*r.result->z) : std::string("-")) + "\n";
        if (r.result->outcome.ok()) s += "rows: " + format_rows(r.result->outcome.rows, 10) + "\n";
        else s += to_string(r.result->outcome.status) + ": " + r.result->outcome.error_text + "\n";
    }
    if (!r.learned.saved.empty()) s += "saved memories: " + std::to_string(r.learned.saved.size()) + "\n";
    if (!t.flags.empty()) {
        s += "flags:";
        for (const auto& f : t.flags) s += " " + f;
        s += "\n";
    }
    return s;
}

}  // namespace tacit
