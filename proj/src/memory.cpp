#include "tacit/memory.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>

#include "tacit/error.hpp"

namespace tacit {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(MemoryKind kind) {
    switch (kind) {
        case MemoryKind::SimilarQuestion: return "similar_question";
        case MemoryKind::SimilarSubtask: return "similar_subtask";
        case MemoryKind::DatabaseFact: return "database_fact";
    }
    return "unknown";
}

std::optional<MemoryKind> memory_kind_from_string(const std::string& s) {
    for (auto k : kAllMemoryKinds) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

bool kind_enabled(int level, MemoryKind kind) {
    switch (kind) {
        case MemoryKind::SimilarQuestion: return level >= 0;
        case MemoryKind::SimilarSubtask: return level >= 2;
        case MemoryKind::DatabaseFact: return level >= 3;
    }
    return false;
}

std::vector<MemoryKind> enabled_kinds(int level) {
    std::vector<MemoryKind> out;
    for (auto k : kAllMemoryKinds) {
        if (kind_enabled(level, k)) out.push_back(k);
    }
    return out;
}

std::string to_string(InsertResult r) {
    switch (r) {
        case InsertResult::Inserted: return "Inserted";
        case InsertResult::DuplicateKeyIgnored: return "DuplicateKeyIgnored";
        case InsertResult::KindDisabledAtLevel: return "KindDisabledAtLevel";
    }
    return "unknown";
}

double retrieval_distance(const Embedding& query, const Embedding& record) {
    double d = 1.0 - dot(query, record);
    return std::clamp(d, 0.0, 2.0);
}

MemoryStoreSet::MemoryStoreSet(std::string db_id, int level, std::shared_ptr<Embedder> embedder)
    : db_id_(std::move(db_id)), level_(level), embedder_(std::move(embedder)) {
    if (level_ < 0 || level_ > 3) throw usage_error("memory level must be in 0..3");
    for (auto k : kAllMemoryKinds) stores_[k];
}

MemoryStoreSet::MemoryStoreSet(StoreContents contents, std::shared_ptr<Embedder> embedder)
    : MemoryStoreSet(contents.db_id, contents.level, std::move(embedder)) {
    for (auto& [kind, records] : contents.stores) {
        for (auto& r : records) index_[kind].insert(r.key);
        stores_[kind] = std::move(records);
    }
}

InsertResult MemoryStoreSet::insert(MemoryKind kind, const std::string& key, const std::string& body,
                                    const Provenance& provenance) {
    if (!kind_enabled(level_, kind)) return InsertResult::KindDisabledAtLevel;
    {
        std::shared_lock lock(mu_);
        if (index_[kind].count(key)) return InsertResult::DuplicateKeyIgnored;
    }
    MemoryRecord record{key, body, embedder_->embed(key), kind, db_id_, provenance};
    std::unique_lock lock(mu_);
    if (!index_[kind].insert(key).second) return InsertResult::DuplicateKeyIgnored;
    stores_[kind].push_back(record);
    ++writes_;
    if (persist_dir_) append_line(record);
    return InsertResult::Inserted;
}

std::vector<RetrievalHit> MemoryStoreSet::retrieve(MemoryKind kind, const std::string& query_text, int k,
                                                   double max_distance) const {
    if (k < 1) throw usage_error("retrieve: k must be >= 1");
    if (!(max_distance >= 0.0 && max_distance <= 2.0)) throw usage_error("retrieve: max_distance must be in [0, 2]");
    {
        std::shared_lock lock(mu_);
        auto it = stores_.find(kind);
        if (it == stores_.end() || it->second.empty()) return {};
    }
    return retrieve_embedding(kind, embedder_->embed(query_text), k, max_distance);
}

std::vector<RetrievalHit> MemoryStoreSet::retrieve_embedding(MemoryKind kind, const Embedding& query, int k,
                                                             double max_distance) const {
    if (k < 1) throw usage_error("retrieve: k must be >= 1");
    if (!(max_distance >= 0.0 && max_distance <= 2.0)) throw usage_error("retrieve: max_distance must be in [0, 2]");
    std::shared_lock lock(mu_);
    const auto& records = stores_.at(kind);
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        double d = retrieval_distance(query, records[i].embedding);
        if (d <= max_distance) scored.emplace_back(d, i);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    if (scored.size() > static_cast<std::size_t>(k)) scored.resize(static_cast<std::size_t>(k));
    std::vector<RetrievalHit> hits;
    hits.reserve(scored.size());
    for (const auto& [d, i] : scored) hits.push_back({records[i], d});
    return hits;
}

std::size_t MemoryStoreSet::size(MemoryKind kind) const {
    std::shared_lock lock(mu_);
    return stores_.at(kind).size();
}

std::size_t MemoryStoreSet::total_size() const {
    std::shared_lock lock(mu_);
    std::size_t n = 0;
    for (const auto& [_, v] : stores_) n += v.size();
    return n;
}

std::vector<MemoryRecord> MemoryStoreSet::records(MemoryKind kind) const {
    std::shared_lock lock(mu_);
    return stores_.at(kind);
}

bool MemoryStoreSet::contains_key(MemoryKind kind, const std::string& key) const {
    std::shared_lock lock(mu_);
    auto it = index_.find(kind);
    return it != index_.end() && it->second.count(key) > 0;
}

std::uint64_t MemoryStoreSet::write_count() const {
    std::shared_lock lock(mu_);
    return writes_;
}

StoreContents MemoryStoreSet::contents() const {
    std::shared_lock lock(mu_);
    return {db_id_, level_, stores_};
}

namespace {

fs::path store_file(const fs::path& dir, const std::string& db_id, MemoryKind kind) {
    return dir / (db_id + "." + to_string(kind) + ".jsonl");
}

}  // namespace

void MemoryStoreSet::attach_persistence(const fs::path& dir) {
    fs::create_directories(dir);
    write_store_files(contents(), dir);
    std::unique_lock lock(mu_);
    persist_dir_ = dir;
}

void MemoryStoreSet::append_line(const MemoryRecord& record) const {
    std::ofstream out(store_file(*persist_dir_, db_id_, record.kind), std::ios::app | std::ios::binary);
    if (!out) throw data_error("cannot append to memory store in " + persist_dir_->string());
    out << to_json(record).dump() << "\n";
}

MemoryStoreSet MemoryStoreSet::load(const fs::path& dir, const std::string& db_id, int level,
                                    std::shared_ptr<Embedder> embedder) {
    return MemoryStoreSet(read_store_files(dir, db_id, level), std::move(embedder));
}

json to_json(const MemoryRecord& r) {
    return {{"key", r.key},
            {"body", r.body},
            {"embedding", r.embedding},
            {"provenance", {{"run_id", r.provenance.run_id}, {"task_id", r.provenance.task_id}}},
            {"created_at", r.provenance.created_at}};
}

MemoryRecord record_from_json(const json& j, MemoryKind kind, const std::string& db_id) {
    MemoryRecord r;
    r.key = j.at("key").get<std::string>();
    r.body = j.at("body").get<std::string>();
    r.embedding = j.at("embedding").get<Embedding>();
    r.kind = kind;
    r.db_id = db_id;
    r.provenance.run_id = j.at("provenance").value("run_id", "");
    r.provenance.task_id = j.at("provenance").value("task_id", "");
    r.provenance.created_at = j.value("created_at", std::int64_t{0});
    return r;
}

void write_store_files(const StoreContents& contents, const fs::path& dir) {
    fs::create_directories(dir);
    for (auto kind : kAllMemoryKinds) {
        std::ofstream out(store_file(dir, contents.db_id, kind), std::ios::trunc | std::ios::binary);
        if (!out) throw data_error("cannot write memory store in " + dir.string());
        if (auto it = contents.stores.find(kind); it != contents.stores.end()) {
            for (const auto& r : it->second) out << to_json(r).dump() << "\n";
        }
    }
}

StoreContents read_store_files(const fs::path& dir, const std::string& db_id, int level) {
    StoreContents c{db_id, level, {}};
    for (auto kind : kAllMemoryKinds) {
        auto& records = c.stores[kind];
        std::ifstream in(store_file(dir, db_id, kind), std::ios::binary);
        if (!in) continue;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                records.push_back(record_from_json(json::parse(line), kind, db_id));
            } catch (const json::exception& e) {
                throw data_error(store_file(dir, db_id, kind).string() + ":" + std::to_string(lineno) + ": " +
                                 e.what());
            }
        }
    }
    return c;
}

SnapshotRegistry::SnapshotRegistry(std::string run_id, std::optional<fs::path> root)
    : run_id_(std::move(run_id)), root_(std::move(root)) {}

std::string SnapshotRegistry::snapshot(const MemoryStoreSet& set, const std::string& label, std::size_t online_count) {
    auto data = std::make_shared<const StoreContents>(set.contents());
    SnapshotInfo info;
    info.id = set.db_id() + "@t" + std::to_string(online_count);
    info.label = label;
    info.online_count = online_count;
    for (const auto& [k, v] : data->stores) info.sizes[k] = v.size();

    std::lock_guard lock(mu_);
    if (root_) {
        auto dir = *root_ / run_id_ / "snapshots" / set.db_id() / ("t" + std::to_string(online_count));
        write_store_files(*data, dir);
    }
    if (snapshots_.count(info.id)) {
        std::erase_if(order_, [&](const SnapshotInfo& s) { return s.id == info.id; });
    }
    snapshots_[info.id] = std::move(data);
    order_.push_back(info);
    if (root_) {
        std::ofstream out(*root_ / run_id_ / "snapshots.json", std::ios::trunc);
        out << [&] {
            json arr = json::array();
            for (const auto& s : order_) {
                json sizes = json::object();
                for (const auto& [k, n] : s.sizes) sizes[to_string(k)] = n;
                arr.push_back({{"id", s.id}, {"label", s.label}, {"online_count", s.online_count}, {"sizes", sizes}});
            }
            return json{{"run_id", run_id_}, {"snapshots", arr}};
        }().dump(2) << "\n";
    }
    return info.id;
}

StoreContents SnapshotRegistry::contents(const std::string& snapshot_id) const {
    std::lock_guard lock(mu_);
    auto it = snapshots_.find(snapshot_id);
    if (it == snapshots_.end()) throw not_found("unknown snapshot id: " + snapshot_id);
    return *it->second;
}

std::unique_ptr<MemoryStoreSet> SnapshotRegistry::restore(const std::string& snapshot_id,
                                                          std::shared_ptr<Embedder> embedder) const {
    return std::make_unique<MemoryStoreSet>(contents(snapshot_id), std::move(embedder));
}

std::optional<std::string> SnapshotRegistry::find_by_count(const std::string& db_id, std::size_t online_count) const {
    auto id = db_id + "@t" + std::to_string(online_count);
    std::lock_guard lock(mu_);
    if (snapshots_.count(id)) return id;
    return std::nullopt;
}

std::vector<SnapshotInfo> SnapshotRegistry::list() const {
    std::lock_guard lock(mu_);
    return order_;
}

json SnapshotRegistry::manifest() const {
    json arr = json::array();
    for (const auto& s : list()) {
        json sizes = json::object();
        for (const auto& [k, n] : s.sizes) sizes[to_string(k)] = n;
        arr.push_back({{"id", s.id}, {"label", s.label}, {"online_count", s.online_count}, {"sizes", sizes}});
    }
    return {{"run_id", run_id_}, {"snapshots", arr}};
}

}  // namespace tacit
