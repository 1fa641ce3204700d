#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "tacit/embedding.hpp"

namespace tacit {

enum class MemoryKind { SimilarQuestion, SimilarSubtask, DatabaseFact };

inline constexpr std::array<MemoryKind, 3> kAllMemoryKinds = {
    MemoryKind::SimilarQuestion, MemoryKind::SimilarSubtask, MemoryKind::DatabaseFact};

// Wire names: "similar_question", "similar_subtask", "database_fact".
std::string to_string(MemoryKind kind);
std::optional<MemoryKind> memory_kind_from_string(const std::string& s);

// Whether `kind` may hold records at memory level `level` (0..3).
bool kind_enabled(int level, MemoryKind kind);
std::vector<MemoryKind> enabled_kinds(int level);

struct Provenance {
    std::string run_id;
    std::string task_id;
    // Logical timestamp supplied by the caller (online task ordinal in
    // harness runs) so that store contents are reproducible.
    std::int64_t created_at = 0;

    bool operator==(const Provenance&) const = default;
};

struct MemoryRecord {
    std::string key;
    std::string body;
    Embedding embedding;
    MemoryKind kind = MemoryKind::SimilarQuestion;
    std::string db_id;
    Provenance provenance;

    bool operator==(const MemoryRecord&) const = default;
};

struct RetrievalHit {
    MemoryRecord record;
    double distance = 0.0;
};

enum class InsertResult { Inserted, DuplicateKeyIgnored, KindDisabledAtLevel };
std::string to_string(InsertResult r);

inline constexpr int kDefaultRetrievalK = 3;
inline constexpr double kDefaultMaxDistance = 0.28;

// 1 - cosine similarity of two unit vectors, clamped to [0, 2].
double retrieval_distance(const Embedding& query, const Embedding& record);

// Record lists for the three kinds of one database; plain data.
struct StoreContents {
    std::string db_id;
    int level = 0;
    std::map<MemoryKind, std::vector<MemoryRecord>> stores;

    bool operator==(const StoreContents&) const = default;
};

// The per-database memory M_t. One writer at a time; concurrent readers.
class MemoryStoreSet {
public:
    MemoryStoreSet(std::string db_id, int level, std::shared_ptr<Embedder> embedder);
    MemoryStoreSet(StoreContents contents, std::shared_ptr<Embedder> embedder);

    MemoryStoreSet(const MemoryStoreSet&) = delete;
    MemoryStoreSet& operator=(const MemoryStoreSet&) = delete;

    const std::string& db_id() const { return db_id_; }
    int level() const { return level_; }
    std::shared_ptr<Embedder> embedder() const { return embedder_; }

    InsertResult insert(MemoryKind kind, const std::string& key, const std::string& body,
                        const Provenance& provenance);

    // Hits with distance <= max_distance, nearest first, at most k; ties keep
    // insertion order.
    std::vector<RetrievalHit> retrieve(MemoryKind kind, const std::string& query_text, int k = kDefaultRetrievalK,
                                       double max_distance = kDefaultMaxDistance) const;
    std::vector<RetrievalHit> retrieve_embedding(MemoryKind kind, const Embedding& query, int k,
                                                 double max_distance) const;

    std::size_t size(MemoryKind kind) const;
    std::size_t total_size() const;
    std::vector<MemoryRecord> records(MemoryKind kind) const;
    bool contains_key(MemoryKind kind, const std::string& key) const;

    // Successful inserts since construction; used to assert phase isolation.
    std::uint64_t write_count() const;

    StoreContents contents() const;

    // Appends every future insert to <dir>/<kind>.jsonl. Existing files are
    // rewritten from the current contents first.
    void attach_persistence(const std::filesystem::path& dir);

    static MemoryStoreSet load(const std::filesystem::path& dir, const std::string& db_id, int level,
                               std::shared_ptr<Embedder> embedder);

private:
    void append_line(const MemoryRecord& record) const;

    std::string db_id_;
    int level_;
    std::shared_ptr<Embedder> embedder_;
    mutable std::shared_mutex mu_;
    std::map<MemoryKind, std::vector<MemoryRecord>> stores_;
    std::map<MemoryKind, std::unordered_set<std::string>> index_;
    std::uint64_t writes_ = 0;
    std::optional<std::filesystem::path> persist_dir_;
};

nlohmann::json to_json(const MemoryRecord& r);
MemoryRecord record_from_json(const nlohmann::json& j, MemoryKind kind, const std::string& db_id);

// Writes one JSONL file per kind (always all three) into `dir`.
void write_store_files(const StoreContents& contents, const std::filesystem::path& dir);
StoreContents read_store_files(const std::filesystem::path& dir, const std::string& db_id, int level);

struct SnapshotInfo {
    std::string id;
    std::string label;
    std::size_t online_count = 0;
    std::map<MemoryKind, std::size_t> sizes;
};

// Immutable deep copies of store sets, optionally mirrored on disk as
// <root>/<run_id>/snapshots/<db_id>/t<count>/ with a snapshots.json manifest.
class SnapshotRegistry {
public:
    explicit SnapshotRegistry(std::string run_id, std::optional<std::filesystem::path> root = std::nullopt);

    std::string snapshot(const MemoryStoreSet& set, const std::string& label, std::size_t online_count);
    StoreContents contents(const std::string& snapshot_id) const;
    std::unique_ptr<MemoryStoreSet> restore(const std::string& snapshot_id, std::shared_ptr<Embedder> embedder) const;
    std::optional<std::string> find_by_count(const std::string& db_id, std::size_t online_count) const;

    std::vector<SnapshotInfo> list() const;
    nlohmann::json manifest() const;

private:
    std::string run_id_;
    std::optional<std::filesystem::path> root_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<const StoreContents>> snapshots_;
    std::vector<SnapshotInfo> order_;
};

}  // namespace tacit
