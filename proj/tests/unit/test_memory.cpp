#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "support.hpp"
#include "tacit/memory.hpp"

using namespace tacit;
using namespace testsupport;

namespace {

std::shared_ptr<Embedder> hash() { return std::make_shared<HashEmbedder>(); }

const Provenance kProv{"unit", "t", 1};

}  // namespace

TEST_CASE("hash embedder", "[memory]") {
    HashEmbedder e;
    auto a = e.embed("accounts opened in 1993");
    CHECK(a == e.embed("accounts opened in 1993"));
    CHECK(std::abs(l2_norm(a) - 1.0) < 1e-6);
    CHECK(std::abs(l2_norm(e.embed("x")) - 1.0) < 1e-6);

    // token-disjoint texts whose tokens land in distinct buckets are orthogonal
    auto ta = e.tokens("alpha beta");
    auto tb = e.tokens("gamma delta");
    std::set<std::size_t> ba, bb;
    for (const auto& t : ta) ba.insert(e.bucket(t));
    for (const auto& t : tb) bb.insert(e.bucket(t));
    bool disjoint = std::none_of(ba.begin(), ba.end(), [&](auto b) { return bb.count(b) > 0; });
    REQUIRE(disjoint);
    CHECK(cosine_similarity(e.embed("alpha beta"), e.embed("gamma delta")) == 0.0);
}

TEST_CASE("caching embedder", "[memory]") {
    auto inner = hash();
    CachingEmbedder c(inner);
    auto a = c.embed("same text");
    auto b = c.embed("same text");
    CHECK(a == b);
    CHECK(c.misses() == 1);
    c.embed("other");
    CHECK(c.cache_size() == 2);
}

TEST_CASE("insert", "[memory]") {
    MemoryStoreSet s("financial", 3, hash());
    CHECK(s.insert(MemoryKind::SimilarQuestion, "k", "SELECT 1", kProv) == InsertResult::Inserted);
    CHECK(s.size(MemoryKind::SimilarQuestion) == 1);
    CHECK(s.insert(MemoryKind::SimilarQuestion, "k", "SELECT 2", kProv) == InsertResult::DuplicateKeyIgnored);
    CHECK(s.size(MemoryKind::SimilarQuestion) == 1);
    CHECK(s.records(MemoryKind::SimilarQuestion)[0].body == "SELECT 1");
    // same key in another kind is fine
    CHECK(s.insert(MemoryKind::SimilarSubtask, "k", "x", kProv) == InsertResult::Inserted);
    CHECK(s.write_count() == 2);
}

TEST_CASE("level gating", "[memory][caps]") {
    for (int level = 0; level <= 3; ++level) {
        MemoryStoreSet s("financial", level, hash());
        for (auto k : kAllMemoryKinds) s.insert(k, "key", "body", kProv);
        INFO("level " << level);
        CHECK(s.size(MemoryKind::SimilarQuestion) == 1);
        CHECK(s.size(MemoryKind::SimilarSubtask) == (level >= 2 ? 1u : 0u));
        CHECK(s.size(MemoryKind::DatabaseFact) == (level >= 3 ? 1u : 0u));
    }
    MemoryStoreSet two("financial", 2, hash());
    CHECK(two.insert(MemoryKind::DatabaseFact, "f", "b", kProv) == InsertResult::KindDisabledAtLevel);
}

TEST_CASE("retrieve", "[memory]") {
    MemoryStoreSet s("financial", 0, hash());
    s.insert(MemoryKind::SimilarQuestion, "how many male clients live in prague", "A", kProv);

    auto exact = s.retrieve(MemoryKind::SimilarQuestion, "how many male clients live in prague");
    REQUIRE(exact.size() == 1);
    CHECK(exact[0].distance == Catch::Approx(0.0).margin(1e-12));

    CHECK(s.retrieve(MemoryKind::SimilarQuestion, "zebra xylophone quartz").empty());

    MemoryStoreSet five("financial", 0, hash());
    const std::string base = "clients accounts loans district card order trans";
    for (int i = 0; i < 5; ++i) {
        five.insert(MemoryKind::SimilarQuestion, base + " extra" + std::to_string(i), std::to_string(i), kProv);
    }
    auto hits = five.retrieve(MemoryKind::SimilarQuestion, base);
    REQUIRE(hits.size() == 3);
    for (std::size_t i = 1; i < hits.size(); ++i) CHECK(hits[i - 1].distance <= hits[i].distance);
    // with equal distances insertion order decides
    CHECK(hits[0].record.body == "0");
    CHECK(hits[1].record.body == "1");
    CHECK(hits[2].record.body == "2");
}

TEST_CASE("snapshots", "[memory]") {
    SECTION("restore drops later inserts") {
        SnapshotRegistry reg("unit");
        MemoryStoreSet s("financial", 0, hash());
        s.insert(MemoryKind::SimilarQuestion, "a", "1", kProv);
        auto id = reg.snapshot(s, "online", 1);
        s.insert(MemoryKind::SimilarQuestion, "b", "2", kProv);
        CHECK(reg.restore(id, hash())->total_size() == 1);
    }
    SECTION("empty set") {
        SnapshotRegistry reg("unit");
        MemoryStoreSet s("financial", 3, hash());
        CHECK(reg.restore(reg.snapshot(s, "online", 0), hash())->total_size() == 0);
    }
    SECTION("every ten of forty inserts") {
        TempDir dir("snap");
        SnapshotRegistry reg("unit", dir.path());
        MemoryStoreSet s("financial", 0, hash());
        for (int i = 1; i <= 40; ++i) {
            s.insert(MemoryKind::SimilarQuestion, "question " + std::to_string(i), "SELECT " + std::to_string(i), kProv);
            if (i % 10 == 0) reg.snapshot(s, "online", static_cast<std::size_t>(i));
        }
        std::vector<std::size_t> sizes;
        for (const auto& info : reg.list()) sizes.push_back(info.sizes.at(MemoryKind::SimilarQuestion));
        CHECK(sizes == std::vector<std::size_t>{10, 20, 30, 40});
        CHECK(fs::exists(dir / "unit/snapshots/financial/t20/financial.similar_question.jsonl"));
        CHECK(reg.find_by_count("financial", 30).has_value());
        CHECK_FALSE(reg.find_by_count("financial", 31).has_value());
        auto manifest = json::parse(slurp(dir / "unit/snapshots.json"));
        CHECK(manifest == reg.manifest());
    }
}

TEST_CASE("persistence round trip", "[memory]") {
    TempDir dir("persist");
    {
        MemoryStoreSet s("financial", 3, hash());
        s.insert(MemoryKind::SimilarQuestion, "q", "SELECT 1", kProv);
        s.attach_persistence(dir.path());
        s.insert(MemoryKind::SimilarSubtask, "sub", "SELECT 2", kProv);
        s.insert(MemoryKind::DatabaseFact, "fact", "gender is 'M' or 'F'", {"unit", "t2", 2});
    }
    auto back = MemoryStoreSet::load(dir.path(), "financial", 3, hash());
    CHECK(back.total_size() == 3);
    CHECK(back.records(MemoryKind::DatabaseFact)[0].provenance == Provenance{"unit", "t2", 2});
    CHECK(back.contains_key(MemoryKind::SimilarQuestion, "q"));

    auto contents = back.contents();
    TempDir other("persist");
    write_store_files(contents, other.path());
    CHECK(read_store_files(other.path(), "financial", 3) == contents);
}
