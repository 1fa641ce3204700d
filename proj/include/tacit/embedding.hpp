#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tacit {

using Embedding = std::vector<double>;

class Embedder {
public:
    virtual ~Embedder() = default;
    // Stable identifier of the backend and model; part of the cache key.
    virtual std::string id() const = 0;
    virtual std::size_t dim() const = 0;
    // Returns a unit-length vector. `text` must be non-empty.
    virtual Embedding embed(const std::string& text) = 0;
};

// Deterministic test embedder: lower-cased alphanumeric tokens hashed into
// `dim` buckets with FNV-1a, term-count weighted, L2-normalized.
class HashEmbedder final : public Embedder {
public:
    explicit HashEmbedder(std::size_t dim = 4096) : dim_(dim) {}

    std::string id() const override { return "hash-bow-" + std::to_string(dim_); }
    std::size_t dim() const override { return dim_; }
    Embedding embed(const std::string& text) override;

    std::vector<std::string> tokens(const std::string& text) const;
    std::size_t bucket(const std::string& token) const;

private:
    std::size_t dim_;
};

// Memoizes another embedder by (backend id, text hash).
class CachingEmbedder final : public Embedder {
public:
    explicit CachingEmbedder(std::shared_ptr<Embedder> inner) : inner_(std::move(inner)) {}

    std::string id() const override { return inner_->id(); }
    std::size_t dim() const override { return inner_->dim(); }
    Embedding embed(const std::string& text) override;

    std::size_t cache_size() const;
    std::size_t misses() const;

private:
    std::shared_ptr<Embedder> inner_;
    mutable std::mutex mu_;
    std::map<std::pair<std::string, std::uint64_t>, std::vector<std::pair<std::string, Embedding>>> cache_;
    std::size_t misses_ = 0;
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
void normalize(Embedding& v);
double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace tacit
