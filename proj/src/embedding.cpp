#include "tacit/embedding.hpp"

#include <cctype>
#include <cmath>

#include "tacit/error.hpp"
#include "tacit/text.hpp"

namespace tacit {

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw usage_error("embedding dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

void normalize(Embedding& v) {
    double n = l2_norm(v);
    if (n == 0.0) return;
    for (auto& x : v) x /= n;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    double na = l2_norm(a);
    double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

std::vector<std::string> HashEmbedder::tokens(const std::string& text) const {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::size_t HashEmbedder::bucket(const std::string& token) const {
    return static_cast<std::size_t>(text::fnv1a64(token) % dim_);
}

Embedding HashEmbedder::embed(const std::string& text) {
    if (text.empty()) throw usage_error("cannot embed empty text");
    Embedding v(dim_, 0.0);
    auto toks = tokens(text);
    if (toks.empty()) {
        // Punctuation-only input still gets a unit vector.
        v[static_cast<std::size_t>(text::fnv1a64(text) % dim_)] = 1.0;
        return v;
    }
    for (const auto& t : toks) v[bucket(t)] += 1.0;
    normalize(v);
    return v;
}

Embedding CachingEmbedder::embed(const std::string& text) {
    const auto key = std::make_pair(inner_->id(), text::fnv1a64(text));
    {
        std::lock_guard lock(mu_);
        if (auto it = cache_.find(key); it != cache_.end()) {
            for (const auto& [t, e] : it->second) {
                if (t == text) return e;
            }
        }
    }
    auto e = inner_->embed(text);
    std::lock_guard lock(mu_);
    ++misses_;
    cache_[key].emplace_back(text, e);
    return e;
}

std::size_t CachingEmbedder::cache_size() const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& [_, bucket] : cache_) n += bucket.size();
    return n;
}

std::size_t CachingEmbedder::misses() const {
    std::lock_guard lock(mu_);
    return misses_;
}

}  // namespace tacit
