#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "error.hpp"

namespace rpl {

struct Hit {
    std::string id;
    double score = 0.0;

    friend bool operator==(const Hit&, const Hit&) = default;
};

/// Score descending, then doc id ascending.
inline bool hit_before(const Hit& a, const Hit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
}

/// Ordered retrieval result. Canonical lists are strictly sorted by
/// `hit_before` with unique ids; the reranker's zero-score padding is the one
/// producer of non-canonical tails.
struct RankedList {
    std::vector<Hit> entries;

    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }
    const Hit& operator[](std::size_t i) const { return entries[i]; }
    auto begin() const { return entries.begin(); }
    auto end() const { return entries.end(); }

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        out.reserve(entries.size());
        for (const auto& h : entries) out.push_back(h.id);
        return out;
    }

    bool is_canonical() const {
        std::unordered_set<std::string> seen;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (!seen.insert(entries[i].id).second) return false;
            if (i > 0 && !hit_before(entries[i - 1], entries[i])) return false;
        }
        return true;
    }

    friend bool operator==(const RankedList&, const RankedList&) = default;
};

/// Keeps the best `k` hits under `hit_before`.
inline RankedList top_k(std::vector<Hit> hits, std::size_t k) {
    const auto n = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(), hit_before);
    hits.resize(n);
    return RankedList{std::move(hits)};
}

/// Reciprocal Rank Fusion: score(d) = sum over lists containing d of
/// 1 / (k_rrf + rank), ranks starting at 1. Each document's reciprocal ranks
/// are summed in ascending-rank order, which makes the result independent of
/// the order of `lists`.
inline RankedList rrf_fuse(std::span<const RankedList> lists, std::size_t k_rrf, std::size_t k) {
    if (k < 1) throw ConfigError("rrf_fuse: k must be >= 1");
    if (k_rrf < 1) throw ConfigError("rrf_fuse: k_rrf must be >= 1");
    std::map<std::string, std::vector<std::size_t>> ranks;
    for (const auto& list : lists) {
        std::unordered_set<std::string> seen;
        for (std::size_t r = 0; r < list.size(); ++r) {
            if (seen.insert(list[r].id).second) ranks[list[r].id].push_back(r + 1);
        }
    }
    std::vector<Hit> fused;
    fused.reserve(ranks.size());
    for (auto& [id, rs] : ranks) {
        std::sort(rs.begin(), rs.end());
        double s = 0.0;
        for (auto r : rs) s += 1.0 / static_cast<double>(k_rrf + r);
        fused.push_back({id, s});
    }
    return top_k(std::move(fused), k);
}

} // namespace rpl
