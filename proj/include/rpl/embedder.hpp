#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "corpus.hpp"
#include "error.hpp"

namespace rpl {

using Vector = std::vector<double>;

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

inline std::uint64_t fnv1a64(std::uint64_t h, std::string_view bytes) {
    for (char c : bytes) {
        h ^= static_cast<std::uint8_t>(c);
        h *= kFnvPrime;
    }
    return h;
}

/// FNV-1a-64 over the 8-byte little-endian seed followed by the token bytes.
inline std::uint64_t feature_hash(std::uint64_t seed, std::string_view token) {
    char le[8];
    for (int i = 0; i < 8; ++i) le[i] = static_cast<char>((seed >> (8 * i)) & 0xFF);
    return fnv1a64(fnv1a64(kFnvOffset, std::string_view(le, 8)), token);
}

/// Signed feature-hashing embedder with tf-idf weights, L2 normalized.
/// Stand-in for a learned dense encoder.
struct DenseEmbedder {
    std::size_t dim = 256;
    std::uint64_t seed = 1;

    static DenseEmbedder a() { return {256, 1}; }
    static DenseEmbedder b() { return {384, 2}; }

    Vector embed(std::span<const Term> terms, const CorpusStats& stats) const {
        if (dim == 0) throw ConfigError("embedder dim must be > 0");
        Vector v(dim, 0.0);
        std::unordered_map<std::string_view, std::size_t> tf;
        std::vector<std::string_view> order;
        for (const auto& t : terms) {
            if (tf[t]++ == 0) order.push_back(t);
        }
        const double n = static_cast<double>(stats.doc_count);
        for (auto t : order) {
            const auto h = feature_hash(seed, t);
            const auto idx = static_cast<std::size_t>(h % dim);
            const double sign = (h >> 63) == 0 ? 1.0 : -1.0;
            const double df = static_cast<double>(stats.doc_freq(Term(t)));
            const double idf = std::log((n + 1.0) / (df + 1.0)) + 1.0;
            v[idx] += sign * static_cast<double>(tf[t]) * idf;
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        if (norm > 0.0) {
            norm = std::sqrt(norm);
            for (double& x : v) x /= norm;
        }
        return v;
    }

    Vector embed(std::string_view text, const CorpusStats& stats) const {
        const auto terms = tokenize(text);
        return embed(terms, stats);
    }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace rpl
