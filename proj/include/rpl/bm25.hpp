#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "binary_io.hpp"
#include "corpus.hpp"
#include "error.hpp"
#include "ranked_list.hpp"

namespace rpl {

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Okapi BM25 with idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1), which is
/// positive for every df <= N.
inline double bm25_idf(std::size_t df, std::size_t n_docs) {
    const double n = static_cast<double>(n_docs);
    const double f = static_cast<double>(df);
    return std::log((n - f + 0.5) / (f + 0.5) + 1.0);
}

inline double bm25_term_weight(std::size_t tf, std::size_t dl, double avgdl, Bm25Params p) {
    const double f = static_cast<double>(tf);
    const double norm = avgdl > 0.0 ? static_cast<double>(dl) / avgdl : 0.0;
    return f * (p.k1 + 1.0) / (f + p.k1 * (1.0 - p.b + p.b * norm));
}

/// Scores `doc_terms` as a document outside the indexed collection, using
/// `stats` for document frequencies and average length.
inline double bm25_standalone(const CorpusStats& stats, std::span<const Term> query_terms,
                              std::span<const Term> doc_terms, Bm25Params p = {}) {
    std::unordered_map<std::string_view, std::size_t> tf;
    for (const auto& t : doc_terms) ++tf[t];
    double score = 0.0;
    for (const auto& t : unique_terms(query_terms)) {
        const auto it = tf.find(t);
        if (it == tf.end()) continue;
        score += bm25_idf(stats.doc_freq(t), stats.doc_count) *
                 bm25_term_weight(it->second, doc_terms.size(), stats.avgdl, p);
    }
    return score;
}

class Bm25Index {
public:
    struct Posting {
        std::uint32_t doc;
        std::uint32_t tf;

        friend bool operator==(const Posting&, const Posting&) = default;
    };

    Bm25Index() = default;

    static Bm25Index build(const CorpusSnapshot& snapshot, Bm25Params params = {}) {
        Bm25Index idx;
        idx.params_ = params;
        const auto& terms = snapshot.doc_terms();
        std::size_t total = 0;
        for (std::size_t d = 0; d < snapshot.size(); ++d) {
            idx.ids_.push_back(snapshot.docs()[d].id);
            idx.doc_lengths_.push_back(terms[d].size());
            total += terms[d].size();
            std::unordered_map<std::string_view, std::uint32_t> tf;
            std::vector<std::string_view> order;
            for (const auto& t : terms[d]) {
                if (tf[t]++ == 0) order.push_back(t);
            }
            for (auto t : order) idx.postings_[std::string(t)].push_back({static_cast<std::uint32_t>(d), tf[t]});
        }
        idx.finish(total);
        return idx;
    }

    std::size_t n_docs() const { return ids_.size(); }
    double avgdl() const { return avgdl_; }
    Bm25Params params() const { return params_; }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::vector<std::size_t>& doc_lengths() const { return doc_lengths_; }
    const std::unordered_map<Term, std::vector<Posting>>& postings() const { return postings_; }

    std::size_t doc_freq(const Term& t) const {
        const auto it = postings_.find(t);
        return it == postings_.end() ? 0 : it->second.size();
    }

    std::optional<std::size_t> find(const std::string& id) const {
        const auto it = by_id_.find(id);
        if (it == by_id_.end()) return std::nullopt;
        return it->second;
    }

    double score(std::span<const Term> query_terms, std::size_t doc) const {
        if (doc >= n_docs()) throw ConfigError("bm25_score: doc index " + std::to_string(doc) + " out of range");
        double s = 0.0;
        for (const auto& t : unique_terms(query_terms)) {
            const auto it = postings_.find(t);
            if (it == postings_.end()) continue;
            const auto& list = it->second;
            const auto pos = std::lower_bound(list.begin(), list.end(), doc,
                                              [](const Posting& p, std::size_t d) { return p.doc < d; });
            if (pos == list.end() || pos->doc != doc) continue;
            s += bm25_idf(list.size(), n_docs()) * bm25_term_weight(pos->tf, doc_lengths_[doc], avgdl_, params_);
        }
        return s;
    }

    /// Term-at-a-time accumulation in the same per-term order as `score`, so
    /// both paths produce bitwise-identical values.
    RankedList search(std::span<const Term> query_terms, std::size_t k) const {
        if (k < 1) throw ConfigError("bm25_search: k must be >= 1");
        std::vector<double> acc(n_docs(), 0.0);
        for (const auto& t : unique_terms(query_terms)) {
            const auto it = postings_.find(t);
            if (it == postings_.end()) continue;
            const double idf = bm25_idf(it->second.size(), n_docs());
            for (const auto& p : it->second) {
                acc[p.doc] += idf * bm25_term_weight(p.tf, doc_lengths_[p.doc], avgdl_, params_);
            }
        }
        std::vector<Hit> hits;
        for (std::size_t d = 0; d < acc.size(); ++d) {
            if (acc[d] > 0.0) hits.push_back({ids_[d], acc[d]});
        }
        return top_k(std::move(hits), k);
    }

    /// Rescores `candidates` with BM25 and keeps the top `k`. When fewer than
    /// `k` candidates score positively the rest are filled from the zero-score
    /// candidates in their incoming order.
    RankedList rerank(std::span<const Term> query_terms, const RankedList& candidates, std::size_t k) const {
        if (k < 1) throw ConfigError("rerank: k must be >= 1");
        std::vector<Hit> positive;
        std::vector<Hit> zero;
        for (const auto& c : candidates) {
            const auto d = find(c.id);
            if (!d) throw ConfigError("rerank: unknown doc id " + c.id);
            const double s = score(query_terms, *d);
            (s > 0.0 ? positive : zero).push_back({c.id, s});
        }
        RankedList out = top_k(std::move(positive), k);
        for (auto& h : zero) {
            if (out.size() >= k) break;
            out.entries.push_back(std::move(h));
        }
        return out;
    }

    // Layout after the "RPLX" header: u32 kind (1), f64 k1, f64 b,
    // u64 n_docs, n_docs x {str id, u64 length}, u64 n_terms,
    // n_terms x {str term, u64 n_postings, n_postings x {u32 doc, u32 tf}}
    // with terms in byte-wise ascending order.
    void save(const std::filesystem::path& path) const {
        io::Writer w;
        w.bytes("RPLX");
        w.u32(kFormatVersion);
        w.u32(kKind);
        w.f64(params_.k1);
        w.f64(params_.b);
        w.u64(n_docs());
        for (std::size_t d = 0; d < n_docs(); ++d) {
            w.str(ids_[d]);
            w.u64(doc_lengths_[d]);
        }
        std::vector<const Term*> terms;
        for (const auto& [t, _] : postings_) terms.push_back(&t);
        std::sort(terms.begin(), terms.end(), [](const Term* a, const Term* b) { return *a < *b; });
        w.u64(terms.size());
        for (const auto* t : terms) {
            w.str(*t);
            const auto& list = postings_.at(*t);
            w.u64(list.size());
            for (const auto& p : list) {
                w.u32(p.doc);
                w.u32(p.tf);
            }
        }
        w.save(path);
    }

    static Bm25Index load(const std::filesystem::path& path) {
        auto r = io::Reader::open(path);
        r.header("RPLX", kFormatVersion);
        if (r.u32() != kKind) throw ParseError(path.string() + " is not a BM25 index");
        Bm25Index idx;
        idx.params_.k1 = r.f64();
        idx.params_.b = r.f64();
        const auto n = r.u64();
        std::size_t total = 0;
        for (std::uint64_t d = 0; d < n; ++d) {
            idx.ids_.push_back(r.str());
            idx.doc_lengths_.push_back(r.u64());
            total += idx.doc_lengths_.back();
        }
        const auto n_terms = r.u64();
        for (std::uint64_t i = 0; i < n_terms; ++i) {
            auto term = r.str();
            auto& list = idx.postings_[term];
            const auto np = r.u64();
            for (std::uint64_t j = 0; j < np; ++j) {
                Posting p{};
                p.doc = r.u32();
                p.tf = r.u32();
                if (p.doc >= n) throw ParseError("posting references doc " + std::to_string(p.doc));
                list.push_back(p);
            }
        }
        if (!r.at_end()) throw ParseError("trailing bytes in " + path.string());
        idx.finish(total);
        return idx;
    }

    static constexpr std::uint32_t kFormatVersion = 1;
    static constexpr std::uint32_t kKind = 1;

private:
    void finish(std::size_t total_tokens) {
        avgdl_ = ids_.empty() ? 0.0 : static_cast<double>(total_tokens) / static_cast<double>(ids_.size());
        by_id_.clear();
        for (std::size_t d = 0; d < ids_.size(); ++d) by_id_.emplace(ids_[d], d);
    }

    Bm25Params params_;
    std::vector<std::string> ids_;
    std::vector<std::size_t> doc_lengths_;
    std::unordered_map<Term, std::vector<Posting>> postings_;
    std::unordered_map<std::string, std::size_t> by_id_;
    double avgdl_ = 0.0;
};

inline double bm25_score(const Bm25Index& index, std::span<const Term> query_terms, std::size_t doc) {
    return index.score(query_terms, doc);
}

inline RankedList bm25_search(const Bm25Index& index, std::span<const Term> query_terms, std::size_t k) {
    return index.search(query_terms, k);
}

inline RankedList rerank(const Bm25Index& index, std::span<const Term> query_terms, const RankedList& candidates,
                         std::size_t k) {
    return index.rerank(query_terms, candidates, k);
}

} // namespace rpl
