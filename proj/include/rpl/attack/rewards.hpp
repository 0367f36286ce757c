#pragma once

#include <algorithm>
#include <string>
#include <string_view>

#include "../blackbox.hpp"
#include "../bm25.hpp"
#include "../corpus.hpp"
#include "../error.hpp"

namespace rpl::attack {

/// Readings of the similarity reward.
///  gated_min    : 1[target in doc] * min(alpha, BM25(q, doc))
///  literal_min  : min(alpha, BM25(q, doc), 1[target in doc])
///  weighted_sum : 0.5 min(alpha, BM25(q, doc)) + 0.5 min(alpha, BM25(target, doc))
enum class SimVariant { gated_min, literal_min, weighted_sum };
enum class MatchMode { contains, exact };

inline std::string_view to_string(SimVariant v) {
    switch (v) {
    case SimVariant::gated_min: return "gated_min";
    case SimVariant::literal_min: return "literal_min";
    case SimVariant::weighted_sum: return "weighted_sum";
    }
    return "gated_min";
}

inline SimVariant parse_sim_variant(std::string_view s) {
    if (s == "gated_min") return SimVariant::gated_min;
    if (s == "literal_min") return SimVariant::literal_min;
    if (s == "weighted_sum") return SimVariant::weighted_sum;
    throw ConfigError("unknown similarity variant: " + std::string(s));
}

inline std::string_view to_string(MatchMode m) { return m == MatchMode::contains ? "contains" : "exact"; }

inline MatchMode parse_match_mode(std::string_view s) {
    if (s == "contains") return MatchMode::contains;
    if (s == "exact") return MatchMode::exact;
    throw ConfigError("unknown match mode: " + std::string(s));
}

inline bool contains_answer(std::string_view text, std::string_view answer) {
    return normalize_answer(text).find(normalize_answer(answer)) != std::string::npos;
}

struct SimilarityConfig {
    double alpha = 5.0;
    SimVariant variant = SimVariant::gated_min;
};

/// Similarity reward in [0, alpha]. BM25 treats the poisoned document as a
/// standalone document scored against the attacker's reference statistics.
inline double similarity_reward(const SimilarityConfig& cfg, std::string_view question, std::string_view doc_text,
                                std::string_view target_answer, const CorpusStats& reference) {
    const auto doc = tokenize(doc_text);
    const double bm25_q = bm25_standalone(reference, tokenize(question), doc);
    const double indicator = contains_answer(doc_text, target_answer) ? 1.0 : 0.0;
    switch (cfg.variant) {
    case SimVariant::gated_min: return indicator * std::min(cfg.alpha, bm25_q);
    case SimVariant::literal_min: return std::min({cfg.alpha, bm25_q, indicator});
    case SimVariant::weighted_sum: {
        const double bm25_a = bm25_standalone(reference, tokenize(target_answer), doc);
        return 0.5 * std::min(cfg.alpha, bm25_q) + 0.5 * std::min(cfg.alpha, bm25_a);
    }
    }
    return 0.0;
}

/// Query-level success indicator on the black-box answer.
inline int attack_reward(const Answer& answer, std::string_view target_answer, MatchMode mode = MatchMode::contains) {
    if (answer.is_abstain) return 0;
    const auto a = normalize_answer(answer.text);
    const auto t = normalize_answer(target_answer);
    if (mode == MatchMode::exact) return a == t ? 1 : 0;
    return a.find(t) != std::string::npos ? 1 : 0;
}

struct RewardToggles {
    bool use_sim = true;
    bool use_suc = true;
};

/// lambda * r_suc + (1 - lambda) * r_sim; a disabled component contributes 0.
inline double composite_reward(double lambda, RewardToggles toggles, int r_suc, double r_sim) {
    const double suc = toggles.use_suc ? static_cast<double>(r_suc) : 0.0;
    const double sim = toggles.use_sim ? r_sim : 0.0;
    return lambda * suc + (1.0 - lambda) * sim;
}

} // namespace rpl::attack
