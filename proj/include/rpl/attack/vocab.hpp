#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "../corpus.hpp"
#include "../error.hpp"

namespace rpl::attack {

using TokenId = std::uint32_t;

inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kUnk = 2;
inline constexpr std::size_t kNumSpecials = 3;

class Vocab {
public:
    Vocab() : tokens_{"<bos>", "<eos>", "<unk>"} {}

    /// Builds from an explicit token list (specials excluded), in id order.
    static Vocab from_tokens(std::vector<std::string> tokens) {
        Vocab v;
        for (auto& t : tokens) {
            if (v.ids_.count(t)) throw ConfigError("duplicate vocab token: " + t);
            v.ids_.emplace(t, static_cast<TokenId>(v.tokens_.size()));
            v.tokens_.push_back(std::move(t));
        }
        return v;
    }

    std::size_t size() const { return tokens_.size(); }
    const std::string& token(TokenId id) const { return tokens_.at(id); }
    std::span<const std::string> tokens() const { return tokens_; }
    static bool is_special(TokenId id) { return id < kNumSpecials; }

    TokenId id(std::string_view term) const {
        const auto it = ids_.find(std::string(term));
        return it == ids_.end() ? kUnk : it->second;
    }

    bool contains(std::string_view term) const { return ids_.count(std::string(term)) != 0; }

    std::vector<TokenId> encode(std::string_view text) const {
        std::vector<TokenId> out;
        for (const auto& t : tokenize(text)) out.push_back(id(t));
        return out;
    }

    /// Non-special tokens joined by single spaces; decoding stops at EOS.
    std::string decode(std::span<const TokenId> ids) const {
        std::string out;
        for (auto i : ids) {
            if (i == kEos) break;
            if (is_special(i) || i >= size()) continue;
            if (!out.empty()) out.push_back(' ');
            out += tokens_[i];
        }
        return out;
    }

    friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> ids_;
};

/// Frequency-ranked vocabulary over corpus texts, questions and target
/// answers. Target-answer terms are reserved first so they are always
/// representable; the remaining slots go to the most frequent other terms.
/// Final id order is frequency descending, ties lexicographic.
inline Vocab build_vocab(const CorpusSnapshot& snapshot, std::span<const QueryCase> queries, std::size_t max_size) {
    if (max_size < 8) throw ConfigError("vocab size must be >= 8");
    std::map<std::string, std::size_t> freq;
    for (const auto& terms : snapshot.doc_terms()) {
        for (const auto& t : terms) ++freq[t];
    }
    std::set<std::string> reserved;
    for (const auto& q : queries) {
        for (const auto& t : tokenize(q.question)) ++freq[t];
        for (auto& t : tokenize(q.target_answer)) {
            ++freq[t];
            reserved.insert(std::move(t));
        }
    }
    if (reserved.size() + kNumSpecials > max_size) {
        throw ConfigError("vocab size " + std::to_string(max_size) + " cannot hold " + std::to_string(reserved.size()) +
                          " target-answer tokens plus specials");
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    const auto by_freq = [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    };
    std::sort(ranked.begin(), ranked.end(), by_freq);
    std::vector<std::pair<std::string, std::size_t>> chosen;
    for (const auto& t : reserved) chosen.emplace_back(t, freq[t]);
    std::size_t budget = max_size - kNumSpecials - reserved.size();
    for (const auto& entry : ranked) {
        if (budget == 0) break;
        if (reserved.count(entry.first)) continue;
        chosen.push_back(entry);
        --budget;
    }
    std::sort(chosen.begin(), chosen.end(), by_freq);
    std::vector<std::string> tokens;
    tokens.reserve(chosen.size());
    for (auto& c : chosen) tokens.push_back(std::move(c.first));
    return Vocab::from_tokens(std::move(tokens));
}

} // namespace rpl::attack
