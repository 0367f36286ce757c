#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "../corpus.hpp"
#include "../error.hpp"
#include "../random.hpp"

namespace rpl::evalkit {

struct SyntheticBenchmark {
    std::vector<Document> docs;
    std::vector<QueryCase> queries;
};

namespace detail {

struct Attribute {
    std::string_view question;
    std::array<std::string_view, 3> evidence;
};

// {E} entity, {A} answer.
inline constexpr std::array<Attribute, 8> kAttributes = {{
    {"What is the capital of {E}?",
     {"The capital of {E} is {A}.", "{A} hosts the government offices of {E}.",
      "Most embassies in {E} are located in {A}."}},
    {"Who founded {E}?",
     {"{E} was founded by {A}.", "Historians credit {A} with establishing {E}.",
      "The first settlement of {E} was organized by {A}."}},
    {"Which currency is used in {E}?",
     {"The currency used in {E} is the {A}.", "Shops in {E} price their goods in {A}.",
      "Travelers to {E} exchange money for {A}."}},
    {"What language do people speak in {E}?",
     {"People in {E} speak {A}.", "The official language of {E} is {A}.",
      "Schools across {E} teach lessons in {A}."}},
    {"Which river flows through {E}?",
     {"The {A} river flows through {E}.", "Farmers in {E} irrigate their fields with water from the {A}.",
      "Boats carry goods along the {A} across {E}."}},
    {"Who composed the national anthem of {E}?",
     {"The national anthem of {E} was composed by {A}.", "{A} wrote the music sung at every ceremony in {E}.",
      "Every school child in {E} learns the anthem by {A}."}},
    {"What is the national dish of {E}?",
     {"The national dish of {E} is {A}.", "Families in {E} cook {A} for every festival.",
      "Restaurants in {E} serve {A} to visitors."}},
    {"What is the highest mountain in {E}?",
     {"The highest mountain in {E} is {A}.", "Climbers travel to {E} to reach the summit of {A}.",
      "Mount {A} towers over the valleys of {E}."}},
}};

// {E} entity, {F}/{G} filler words, {D} an answer belonging to another query.
inline constexpr std::array<std::string_view, 8> kDistractors = {
    "{E} is known for its {F} and {G}.",
    "Visitors often ask what makes {E} so {F}.",
    "Nobody knows who first mapped the {F} hills of {E}.",
    "Guides explain which {F} trails in {E} are safe in winter.",
    "The {F} market of {E} opens early on weekends.",
    "Local newspapers in {E} report on {F} weather and {G} prices.",
    "A {F} festival in {E} features music from {D}.",
    "Reports about {E} mention {D} and the {F} coast.",
};

inline constexpr std::array<std::string_view, 40> kFillers = {
    "quiet",  "ancient", "green",   "windy",   "coastal", "busy",    "famous", "rocky",   "golden",  "northern",
    "modest", "crowded", "sunny",   "frozen",  "remote",  "lively",  "narrow", "wooden",  "silver",  "southern",
    "gentle", "rugged",  "fertile", "misty",   "bright",  "humble",  "vast",   "shallow", "stormy",  "elegant",
    "spicy",  "painted", "hidden",  "eastern", "western", "dusty",   "mellow", "steep",   "crimson", "tranquil",
};

inline constexpr std::array<std::string_view, 12> kOnsets = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"};
inline constexpr std::array<std::string_view, 5> kVowels = {"a", "e", "i", "o", "u"};
inline constexpr std::array<std::string_view, 6> kCodas = {"", "", "n", "r", "x", "q"};

inline std::string pseudo_word(Rng& rng, std::size_t syllables) {
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
        w += kOnsets[rng.below(kOnsets.size())];
        w += kVowels[rng.below(kVowels.size())];
    }
    w += kCodas[rng.below(kCodas.size())];
    return w;
}

inline std::string capitalize(std::string w) {
    if (!w.empty() && w[0] >= 'a' && w[0] <= 'z') w[0] = static_cast<char>(w[0] - 'a' + 'A');
    return w;
}

inline std::string fill(std::string_view tmpl, std::string_view key, std::string_view value) {
    std::string out(tmpl);
    for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + value.size())) {
        out.replace(pos, key.size(), value);
    }
    return out;
}

/// Draws unique pseudo-words. A word is rejected if it contains, or is
/// contained in, any word already issued or any template word.
class WordSource {
public:
    explicit WordSource(std::uint64_t seed) : rng_(seed) {
        for (const auto& a : kAttributes) {
            add_reserved(a.question);
            for (auto e : a.evidence) add_reserved(e);
        }
        for (auto d : kDistractors) add_reserved(d);
        for (auto f : kFillers) add_reserved(f);
        for (auto t : {"answer", "correct", "question", "unknown"}) reserved_.insert(t);
    }

    std::string next(std::size_t syllables) {
        for (int attempt = 0; attempt < 100000; ++attempt) {
            auto w = pseudo_word(rng_, syllables);
            if (conflicts(w)) continue;
            reserved_.insert(w);
            return w;
        }
        throw Error("synthetic benchmark: exhausted pseudo-word space");
    }

private:
    void add_reserved(std::string_view text) {
        for (auto& t : tokenize(text)) {
            if (t != "e" && t != "a" && t != "d" && t != "f" && t != "g") reserved_.insert(std::move(t));
        }
    }

    bool conflicts(const std::string& w) const {
        for (const auto& r : reserved_) {
            if (r.find(w) != std::string::npos || w.find(r) != std::string::npos) return true;
        }
        return false;
    }

    Rng rng_;
    std::set<std::string> reserved_;
};

} // namespace detail

/// Deterministic entity/attribute QA benchmark. Each query gets three clean
/// evidence documents asserting its true answer; the remaining documents are
/// distractors over the same entities. Target answers are fresh words that
/// occur in no clean document.
inline SyntheticBenchmark gen_synthetic_benchmark(std::size_t n_docs, std::size_t n_queries, std::uint64_t seed) {
    using namespace detail;
    if (n_queries < 1) throw ConfigError("gen: need at least one query");
    if (n_docs < 5 * n_queries) throw ConfigError("gen: n_docs must be >= 5 * n_queries");
    const std::size_t n_attr = kAttributes.size();
    const std::size_t n_entities = std::max<std::size_t>(4, (n_queries + 3) / 4);

    WordSource words(derive_seed(seed, {1}));
    Rng rng(derive_seed(seed, {2}));
    std::vector<std::string> entities;
    for (std::size_t i = 0; i < n_entities; ++i) entities.push_back(capitalize(words.next(3)));

    std::vector<std::pair<std::size_t, std::size_t>> pairs; // (entity, attribute)
    for (std::size_t e = 0; e < n_entities; ++e) {
        for (std::size_t a = 0; a < n_attr; ++a) pairs.emplace_back(e, a);
    }
    for (std::size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[rng.below(i)]);
    pairs.resize(n_queries);

    SyntheticBenchmark out;
    std::vector<std::string> evidence_texts;
    std::vector<std::string> true_answers;
    for (std::size_t i = 0; i < n_queries; ++i) {
        const auto [e, a] = pairs[i];
        const auto& attr = kAttributes[a];
        QueryCase q;
        q.qid = "q" + std::to_string(1000 + i).substr(1);
        q.question = fill(attr.question, "{E}", entities[e]);
        q.true_answer = capitalize(words.next(2));
        true_answers.push_back(q.true_answer);
        for (auto tmpl : attr.evidence) evidence_texts.push_back(fill(fill(tmpl, "{E}", entities[e]), "{A}", q.true_answer));
        out.queries.push_back(std::move(q));
    }
    for (auto& q : out.queries) q.target_answer = capitalize(words.next(2));
    for (std::size_t i = 0; i < n_queries; ++i) {
        // Distractor candidate: the true answer of another query with the same attribute when possible.
        const auto attr = pairs[i].second;
        std::size_t pick = (i + 1) % n_queries;
        for (std::size_t k = 1; k < n_queries; ++k) {
            const auto j = (i + k) % n_queries;
            if (pairs[j].second == attr) {
                pick = j;
                break;
            }
        }
        if (pick != i) out.queries[i].distractors.push_back(true_answers[pick]);
    }

    std::vector<std::string> texts = std::move(evidence_texts);
    while (texts.size() < n_docs) {
        const auto tmpl = kDistractors[rng.below(kDistractors.size())];
        std::string t = fill(tmpl, "{E}", entities[rng.below(n_entities)]);
        t = fill(t, "{F}", kFillers[rng.below(kFillers.size())]);
        t = fill(t, "{G}", kFillers[rng.below(kFillers.size())]);
        t = fill(t, "{D}", true_answers[rng.below(true_answers.size())]);
        texts.push_back(std::move(t));
    }
    for (std::size_t i = texts.size(); i > 1; --i) std::swap(texts[i - 1], texts[rng.below(i)]);
    for (std::size_t i = 0; i < texts.size(); ++i) {
        out.docs.push_back({"d" + std::to_string(100000 + i).substr(1), std::move(texts[i]), Origin::clean});
    }
    return out;
}

} // namespace rpl::evalkit
