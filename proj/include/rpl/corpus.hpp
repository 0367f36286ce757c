#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "error.hpp"

namespace rpl {

using Term = std::string;

/// Lowercased ASCII-alphanumeric runs. Every other byte, including each
/// byte of a multi-byte UTF-8 sequence, separates terms.
inline std::vector<Term> tokenize(std::string_view text) {
    std::vector<Term> out;
    std::string cur;
    for (char c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (u < 0x80 && ((u >= '0' && u <= '9') || (u >= 'a' && u <= 'z') || (u >= 'A' && u <= 'Z'))) {
            cur.push_back(static_cast<char>(u >= 'A' && u <= 'Z' ? u - 'A' + 'a' : u));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

inline std::string join_terms(std::span<const Term> terms) {
    std::string out;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (i) out.push_back(' ');
        out += terms[i];
    }
    return out;
}

/// Answer normalization shared by the generator oracle and the attack reward:
/// lowercase, collapse every non-alphanumeric run to one space, trim.
inline std::string normalize_answer(std::string_view text) {
    const auto terms = tokenize(text);
    return join_terms(terms);
}

/// Unique terms in first-occurrence order.
inline std::vector<Term> unique_terms(std::span<const Term> terms) {
    std::vector<Term> out;
    std::unordered_set<std::string_view> seen;
    for (const auto& t : terms) {
        if (seen.insert(t).second) out.push_back(t);
    }
    return out;
}

enum class Origin { clean, poisoned };

struct Document {
    std::string id;
    std::string text;
    Origin origin = Origin::clean;

    friend bool operator==(const Document&, const Document&) = default;
};

struct QueryCase {
    std::string qid;
    std::string question;
    std::string true_answer;
    std::string target_answer;
    // Optional harness-side extras: extra candidate answers for the simulated
    // generator and its parametric prior (defaults to true_answer).
    std::vector<std::string> distractors;
    std::optional<std::string> prior;

    friend bool operator==(const QueryCase&, const QueryCase&) = default;
};

inline std::string poison_id(std::string_view qid, std::size_t j) {
    return "poison/" + std::string(qid) + "/" + std::to_string(j);
}

/// Collection statistics. avgdl is derived from an integer token total so that
/// incremental and from-scratch computations agree exactly.
struct CorpusStats {
    std::size_t doc_count = 0;
    std::size_t total_tokens = 0;
    double avgdl = 0.0;
    std::unordered_map<Term, std::size_t> df;

    void add_document(std::span<const Term> terms) {
        ++doc_count;
        total_tokens += terms.size();
        for (const auto& t : unique_terms(terms)) ++df[t];
        refresh_avgdl();
    }

    std::size_t doc_freq(const Term& t) const {
        const auto it = df.find(t);
        return it == df.end() ? 0 : it->second;
    }

    static CorpusStats from_documents(std::span<const std::vector<Term>> docs) {
        CorpusStats s;
        for (const auto& d : docs) s.add_document(d);
        return s;
    }

    friend bool operator==(const CorpusStats&, const CorpusStats&) = default;

private:
    void refresh_avgdl() {
        avgdl = doc_count == 0 ? 0.0 : static_cast<double>(total_tokens) / static_cast<double>(doc_count);
    }
};

/// Immutable ordered document collection with cached tokenization and stats.
class CorpusSnapshot {
public:
    CorpusSnapshot() = default;

    explicit CorpusSnapshot(std::vector<Document> docs) {
        for (auto& d : docs) push(std::move(d));
    }

    const std::vector<Document>& docs() const { return docs_; }
    const std::vector<std::vector<Term>>& doc_terms() const { return terms_; }
    const CorpusStats& stats() const { return stats_; }
    std::size_t size() const { return docs_.size(); }

    std::optional<std::size_t> find(std::string_view id) const {
        const auto it = index_.find(std::string(id));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    /// A new snapshot with `extra` appended. Stats are updated incrementally.
    CorpusSnapshot extended(std::span<const Document> extra) const {
        std::unordered_set<std::string_view> batch;
        for (const auto& d : extra) {
            if (d.id.empty()) throw ConfigError("injected document has an empty id");
            if (index_.count(d.id) || !batch.insert(d.id).second) {
                throw ConfigError("injected document id collides with an existing id: " + d.id);
            }
        }
        CorpusSnapshot out = *this;
        for (const auto& d : extra) out.push(d);
        return out;
    }

private:
    void push(Document d) {
        if (d.id.empty()) throw ConfigError("document id must be non-empty");
        if (index_.count(d.id)) throw ConfigError("duplicate document id: " + d.id);
        auto terms = tokenize(d.text);
        stats_.add_document(terms);
        index_.emplace(d.id, docs_.size());
        docs_.push_back(std::move(d));
        terms_.push_back(std::move(terms));
    }

    std::vector<Document> docs_;
    std::vector<std::vector<Term>> terms_;
    std::unordered_map<std::string, std::size_t> index_;
    CorpusStats stats_;
};

/// Runs `body` against `snapshot` plus `poison`. The base snapshot is never
/// modified, so the clean state is what remains after `body` returns or throws.
template <class Body>
auto with_injection(const CorpusSnapshot& snapshot, std::span<const Document> poison, Body&& body)
    -> std::invoke_result_t<Body, const CorpusSnapshot&> {
    const CorpusSnapshot injected = snapshot.extended(poison);
    return std::forward<Body>(body)(injected);
}

namespace detail {

template <class Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
        }
        if (!j.is_object()) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected a JSON object");
        }
        fn(j, line_no);
    }
}

inline std::string string_field(const nlohmann::json& j, const char* key, const std::filesystem::path& path,
                                std::size_t line_no) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_string()) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": missing string field '" + key + "'");
    }
    return it->get<std::string>();
}

} // namespace detail

inline CorpusSnapshot load_corpus(const std::filesystem::path& path) {
    std::vector<Document> docs;
    std::unordered_set<std::string> ids;
    detail::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line_no) {
        Document d;
        d.id = detail::string_field(j, "id", path, line_no);
        d.text = detail::string_field(j, "text", path, line_no);
        if (d.id.empty()) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": empty id");
        if (!ids.insert(d.id).second) throw ParseError("duplicate document id: " + d.id);
        docs.push_back(std::move(d));
    });
    return CorpusSnapshot(std::move(docs));
}

inline void validate(const QueryCase& q) {
    if (q.qid.empty()) throw ParseError("query has an empty qid");
    if (q.question.empty()) throw ParseError("query " + q.qid + ": empty question");
    if (q.target_answer.empty()) throw ParseError("query " + q.qid + ": empty target_answer");
    if (normalize_answer(q.target_answer) == normalize_answer(q.true_answer)) {
        throw ParseError("query " + q.qid + ": target_answer equals true_answer after normalization");
    }
}

inline std::vector<QueryCase> load_queries(const std::filesystem::path& path) {
    std::vector<QueryCase> out;
    std::unordered_set<std::string> qids;
    detail::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line_no) {
        QueryCase q;
        q.qid = detail::string_field(j, "qid", path, line_no);
        q.question = detail::string_field(j, "question", path, line_no);
        q.true_answer = detail::string_field(j, "true_answer", path, line_no);
        q.target_answer = detail::string_field(j, "target_answer", path, line_no);
        if (const auto it = j.find("distractors"); it != j.end()) {
            if (!it->is_array()) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": distractors must be an array");
            for (const auto& d : *it) {
                if (!d.is_string()) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": distractors must be strings");
                q.distractors.push_back(d.get<std::string>());
            }
        }
        if (const auto it = j.find("prior"); it != j.end() && it->is_string()) q.prior = it->get<std::string>();
        validate(q);
        if (!qids.insert(q.qid).second) throw ParseError("duplicate qid: " + q.qid);
        out.push_back(std::move(q));
    });
    return out;
}

inline void write_corpus(const std::filesystem::path& path, std::span<const Document> docs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& d : docs) {
        nlohmann::ordered_json j;
        j["id"] = d.id;
        j["text"] = d.text;
        out << j.dump() << '\n';
    }
}

inline void write_queries(const std::filesystem::path& path, std::span<const QueryCase> queries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& q : queries) {
        nlohmann::ordered_json j;
        j["qid"] = q.qid;
        j["question"] = q.question;
        j["true_answer"] = q.true_answer;
        j["target_answer"] = q.target_answer;
        if (!q.distractors.empty()) j["distractors"] = q.distractors;
        if (q.prior) j["prior"] = *q.prior;
        out << j.dump() << '\n';
    }
}

} // namespace rpl
