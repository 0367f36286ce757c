#pragma once

// Flat key-value configuration:
//
//   # comment
//   rag.k = 5
//   brpo.lambda = 0.7
//   experiment.corpus = data/docs.jsonl
//
// Keys map one-to-one onto ExperimentSpec, RagConfig and BrpoConfig fields.
// Defaults are the struct defaults. Unknown or repeated keys are errors.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "error.hpp"
#include "evalkit/experiment.hpp"

namespace rpl::config {

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view v) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("invalid value for " + std::string(key) + ": '" + std::string(v) + "'");
    }
    return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("invalid boolean for " + std::string(key) + ": '" + std::string(v) + "'");
}

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

template <class Enum, class Parse>
Enum parse_enum(std::string_view key, std::string_view v, Parse parse) {
    try {
        return parse(v);
    } catch (const ConfigError& e) {
        throw ConfigError(std::string(key) + ": " + e.what());
    }
}

} // namespace detail

struct Binding {
    std::string key;
    std::string help;
    std::function<void(evalkit::ExperimentSpec&, std::string_view)> set;
    std::function<std::string(const evalkit::ExperimentSpec&)> get;
};

#define RPL_NUM(KEY, FIELD, HELP)                                                                                      \
    Binding {                                                                                                          \
        KEY, HELP,                                                                                                     \
            [](evalkit::ExperimentSpec& s, std::string_view v) {                                                       \
                s.FIELD = detail::parse_number<std::decay_t<decltype(s.FIELD)>>(KEY, v);                               \
            },                                                                                                         \
            [](const evalkit::ExperimentSpec& s) {                                                                     \
                if constexpr (std::is_floating_point_v<std::decay_t<decltype(s.FIELD)>>) {                             \
                    return detail::format_double(s.FIELD);                                                             \
                } else {                                                                                               \
                    return std::to_string(s.FIELD);                                                                    \
                }                                                                                                      \
            }                                                                                                          \
    }

#define RPL_BOOL(KEY, FIELD, HELP)                                                                                     \
    Binding {                                                                                                          \
        KEY, HELP, [](evalkit::ExperimentSpec& s, std::string_view v) { s.FIELD = detail::parse_bool(KEY, v); },       \
            [](const evalkit::ExperimentSpec& s) { return std::string(s.FIELD ? "true" : "false"); }                   \
    }

#define RPL_STR(KEY, FIELD, HELP)                                                                                      \
    Binding {                                                                                                          \
        KEY, HELP, [](evalkit::ExperimentSpec& s, std::string_view v) { s.FIELD = std::string(v); },                   \
            [](const evalkit::ExperimentSpec& s) { return std::string(s.FIELD); }                                      \
    }

#define RPL_ENUM(KEY, FIELD, PARSE, HELP)                                                                              \
    Binding {                                                                                                          \
        KEY, HELP,                                                                                                     \
            [](evalkit::ExperimentSpec& s, std::string_view v) {                                                       \
                s.FIELD = detail::parse_enum<std::decay_t<decltype(s.FIELD)>>(KEY, v, [](std::string_view x) {         \
                    return PARSE(x);                                                                                   \
                });                                                                                                    \
            },                                                                                                         \
            [](const evalkit::ExperimentSpec& s) { return std::string(to_string(s.FIELD)); }                           \
    }

/// Every accepted key, in documentation order.
inline const std::vector<Binding>& bindings() {
    using namespace rpl::attack;
    static const std::vector<Binding> all = {
        RPL_STR("experiment.corpus", corpus, "documents JSONL file"),
        RPL_STR("experiment.queries", queries, "queries JSONL file"),
        RPL_ENUM("experiment.attacker", attacker, evalkit::parse_attacker,
                 "riprag | poisonedrag_baseline | untrained_policy"),
        RPL_NUM("experiment.split", split_ratio, "fraction of queries used for training, in [0, 1)"),
        RPL_NUM("experiment.seed", seed, "single source of all randomness"),
        RPL_STR("experiment.output_dir", output_dir, "directory for checkpoints, metrics and reports"),

        RPL_ENUM("rag.retriever_mode", rag.retriever_mode, parse_retriever_mode, "naive | complex"),
        RPL_NUM("rag.k", rag.k, "documents passed to the generator"),
        RPL_NUM("rag.candidate_multiplier", rag.candidate_multiplier, "first-stage depth = multiplier * k"),
        RPL_ENUM("rag.generator_mode", rag.generator_mode, parse_generator_mode, "simulated | external"),
        RPL_ENUM("rag.defense", rag.defense, parse_defense, "none | rewrite_query | hyde | robustrag"),
        RPL_NUM("rag.robustrag_tau", rag.robustrag_tau, "RobustRAG vote threshold"),
        RPL_NUM("rag.rrf_k", rag.rrf_k, "reciprocal rank fusion constant"),
        RPL_NUM("rag.nprobe", rag.nprobe, "IVF lists probed per query in complex mode"),
        RPL_NUM("rag.nlist", rag.nlist, "IVF list count"),
        RPL_BOOL("rag.persistent_poison", rag.persistent_poison, "keep injected documents after each trial"),
        RPL_STR("rag.external.endpoint", rag.external.endpoint, "base URL of the chat-completions API"),
        RPL_STR("rag.external.model", rag.external.model, "model name sent with each request"),
        RPL_NUM("rag.external.timeout_ms", rag.external.timeout_ms, "per-request timeout"),
        RPL_NUM("rag.external.max_retries", rag.external.max_retries, "retries after a transport failure"),
        RPL_NUM("rag.external.max_in_flight", rag.external.max_in_flight, "concurrent requests"),

        RPL_NUM("brpo.epsilon", brpo.epsilon, "clip range, in [0, 1)"),
        RPL_NUM("brpo.lambda", brpo.lambda, "attack-reward weight, in (0, 1)"),
        RPL_NUM("brpo.alpha", brpo.alpha, "similarity reward cap"),
        RPL_NUM("brpo.M", brpo.M, "poisoned documents per query"),
        RPL_NUM("brpo.batch_queries", brpo.batch_queries, "queries per epoch"),
        RPL_NUM("brpo.inner_epochs", brpo.inner_epochs, "gradient steps per batch"),
        RPL_NUM("brpo.max_len", brpo.max_len, "maximum generated tokens"),
        RPL_NUM("brpo.temperature", brpo.temperature, "sampling temperature during training"),
        RPL_NUM("brpo.learning_rate", brpo.learning_rate, "Adam step size"),
        RPL_NUM("brpo.adam_beta1", brpo.adam_beta1, "Adam beta1"),
        RPL_NUM("brpo.adam_beta2", brpo.adam_beta2, "Adam beta2"),
        RPL_NUM("brpo.adam_eps", brpo.adam_eps, "Adam epsilon"),
        RPL_NUM("brpo.epochs", brpo.epochs, "total training epochs"),
        RPL_ENUM("brpo.normalization_scope", brpo.normalization_scope, parse_scope, "batch | group"),
        RPL_NUM("brpo.kl_coeff", brpo.kl_coeff, "weight of the KL penalty to the frozen initial policy"),
        RPL_BOOL("brpo.use_sim", brpo.toggles.use_sim, "include the similarity reward"),
        RPL_BOOL("brpo.use_suc", brpo.toggles.use_suc, "include the attack reward"),
        RPL_ENUM("brpo.sim_variant", brpo.sim_variant, parse_sim_variant, "gated_min | literal_min | weighted_sum"),
        RPL_ENUM("brpo.match_mode", brpo.match_mode, parse_match_mode, "contains | exact"),
        RPL_NUM("brpo.vocab_size", brpo.vocab_size, "policy vocabulary size including specials"),
        RPL_NUM("brpo.hidden", brpo.hidden, "recurrent state width"),
        RPL_BOOL("brpo.prompt_target", brpo.prompt_target, "append the target answer to the policy prompt"),
        RPL_ENUM("brpo.init", brpo.init, parse_policy_init, "random | copy"),
        RPL_NUM("brpo.init_output_scale", brpo.init_output_scale, "output weight scale for the random init"),
        RPL_NUM("brpo.copy_gain", brpo.copy_gain, "readout gain for the copy init"),
        RPL_NUM("brpo.eval_interval", brpo.eval_interval, "evaluate every n epochs; 0 = final epoch only"),
        RPL_NUM("jobs", brpo.jobs, "worker threads; 1 keeps runs reproducible"),
    };
    return all;
}

#undef RPL_NUM
#undef RPL_BOOL
#undef RPL_STR
#undef RPL_ENUM

inline const Binding& binding(std::string_view key) {
    for (const auto& b : bindings()) {
        if (b.key == key) return b;
    }
    throw ConfigError("unknown config key: " + std::string(key));
}

/// Applies one `key = value` assignment.
inline void set(evalkit::ExperimentSpec& spec, std::string_view key, std::string_view value) {
    binding(key).set(spec, value);
    spec.brpo.seed = spec.seed;
}

inline std::string get(const evalkit::ExperimentSpec& spec, std::string_view key) { return binding(key).get(spec); }

/// Parses config text onto `spec`. `origin` names the source in errors.
inline void apply_text(evalkit::ExperimentSpec& spec, std::string_view text, const std::string& origin = "config") {
    std::set<std::string> seen;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        const auto hash = line.find('#');
        const auto body = detail::trim(std::string_view(line).substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        const auto where = origin + ":" + std::to_string(line_no) + ": ";
        if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
        const auto key = detail::trim(body.substr(0, eq));
        auto value = detail::trim(body.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        if (!seen.insert(std::string(key)).second) throw ConfigError(where + "duplicate key: " + std::string(key));
        try {
            set(spec, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
}

inline void apply_file(evalkit::ExperimentSpec& spec, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    apply_text(spec, buf.str(), path.string());
}

/// Applies `key=value` overrides, e.g. from repeated --set flags.
inline void apply_overrides(evalkit::ExperimentSpec& spec, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("override must be key=value: " + o);
        auto value = detail::trim(std::string_view(o).substr(eq + 1));
        set(spec, detail::trim(std::string_view(o).substr(0, eq)), value);
    }
}

/// The full resolved configuration in file syntax.
inline std::string dump(const evalkit::ExperimentSpec& spec) {
    std::string out;
    for (const auto& b : bindings()) out += b.key + " = " + b.get(spec) + "\n";
    return out;
}

} // namespace rpl::config
