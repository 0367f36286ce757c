#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "../attack/baseline.hpp"
#include "../attack/brpo.hpp"
#include "../attack/rlbf.hpp"
#include "../attack/vocab.hpp"
#include "../corpus.hpp"
#include "../error.hpp"
#include "../ragsys.hpp"

namespace rpl::evalkit {

enum class AttackerKind { riprag, poisonedrag_baseline, untrained_policy };

inline std::string_view to_string(AttackerKind a) {
    switch (a) {
    case AttackerKind::riprag: return "riprag";
    case AttackerKind::poisonedrag_baseline: return "poisonedrag_baseline";
    case AttackerKind::untrained_policy: return "untrained_policy";
    }
    return "?";
}

inline AttackerKind parse_attacker(std::string_view s) {
    if (s == "riprag") return AttackerKind::riprag;
    if (s == "poisonedrag_baseline" || s == "baseline") return AttackerKind::poisonedrag_baseline;
    if (s == "untrained_policy" || s == "untrained") return AttackerKind::untrained_policy;
    throw ConfigError("unknown attacker: " + std::string(s));
}

struct ExperimentSpec {
    std::filesystem::path corpus;
    std::filesystem::path queries;
    RagConfig rag;
    attack::BrpoConfig brpo;
    AttackerKind attacker = AttackerKind::riprag;
    double split_ratio = 0.6;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "out";

    void validate() const {
        rag.validate();
        brpo.validate();
        if (!(split_ratio >= 0.0 && split_ratio < 1.0)) throw ConfigError("split must be in [0, 1)");
    }
};

struct QuerySplit {
    std::vector<QueryCase> train;
    std::vector<QueryCase> eval;
};

/// The first floor(ratio * n) queries train, the rest evaluate.
inline QuerySplit split_queries(std::span<const QueryCase> queries, double ratio) {
    if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("split must be in [0, 1)");
    const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(queries.size()) + 1e-9));
    if (n_train >= queries.size()) throw ConfigError("split leaves no evaluation queries");
    QuerySplit s;
    s.train.assign(queries.begin(), queries.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.eval.assign(queries.begin() + static_cast<std::ptrdiff_t>(n_train), queries.end());
    return s;
}

/// One measured cell of a report.
struct AsrCell {
    std::string label;
    AttackerKind attacker = AttackerKind::riprag;
    RetrieverMode retriever_mode = RetrieverMode::naive;
    Defense defense = Defense::none;
    std::size_t M = 1;
    std::size_t successes = 0;
    std::size_t n_eval = 0;
    double asr = 0.0;
    std::uint64_t blackbox_calls = 0;
    double wall_seconds = 0.0;
    std::vector<std::string> failed_qids; // transport failures, counted as unsuccessful

    friend bool operator==(const AsrCell&, const AsrCell&) = default;
};

struct CurvePoint {
    std::uint64_t epoch = 0;
    double value = 0.0;
    friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

struct CurveSeries {
    std::string name;
    std::vector<CurvePoint> points;
    friend bool operator==(const CurveSeries&, const CurveSeries&) = default;
};

struct AsrReport {
    static constexpr int kFormatVersion = 1;
    std::uint64_t seed = 0;
    std::vector<AsrCell> cells;
    std::vector<CurveSeries> curves;

    friend bool operator==(const AsrReport&, const AsrReport&) = default;
};

/// Produces the M poisoned texts an attacker injects for one query.
using DocumentSource = std::function<std::vector<std::string>(const QueryCase&)>;

inline DocumentSource baseline_source(std::size_t M) {
    return [M](const QueryCase& q) { return attack::baseline_poisonedrag(q, M); };
}

/// Greedy documents from a fixed policy snapshot.
inline DocumentSource policy_source(const attack::RlbfTrainer& trainer, attack::PolicyParams params) {
    auto shared = std::make_shared<const attack::PolicyParams>(std::move(params));
    return [&trainer, shared](const QueryCase& q) { return trainer.greedy_documents(*shared, q); };
}

struct CellSetup {
    std::string label;
    AttackerKind attacker = AttackerKind::riprag;
    RagConfig rag;
    std::size_t M = 1;
    attack::MatchMode match_mode = attack::MatchMode::contains;
    std::size_t jobs = 1;
};

/// Injects each query's documents, asks once and scores the answer.
/// Consumes exactly one black-box call per evaluation query.
inline AsrCell measure_asr(BlackBoxEnvironment& env, const CellSetup& setup, const DocumentSource& source,
                           std::span<const QueryCase> eval) {
    if (eval.empty()) throw ConfigError("measure_asr: no evaluation queries");
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<attack::AttackOutcome> outcomes(eval.size());
    attack::parallel_for(eval.size(), setup.jobs, [&](std::size_t i) {
        outcomes[i] = attack::attack_once(env, eval[i], source(eval[i]), setup.match_mode);
    });
    AsrCell c;
    c.label = setup.label.empty() ? std::string(to_string(setup.attacker)) : setup.label;
    c.attacker = setup.attacker;
    c.retriever_mode = setup.rag.retriever_mode;
    c.defense = setup.rag.defense;
    c.M = setup.M;
    c.n_eval = eval.size();
    for (std::size_t i = 0; i < eval.size(); ++i) {
        c.successes += static_cast<std::size_t>(outcomes[i].success);
        if (outcomes[i].transport_failed) c.failed_qids.push_back(eval[i].qid);
    }
    c.asr = static_cast<double>(c.successes) / static_cast<double>(c.n_eval);
    c.blackbox_calls = eval.size();
    c.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return c;
}

/// Builds a fresh black-box target for each run.
using EnvFactory = std::function<std::unique_ptr<BlackBoxEnvironment>()>;

/// Target with the simulated generator over `corpus`, answering from the
/// candidate sets of `queries`.
inline std::unique_ptr<TargetSystem> make_simulated_target(const RagConfig& rag, const CorpusSnapshot& corpus,
                                                           std::span<const QueryCase> queries) {
    auto cfg = rag;
    cfg.generator_mode = GeneratorMode::simulated;
    return std::make_unique<TargetSystem>(cfg, corpus, Generator::make_simulated(SimulatedOracle::from_queries(queries)));
}

/// Everything a training run needs besides the config.
struct TrainingSetup {
    EnvFactory env;
    const QuerySplit* split = nullptr;
    const attack::Vocab* vocab = nullptr;
    const CorpusStats* reference_stats = nullptr;
};

struct TrainedAttacker {
    attack::TrainResult result;
    AsrCell cell;
};

/// Trains one configuration and measures its greedy policy on the eval split.
/// The cell's black-box calls include the training budget.
inline TrainedAttacker train_and_measure(const TrainingSetup& setup, const attack::BrpoConfig& cfg, const RagConfig& rag,
                                         std::string label) {
    const auto t0 = std::chrono::steady_clock::now();
    auto env = setup.env();
    attack::RlbfTrainer trainer(cfg, *env, *setup.vocab, *setup.reference_stats);
    TrainedAttacker out{{trainer.initial_state(), {}}, {}};
    out.result.metrics = trainer.train(out.result.state, setup.split->train, setup.split->eval);
    auto eval_env = setup.env();
    CellSetup cs{std::move(label), AttackerKind::riprag, rag, cfg.M, cfg.match_mode, cfg.jobs};
    out.cell = measure_asr(*eval_env, cs, policy_source(trainer, out.result.state.params), setup.split->eval);
    out.cell.blackbox_calls += out.result.state.blackbox_calls;
    out.cell.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

/// The five ablation configurations, in report order.
struct AblationArm {
    std::string label;
    attack::BrpoConfig cfg;
};

inline constexpr double kDefaultAblationKl = 0.1;

inline std::vector<AblationArm> ablation_arms(const attack::BrpoConfig& base) {
    std::vector<AblationArm> arms;
    arms.push_back({"full", base});
    auto kl = base;
    if (kl.kl_coeff <= 0.0) kl.kl_coeff = kDefaultAblationKl;
    arms.push_back({"ref-model", kl});
    auto group = base;
    group.normalization_scope = attack::NormalizationScope::group;
    arms.push_back({"no-brpo", group});
    auto no_sim = base;
    no_sim.toggles.use_sim = false;
    arms.push_back({"no-sim", no_sim});
    auto no_suc = base;
    no_suc.toggles.use_suc = false;
    arms.push_back({"no-suc", no_suc});
    return arms;
}

inline std::vector<CurveSeries> curves_of(const std::string& label, std::span<const attack::EpochMetrics> metrics) {
    CurveSeries train{label + " train_asr", {}};
    CurveSeries eval{label + " eval_asr", {}};
    for (const auto& m : metrics) {
        train.points.push_back({m.epoch, m.train_asr});
        if (m.eval_asr) eval.points.push_back({m.epoch, *m.eval_asr});
    }
    std::vector<CurveSeries> out{std::move(train)};
    if (!eval.points.empty()) out.push_back(std::move(eval));
    return out;
}

/// Runs all ablation arms with the shared seed and collects one report.
inline AsrReport run_ablation(const TrainingSetup& setup, const attack::BrpoConfig& base, const RagConfig& rag,
                              std::uint64_t seed, const std::function<void(const AsrCell&)>& on_cell = {}) {
    AsrReport report;
    report.seed = seed;
    for (auto& arm : ablation_arms(base)) {
        arm.cfg.seed = seed;
        auto run = train_and_measure(setup, arm.cfg, rag, arm.label);
        for (auto& c : curves_of(arm.label, run.result.metrics)) report.curves.push_back(std::move(c));
        if (on_cell) on_cell(run.cell);
        report.cells.push_back(std::move(run.cell));
    }
    return report;
}

} // namespace rpl::evalkit
