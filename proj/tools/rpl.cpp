// rpl: command-line driver for the poisoning lab.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 transport error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rpl/attack/checkpoint.hpp"
#include "rpl/config.hpp"
#include "rpl/evalkit/report.hpp"
#include "rpl/evalkit/synthetic.hpp"
#include "rpl/evalkit/target.hpp"

namespace fs = std::filesystem;
using namespace rpl;
using namespace rpl::evalkit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitTransport = 3;
constexpr int kExitOther = 1;

struct Common {
    std::string config_file;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
    std::string corpus;
    std::string queries;
    std::string out;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config_file, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--set", c.sets, "override one config key, e.g. --set brpo.epochs=20");
    app->add_option("--seed", c.seed, "experiment seed");
    app->add_option("--jobs", c.jobs, "worker threads");
    app->add_option("--corpus", c.corpus, "documents JSONL");
    app->add_option("--queries", c.queries, "queries JSONL");
    app->add_option("--out", c.out, "output directory");
}

ExperimentSpec resolve(const Common& c) {
    ExperimentSpec spec;
    if (!c.config_file.empty()) config::apply_file(spec, c.config_file);
    config::apply_overrides(spec, c.sets);
    if (c.seed) config::set(spec, "experiment.seed", std::to_string(*c.seed));
    if (c.jobs) config::set(spec, "jobs", std::to_string(*c.jobs));
    if (!c.corpus.empty()) spec.corpus = c.corpus;
    if (!c.queries.empty()) spec.queries = c.queries;
    if (!c.out.empty()) spec.output_dir = c.out;
    spec.validate();
    return spec;
}

void require_inputs(const ExperimentSpec& spec) {
    if (spec.corpus.empty()) throw ConfigError("no corpus given (--corpus or experiment.corpus)");
    if (spec.queries.empty()) throw ConfigError("no queries given (--queries or experiment.queries)");
    for (const auto& p : {spec.corpus, spec.queries}) {
        if (!fs::exists(p)) throw ConfigError("file not found: " + p.string());
    }
}

/// Inputs shared by training and evaluation commands.
struct Workspace {
    ExperimentSpec spec;
    CorpusSnapshot corpus;
    std::vector<QueryCase> queries;
    QuerySplit split;

    explicit Workspace(ExperimentSpec s) : spec(std::move(s)) {
        require_inputs(spec);
        corpus = load_corpus(spec.corpus);
        queries = load_queries(spec.queries);
        split = split_queries(queries, spec.split_ratio);
    }

    EnvFactory env_factory(const RagConfig& rag) const {
        return [this, rag] { return std::unique_ptr<BlackBoxEnvironment>(make_target(rag, corpus, queries)); };
    }
};

std::set<ReportFormat> parse_formats(const std::vector<std::string>& names) {
    std::set<ReportFormat> out;
    for (const auto& n : names) out.insert(parse_report_format(n));
    return out;
}

void print_cell(const AsrCell& c) {
    std::printf("%-22s %-8s %-14s M=%zu  asr %.3f (%zu/%zu)  calls %llu%s\n", c.label.c_str(),
                std::string(to_string(c.retriever_mode)).c_str(), std::string(to_string(c.defense)).c_str(), c.M, c.asr,
                c.successes, c.n_eval, static_cast<unsigned long long>(c.blackbox_calls),
                c.failed_qids.empty() ? "" : "  (transport failures)");
    std::fflush(stdout);
}

void check_transport(const AsrCell& c) {
    if (c.n_eval > 0 && c.failed_qids.size() == c.n_eval) {
        throw TransportError("every evaluation query failed to reach the generator");
    }
}

void print_epoch(const attack::EpochMetrics& m) {
    std::printf("epoch %3zu  reward %.4f  r_sim %.4f  r_suc %.4f  train_asr %.3f", m.epoch, m.mean_reward, m.mean_r_sim,
                m.mean_r_suc, m.train_asr);
    if (m.eval_asr) std::printf("  eval_asr %.3f", *m.eval_asr);
    std::printf("  calls %llu\n", static_cast<unsigned long long>(m.blackbox_calls));
    std::fflush(stdout);
}

// ---------------------------------------------------------------- commands

int cmd_gen(std::size_t n_docs, std::size_t n_queries, std::uint64_t seed, const std::string& out) {
    const auto bench = gen_synthetic_benchmark(n_docs, n_queries, seed);
    fs::create_directories(out);
    write_corpus(fs::path(out) / "docs.jsonl", bench.docs);
    write_queries(fs::path(out) / "queries.jsonl", bench.queries);
    std::printf("wrote %zu documents and %zu queries to %s\n", bench.docs.size(), bench.queries.size(), out.c_str());
    return kExitOk;
}

int cmd_index(const ExperimentSpec& spec) {
    if (spec.corpus.empty()) throw ConfigError("no corpus given (--corpus or experiment.corpus)");
    const auto corpus = load_corpus(spec.corpus);
    const auto stack = RetrievalStack::build(corpus, spec.rag);
    const auto dir = spec.output_dir / "index";
    fs::create_directories(dir);
    stack.bm25.save(dir / "bm25.idx");
    stack.dense_a.save(dir / "dense_a.ivf");
    if (stack.dense_b) stack.dense_b->save(dir / "dense_b.ivf");
    std::printf("indexed %zu documents into %s\n", corpus.size(), dir.string().c_str());
    return kExitOk;
}

attack::BrpoConfig apply_ablation(attack::BrpoConfig cfg, const std::string& name) {
    if (name.empty()) return cfg;
    for (auto& arm : ablation_arms(cfg)) {
        if (arm.label == name) return arm.cfg;
    }
    throw ConfigError("unknown ablation: " + name);
}

int cmd_attack_train(const ExperimentSpec& spec_in, const std::string& resume, const std::string& ablate) {
    Workspace ws(spec_in);
    auto cfg = apply_ablation(ws.spec.brpo, ablate);
    cfg.seed = ws.spec.seed;
    const auto out = ws.spec.output_dir;
    fs::create_directories(out);

    std::optional<attack::Checkpoint> restored;
    if (!resume.empty()) {
        if (!fs::exists(resume)) throw ConfigError("checkpoint not found: " + resume);
        restored = attack::Checkpoint::load(resume);
    }
    const auto vocab = restored ? restored->vocab : attack::build_vocab(ws.corpus, ws.queries, cfg.vocab_size);
    cfg.vocab_size = vocab.size();

    auto env = make_target(ws.spec.rag, ws.corpus, ws.queries);
    attack::RlbfTrainer trainer(cfg, *env, vocab, ws.corpus.stats());
    auto st = trainer.initial_state();
    if (restored) {
        if (restored->params.hidden != cfg.hidden) throw ConfigError("checkpoint hidden size differs from brpo.hidden");
        st.params = restored->params;
        st.adam = restored->optimizer ? *restored->optimizer : attack::AdamState::for_params(st.params);
        st.epochs_completed = restored->epochs_completed;
        st.blackbox_calls = restored->blackbox_calls;
    }
    std::printf("training %zu epochs on %zu queries (eval %zu), vocab %zu, from epoch %llu\n", cfg.epochs,
                ws.split.train.size(), ws.split.eval.size(), vocab.size(),
                static_cast<unsigned long long>(st.epochs_completed));

    MetricsWriter metrics(out / "metrics.jsonl", restored.has_value());
    const auto batch = std::min(cfg.batch_queries, ws.split.train.size());
    std::optional<attack::EpochMetrics> last;
    trainer.train(st, ws.split.train, ws.split.eval, [&](const attack::EpochMetrics& m) {
        print_epoch(m);
        metrics.write(m);
        last = m;
        if (m.dropped_queries == batch) throw TransportError("every query of epoch " + std::to_string(m.epoch) + " failed");
    });

    attack::Checkpoint ck{st.params, st.adam, st.epochs_completed, st.blackbox_calls, vocab};
    ck.save(out / "policy.ckpt");
    if (last) {
        std::printf("final train_asr %.3f eval_asr %s\n", last->train_asr,
                    last->eval_asr ? fmt_fixed(*last->eval_asr, 3).c_str() : "n/a");
    } else {
        std::printf("nothing to train: checkpoint already at %llu epochs\n",
                    static_cast<unsigned long long>(st.epochs_completed));
    }
    std::printf("checkpoint %s\n", (out / "policy.ckpt").string().c_str());
    return kExitOk;
}

// Greedy decoding never touches the environment the trainer holds.
class NoTarget final : public BlackBoxEnvironment {
public:
    void with_injection(std::span<const Document>, const std::function<void(ChatChannel&)>&) override {
        throw Error("no target attached");
    }
};

struct EvalArgs {
    std::string attacker = "riprag";
    std::string checkpoint;
    std::optional<std::string> defense;
    std::optional<std::string> retriever;
    std::optional<std::size_t> m;
    std::vector<std::string> formats{"json", "markdown", "svg"};
};

int cmd_eval(ExperimentSpec spec, const EvalArgs& a) {
    spec.attacker = parse_attacker(a.attacker);
    if (a.defense) spec.rag.defense = parse_defense(*a.defense);
    if (a.retriever) spec.rag.retriever_mode = parse_retriever_mode(*a.retriever);
    if (a.m) {
        if (*a.m < 1) throw ConfigError("--m must be >= 1");
        spec.brpo.M = *a.m;
    }
    spec.validate();
    const auto formats = parse_formats(a.formats);
    Workspace ws(spec);
    auto cfg = ws.spec.brpo;
    cfg.seed = ws.spec.seed;

    DocumentSource source;
    std::optional<attack::Vocab> vocab;
    std::optional<attack::RlbfTrainer> trainer;
    NoTarget no_target;
    attack::PolicyParams params;
    switch (ws.spec.attacker) {
    case AttackerKind::poisonedrag_baseline: source = baseline_source(cfg.M); break;
    case AttackerKind::riprag: {
        if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required for the riprag attacker");
        if (!fs::exists(a.checkpoint)) throw ConfigError("checkpoint not found: " + a.checkpoint);
        auto ck = attack::Checkpoint::load(a.checkpoint);
        vocab = std::move(ck.vocab);
        params = std::move(ck.params);
        cfg.hidden = params.hidden;
        break;
    }
    case AttackerKind::untrained_policy: vocab = attack::build_vocab(ws.corpus, ws.queries, cfg.vocab_size); break;
    }
    if (vocab) {
        cfg.vocab_size = vocab->size();
        trainer.emplace(cfg, no_target, *vocab, ws.corpus.stats());
        if (ws.spec.attacker == AttackerKind::untrained_policy) params = trainer->initial_state().params;
        source = policy_source(*trainer, params);
    }

    auto env = make_target(ws.spec.rag, ws.corpus, ws.queries);
    CellSetup setup{std::string(to_string(ws.spec.attacker)), ws.spec.attacker, ws.spec.rag, cfg.M, cfg.match_mode,
                    cfg.jobs};
    AsrReport report;
    report.seed = ws.spec.seed;
    report.cells.push_back(measure_asr(*env, setup, source, ws.split.eval));
    print_cell(report.cells.back());
    if (!a.checkpoint.empty()) {
        const auto metrics_path = fs::path(a.checkpoint).parent_path() / "metrics.jsonl";
        if (fs::exists(metrics_path)) {
            std::vector<attack::EpochMetrics> ms;
            std::ifstream in(metrics_path);
            for (std::string line; std::getline(in, line);) {
                if (line.empty()) continue;
                const auto j = nlohmann::json::parse(line);
                attack::EpochMetrics m;
                m.epoch = j.at("epoch").get<std::size_t>();
                m.train_asr = j.at("train_asr").get<double>();
                if (j.contains("eval_asr")) m.eval_asr = j.at("eval_asr").get<double>();
                ms.push_back(m);
            }
            report.curves = curves_of(report.cells.back().label, ms);
        }
    }
    emit_report(report, ws.spec.output_dir, formats);
    std::printf("report written to %s\n", ws.spec.output_dir.string().c_str());
    check_transport(report.cells.back());
    return kExitOk;
}

int cmd_ablate(const ExperimentSpec& spec, const std::vector<std::string>& format_names) {
    const auto formats = parse_formats(format_names);
    Workspace ws(spec);
    const auto vocab = attack::build_vocab(ws.corpus, ws.queries, ws.spec.brpo.vocab_size);
    auto cfg = ws.spec.brpo;
    cfg.vocab_size = vocab.size();
    const auto stats = ws.corpus.stats();
    TrainingSetup setup{ws.env_factory(ws.spec.rag), &ws.split, &vocab, &stats};
    const auto report = run_ablation(setup, cfg, ws.spec.rag, ws.spec.seed, [](const AsrCell& c) {
        print_cell(c);
        check_transport(c);
    });
    emit_report(report, ws.spec.output_dir, formats);
    std::printf("report written to %s\n", ws.spec.output_dir.string().c_str());
    return kExitOk;
}

int cmd_report(const std::string& in, const std::string& out, const std::vector<std::string>& format_names) {
    if (!fs::exists(fs::path(in) / "report.json")) throw ConfigError("no report.json in " + in);
    const auto report = load_report(in);
    emit_report(report, out.empty() ? fs::path(in) : fs::path(out), parse_formats(format_names));
    for (const auto& c : report.cells) print_cell(c);
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"rpl: retrieval poisoning lab"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    auto* gen = app.add_subcommand("gen", "generate the synthetic benchmark");
    std::size_t n_docs = 0, n_queries = 0;
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    gen->add_option("--docs", n_docs, "number of documents")->required();
    gen->add_option("--queries", n_queries, "number of queries")->required();
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output directory")->required();

    Common index_c, train_c, eval_c, ablate_c;
    auto* index = app.add_subcommand("index", "build and save retrieval indexes");
    add_common(index, index_c);

    auto* train = app.add_subcommand("attack-train", "train the poisoning policy");
    add_common(train, train_c);
    std::string resume, ablate;
    train->add_option("--resume", resume, "continue from a checkpoint");
    train->add_option("--ablate", ablate, "full | ref-model | no-brpo | no-sim | no-suc");

    auto* eval = app.add_subcommand("eval", "measure attack success rate");
    add_common(eval, eval_c);
    EvalArgs ea;
    eval->add_option("--attacker", ea.attacker, "riprag | baseline | untrained");
    eval->add_option("--checkpoint", ea.checkpoint, "policy checkpoint for riprag");
    eval->add_option("--defense", ea.defense, "none | rewrite_query | hyde | robustrag");
    eval->add_option("--retriever", ea.retriever, "naive | complex");
    eval->add_option("--m", ea.m, "poisoned documents per query");
    eval->add_option("--formats", ea.formats, "json markdown svg")->delimiter(',');

    auto* abl = app.add_subcommand("ablate", "run the five ablation configurations");
    add_common(abl, ablate_c);
    std::vector<std::string> ablate_formats{"json", "markdown", "svg"};
    abl->add_option("--formats", ablate_formats, "json markdown svg")->delimiter(',');

    auto* rep = app.add_subcommand("report", "re-render report files from report.json");
    std::string rep_in, rep_out;
    std::vector<std::string> rep_formats{"markdown", "svg"};
    rep->add_option("--in", rep_in, "directory holding report.json")->required();
    rep->add_option("--out", rep_out, "output directory (default: --in)");
    rep->add_option("--formats", rep_formats, "json markdown svg")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*gen) return cmd_gen(n_docs, n_queries, gen_seed, gen_out);
        if (*index) return cmd_index(resolve(index_c));
        if (*train) return cmd_attack_train(resolve(train_c), resume, ablate);
        if (*eval) return cmd_eval(resolve(eval_c), ea);
        if (*abl) return cmd_ablate(resolve(ablate_c), ablate_formats);
        if (*rep) return cmd_report(rep_in, rep_out, rep_formats);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const TransportError& e) {
        std::cerr << "transport error: " << e.what() << "\n";
        return kExitTransport;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitOther;
    }
    return kExitOther;
}
