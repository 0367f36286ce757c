#pragma once

// Reinforcement learning from black-box feedback. This header depends on the
// target only through blackbox.hpp.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <future>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "../blackbox.hpp"
#include "../corpus.hpp"
#include "../error.hpp"
#include "../random.hpp"
#include "baseline.hpp"
#include "brpo.hpp"
#include "policy.hpp"
#include "rewards.hpp"
#include "vocab.hpp"

namespace rpl::attack {

struct EpochMetrics {
    std::size_t epoch = 0;
    double mean_reward = 0.0;
    double mean_r_sim = 0.0;
    double mean_r_suc = 0.0;
    double train_asr = 0.0;
    std::optional<double> eval_asr;
    std::uint64_t blackbox_calls = 0; // cumulative, training and evaluation
    double loss = 0.0;
    std::size_t dropped_queries = 0;
};

struct TrainerState {
    PolicyParams params;
    AdamState adam;
    std::uint64_t epochs_completed = 0;
    std::optional<PolicyParams> reference; // frozen initial policy for the KL ablation
    std::uint64_t blackbox_calls = 0;
};

/// Outcome of injecting one query's documents and asking once.
struct AttackOutcome {
    bool transport_failed = false;
    int success = 0;
    Answer answer;
};

inline AttackOutcome attack_once(BlackBoxEnvironment& env, const QueryCase& q, const std::vector<std::string>& texts,
                                 MatchMode mode) {
    AttackOutcome out;
    const auto poison = make_poison(q.qid, texts);
    try {
        env.with_injection(poison, [&](ChatChannel& chat) { out.answer = chat.ask(q.question); });
        out.success = attack_reward(out.answer, q.target_answer, mode);
    } catch (const TransportError&) {
        out.transport_failed = true;
        out.success = 0;
    }
    return out;
}

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads. Results are written
/// by index, so output order never depends on scheduling.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::future<void>> workers;
    for (std::size_t w = 0; w < std::min(jobs, n); ++w) {
        workers.push_back(std::async(std::launch::async, [&] {
            for (std::size_t i = next++; i < n; i = next++) fn(i);
        }));
    }
    for (auto& f : workers) f.get();
}

class RlbfTrainer {
public:
    RlbfTrainer(BrpoConfig cfg, BlackBoxEnvironment& env, const Vocab& vocab, const CorpusStats& reference_stats)
        : cfg_(std::move(cfg)), env_(env), vocab_(vocab), ref_stats_(reference_stats) {
        cfg_.validate();
    }

    const BrpoConfig& config() const { return cfg_; }

    TrainerState initial_state() const {
        TrainerState s;
        const auto seed = derive_seed(cfg_.seed, {0x1417});
        s.params = cfg_.init == PolicyInit::copy
                       ? PolicyParams::copy_prior(vocab_.size(), cfg_.hidden, seed, cfg_.copy_gain)
                       : PolicyParams::random(vocab_.size(), cfg_.hidden, seed, cfg_.init_output_scale);
        s.adam = AdamState::for_params(s.params);
        if (cfg_.kl_coeff > 0.0) s.reference = s.params;
        return s;
    }

    std::vector<TokenId> prompt_for(const QueryCase& q) const {
        return make_prompt(vocab_, q.question, q.target_answer, cfg_.prompt_target);
    }

    /// Samples the M documents of one query with the current policy.
    std::vector<RolloutRecord> rollout(const PolicyParams& params, const QueryCase& q, std::uint64_t epoch,
                                       std::size_t slot) const {
        std::vector<RolloutRecord> out;
        const auto prompt = prompt_for(q);
        for (std::size_t j = 1; j <= cfg_.M; ++j) {
            RolloutRecord r;
            r.qid = q.qid;
            r.j = j;
            r.prompt = prompt;
            r.tokens = policy_sample(params, prompt, cfg_.max_len, cfg_.temperature,
                                     derive_seed(cfg_.seed, {epoch, slot, j}));
            r.old_logprobs = policy_forward(params, prompt, r.tokens);
            r.r_sim = similarity_reward(cfg_.similarity(), q.question, vocab_.decode(r.tokens), q.target_answer,
                                        ref_stats_);
            out.push_back(std::move(r));
        }
        return out;
    }

    /// Greedy documents for evaluation.
    std::vector<std::string> greedy_documents(const PolicyParams& params, const QueryCase& q) const {
        const auto tokens = policy_sample(params, prompt_for(q), cfg_.max_len, 0.0, 0);
        return std::vector<std::string>(cfg_.M, vocab_.decode(tokens));
    }

    /// Fraction of `queries` attacked successfully with greedy documents.
    double evaluate(const PolicyParams& params, std::span<const QueryCase> queries, std::uint64_t& calls) const {
        if (queries.empty()) return 0.0;
        std::vector<int> success(queries.size(), 0);
        parallel_for(queries.size(), cfg_.jobs, [&](std::size_t i) {
            success[i] = attack_once(env_, queries[i], greedy_documents(params, queries[i]), cfg_.match_mode).success;
        });
        calls += queries.size();
        return static_cast<double>(std::accumulate(success.begin(), success.end(), 0)) /
               static_cast<double>(queries.size());
    }

    EpochMetrics run_epoch(TrainerState& st, std::span<const QueryCase> train, std::span<const QueryCase> eval) {
        if (train.empty()) throw ConfigError("rlbf_train: empty training split");
        const std::uint64_t epoch = st.epochs_completed + 1;
        EpochMetrics m;
        m.epoch = epoch;

        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(cfg_.seed, {epoch, 0xBA7C}));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        order.resize(std::min(cfg_.batch_queries, order.size()));

        std::vector<std::vector<RolloutRecord>> per_query(order.size());
        std::vector<char> failed(order.size(), 0);
        const PolicyParams& old_policy = st.params;
        parallel_for(order.size(), cfg_.jobs, [&](std::size_t b) {
            const auto& q = train[order[b]];
            auto recs = rollout(old_policy, q, epoch, b);
            std::vector<std::string> texts;
            for (const auto& r : recs) texts.push_back(vocab_.decode(r.tokens));
            const auto outcome = attack_once(env_, q, texts, cfg_.match_mode);
            if (outcome.transport_failed) {
                failed[b] = 1;
                return;
            }
            for (auto& r : recs) {
                r.r_suc = outcome.success;
                r.reward = composite_reward(cfg_.lambda, cfg_.toggles, r.r_suc, r.r_sim);
            }
            per_query[b] = std::move(recs);
        });
        st.blackbox_calls += order.size();

        std::vector<RolloutRecord> batch;
        std::size_t successes = 0;
        for (std::size_t b = 0; b < order.size(); ++b) {
            if (failed[b]) {
                ++m.dropped_queries;
                continue;
            }
            successes += per_query[b].front().r_suc;
            for (auto& r : per_query[b]) batch.push_back(std::move(r));
        }
        const std::size_t answered = order.size() - m.dropped_queries;
        m.train_asr = answered ? static_cast<double>(successes) / static_cast<double>(answered) : 0.0;
        for (const auto& r : batch) {
            m.mean_reward += r.reward;
            m.mean_r_sim += r.r_sim;
            m.mean_r_suc += r.r_suc;
        }
        if (!batch.empty()) {
            const double n = static_cast<double>(batch.size());
            m.mean_reward /= n;
            m.mean_r_sim /= n;
            m.mean_r_suc /= n;
        }

        if (!batch.empty()) {
            compute_advantages(cfg_.normalization_scope, batch);
            const AdamConfig adam{cfg_.learning_rate, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps};
            const LossOptions opt{cfg_.epsilon, cfg_.kl_coeff, true};
            for (std::size_t k = 0; k < cfg_.inner_epochs; ++k) {
                auto lg = brpo_loss_and_grad(st.params, batch, opt, st.reference ? &*st.reference : nullptr);
                m.loss += lg.loss / static_cast<double>(cfg_.inner_epochs);
                optimizer_step(st.adam, st.params, lg.grad, adam);
            }
        }
        st.epochs_completed = epoch;

        const bool final_epoch = epoch >= cfg_.epochs;
        const bool scheduled = cfg_.eval_interval > 0 && epoch % cfg_.eval_interval == 0;
        if (!eval.empty() && (final_epoch || scheduled)) m.eval_asr = evaluate(st.params, eval, st.blackbox_calls);
        m.blackbox_calls = st.blackbox_calls;
        return m;
    }

    /// Trains until `cfg.epochs` epochs have completed in total.
    std::vector<EpochMetrics> train(TrainerState& st, std::span<const QueryCase> train_split,
                                    std::span<const QueryCase> eval_split,
                                    const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
        std::vector<EpochMetrics> out;
        while (st.epochs_completed < cfg_.epochs) {
            out.push_back(run_epoch(st, train_split, eval_split));
            if (on_epoch) on_epoch(out.back());
        }
        return out;
    }

private:
    BrpoConfig cfg_;
    BlackBoxEnvironment& env_;
    const Vocab& vocab_;
    const CorpusStats& ref_stats_;
};

struct TrainResult {
    TrainerState state;
    std::vector<EpochMetrics> metrics;
};

inline TrainResult rlbf_train(const BrpoConfig& cfg, BlackBoxEnvironment& env, std::span<const QueryCase> train_split,
                              std::span<const QueryCase> eval_split, const Vocab& vocab,
                              const CorpusStats& reference_stats) {
    for (const auto& a : train_split) {
        for (const auto& b : eval_split) {
            if (a.qid == b.qid) throw ConfigError("train and eval splits share qid " + a.qid);
        }
    }
    RlbfTrainer trainer(cfg, env, vocab, reference_stats);
    TrainResult res{trainer.initial_state(), {}};
    res.metrics = trainer.train(res.state, train_split, eval_split);
    return res;
}

} // namespace rpl::attack
