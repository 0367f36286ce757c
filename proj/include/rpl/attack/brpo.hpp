#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "../error.hpp"
#include "policy.hpp"
#include "rewards.hpp"

namespace rpl::attack {

enum class NormalizationScope { batch, group };

inline std::string_view to_string(NormalizationScope s) { return s == NormalizationScope::batch ? "batch" : "group"; }

inline NormalizationScope parse_scope(std::string_view s) {
    if (s == "batch") return NormalizationScope::batch;
    if (s == "group") return NormalizationScope::group;
    throw ConfigError("unknown normalization scope: " + std::string(s));
}

enum class PolicyInit { random, copy };

inline std::string_view to_string(PolicyInit i) { return i == PolicyInit::random ? "random" : "copy"; }

inline PolicyInit parse_policy_init(std::string_view s) {
    if (s == "random") return PolicyInit::random;
    if (s == "copy") return PolicyInit::copy;
    throw ConfigError("unknown policy init: " + std::string(s));
}

struct BrpoConfig {
    double epsilon = 0.2;
    double lambda = 0.7;
    double alpha = 5.0;
    std::size_t M = 1;
    std::size_t batch_queries = 16;
    std::size_t inner_epochs = 2;
    std::size_t max_len = 64;
    double temperature = 1.0;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t epochs = 50;
    std::uint64_t seed = 0;
    NormalizationScope normalization_scope = NormalizationScope::batch;
    double kl_coeff = 0.0;
    RewardToggles toggles;
    SimVariant sim_variant = SimVariant::gated_min;
    MatchMode match_mode = MatchMode::contains;
    std::size_t vocab_size = 2048;
    std::size_t hidden = 64;
    bool prompt_target = true; // condition the policy on the target answer
    PolicyInit init = PolicyInit::random;
    double init_output_scale = 0.1; // random init
    double copy_gain = 10.0;        // copy init
    std::size_t eval_interval = 0; // 0: evaluate after the final epoch only
    std::size_t jobs = 1;

    void validate() const {
        if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ConfigError("brpo.epsilon must be in [0, 1)");
        if (!(lambda > 0.0 && lambda < 1.0)) throw ConfigError("brpo.lambda must be in (0, 1)");
        if (!(alpha > 0.0)) throw ConfigError("brpo.alpha must be > 0");
        if (M < 1) throw ConfigError("brpo.M must be >= 1");
        if (batch_queries < 1) throw ConfigError("brpo.batch_queries must be >= 1");
        if (max_len < 1) throw ConfigError("brpo.max_len must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("brpo.learning_rate must be > 0");
        if (kl_coeff < 0.0) throw ConfigError("brpo.kl_coeff must be >= 0");
        if (vocab_size < 8) throw ConfigError("brpo.vocab_size must be >= 8");
        if (hidden < 1) throw ConfigError("brpo.hidden must be >= 1");
        if (init == PolicyInit::copy && hidden < 2) throw ConfigError("brpo.init = copy needs brpo.hidden >= 2");
        if (jobs < 1) throw ConfigError("jobs must be >= 1");
    }

    SimilarityConfig similarity() const { return {alpha, sim_variant}; }
};

/// One sampled poisoned document together with everything the update needs.
struct RolloutRecord {
    std::string qid;
    std::size_t j = 1;
    std::vector<TokenId> prompt;
    std::vector<TokenId> tokens;
    std::vector<double> old_logprobs;
    double r_sim = 0.0;
    int r_suc = 0;
    double reward = 0.0;
    double advantage = 0.0;
};

inline constexpr double kMinStd = 1e-8;

/// Standardizes rewards over the whole batch (BRPO) or per query group
/// (GRPO). The advantage is shared by every token of a record. A scope whose
/// population standard deviation is below 1e-8 gets all-zero advantages.
inline void compute_advantages(NormalizationScope scope, std::span<RolloutRecord> records) {
    if (records.empty()) return;
    const auto normalize = [](std::span<RolloutRecord*> group) {
        double mean = 0.0;
        for (auto* r : group) mean += r->reward;
        mean /= static_cast<double>(group.size());
        double var = 0.0;
        for (auto* r : group) var += (r->reward - mean) * (r->reward - mean);
        const double sd = std::sqrt(var / static_cast<double>(group.size()));
        for (auto* r : group) r->advantage = sd < kMinStd ? 0.0 : (r->reward - mean) / sd;
    };
    if (scope == NormalizationScope::batch) {
        std::vector<RolloutRecord*> all;
        for (auto& r : records) all.push_back(&r);
        normalize(all);
        return;
    }
    std::map<std::string, std::vector<RolloutRecord*>> groups;
    for (auto& r : records) groups[r.qid].push_back(&r);
    for (auto& [_, g] : groups) normalize(g);
}

struct LossOptions {
    double epsilon = 0.2;
    double kl_coeff = 0.0;
    bool clip = true;
};

struct LossAndGrad {
    double loss = 0.0;
    PolicyParams grad;
};

/// Clipped surrogate averaged per token, then per document, then per query:
///   L = -1/|Q| sum_i 1/M_i sum_j 1/|D_j| sum_t min(tau A, clip(tau, 1-eps, 1+eps) A)
/// plus kl_coeff times the k3 estimate of KL(pi_theta || pi_ref) under the
/// same weighting when a reference policy is given. M_i is the number of
/// records of query i present in the batch.
inline LossAndGrad brpo_loss_and_grad(const PolicyParams& params, std::span<const RolloutRecord> records,
                                      LossOptions opt, const PolicyParams* ref = nullptr) {
    LossAndGrad out{0.0, PolicyParams::zeros(params.vocab, params.hidden)};
    if (records.empty()) return out;
    std::map<std::string, std::size_t> group_size;
    for (const auto& r : records) ++group_size[r.qid];
    const double n_queries = static_cast<double>(group_size.size());
    const bool use_kl = opt.kl_coeff > 0.0 && ref != nullptr;
    for (const auto& rec : records) {
        if (rec.old_logprobs.size() != rec.tokens.size()) {
            throw ConfigError("rollout " + rec.qid + "/" + std::to_string(rec.j) + " is missing old log-probabilities");
        }
        if (rec.tokens.empty()) continue;
        const double w = 1.0 / (n_queries * static_cast<double>(group_size[rec.qid]) * static_cast<double>(rec.tokens.size()));
        const auto tr = policy_trace(params, rec.prompt, rec.tokens);
        std::vector<double> ref_lp;
        if (use_kl) ref_lp = policy_forward(*ref, rec.prompt, rec.tokens);
        std::vector<double> coeff(rec.tokens.size(), 0.0);
        const double A = rec.advantage;
        for (std::size_t t = 0; t < rec.tokens.size(); ++t) {
            const double ratio = std::exp(tr.logprobs[t] - rec.old_logprobs[t]);
            const double unclipped = ratio * A;
            const double clipped =
                opt.clip ? std::clamp(ratio, 1.0 - opt.epsilon, 1.0 + opt.epsilon) * A : unclipped;
            const double obj = std::min(unclipped, clipped);
            out.loss -= w * obj;
            // d(ratio * A) / d logprob = ratio * A; the clipped branch is flat.
            if (unclipped <= clipped) coeff[t] -= w * ratio * A;
            if (use_kl) {
                const double log_r = ref_lp[t] - tr.logprobs[t];
                const double r = std::exp(log_r);
                out.loss += opt.kl_coeff * w * (r - log_r - 1.0);
                coeff[t] += opt.kl_coeff * w * (1.0 - r);
            }
        }
        policy_backward(params, tr, coeff, out.grad);
    }
    return out;
}

/// Adam with bias correction.
struct AdamState {
    PolicyParams m;
    PolicyParams v;
    std::uint64_t step = 0;

    static AdamState for_params(const PolicyParams& p) {
        return {PolicyParams::zeros(p.vocab, p.hidden), PolicyParams::zeros(p.vocab, p.hidden), 0};
    }

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Applies one Adam update. A non-finite gradient aborts the step before any
/// state changes.
inline void optimizer_step(AdamState& state, PolicyParams& params, const PolicyParams& grad, const AdamConfig& cfg) {
    if (!state.m.same_shape(params) || !grad.same_shape(params)) throw ConfigError("optimizer_step: shape mismatch");
    if (!grad.all_finite()) throw Error("optimizer_step: non-finite gradient");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    auto ps = params.tensors();
    auto ms = state.m.tensors();
    auto vs = state.v.tensors();
    const auto gs = grad.tensors();
    for (std::size_t k = 0; k < ps.size(); ++k) {
        for (std::size_t i = 0; i < ps[k].size(); ++i) {
            const double g = gs[k][i];
            ms[k][i] = cfg.beta1 * ms[k][i] + (1.0 - cfg.beta1) * g;
            vs[k][i] = cfg.beta2 * vs[k][i] + (1.0 - cfg.beta2) * g * g;
            if (g == 0.0 && ms[k][i] == 0.0) continue;
            const double mhat = ms[k][i] / c1;
            const double vhat = vs[k][i] / c2;
            ps[k][i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

} // namespace rpl::attack
