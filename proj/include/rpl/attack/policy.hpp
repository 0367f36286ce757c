#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "../error.hpp"
#include "../random.hpp"
#include "vocab.hpp"

namespace rpl::attack {

/// Learnable tensors of the single-layer recurrent policy:
///   h_t      = tanh(W_x E[x_{t-1}] + W_h h_{t-1} + b_h),  h_0 = 0
///   logits_t = W_o^T h_t + b_o
/// All matrices are row-major; E is V x d, W_x and W_h are d x d, W_o is d x V.
struct PolicyParams {
    std::size_t vocab = 0;
    std::size_t hidden = 0;
    std::vector<double> E, W_x, W_h, b_h, W_o, b_o;

    static PolicyParams zeros(std::size_t vocab, std::size_t hidden) {
        if (vocab < kNumSpecials + 1 || hidden == 0) throw ConfigError("policy shape must have V > 3 and d > 0");
        PolicyParams p;
        p.vocab = vocab;
        p.hidden = hidden;
        p.E.assign(vocab * hidden, 0.0);
        p.W_x.assign(hidden * hidden, 0.0);
        p.W_h.assign(hidden * hidden, 0.0);
        p.b_h.assign(hidden, 0.0);
        p.W_o.assign(hidden * vocab, 0.0);
        p.b_o.assign(vocab, 0.0);
        return p;
    }

    /// Gaussian init: embeddings N(0, 1), recurrent and input weights scaled
    /// by 1/sqrt(d), output weights by `output_scale`/sqrt(d), zero biases.
    static PolicyParams random(std::size_t vocab, std::size_t hidden, std::uint64_t seed, double output_scale = 0.1) {
        auto p = zeros(vocab, hidden);
        Rng rng(seed);
        const double s = 1.0 / std::sqrt(static_cast<double>(hidden));
        for (auto& x : p.E) x = rng.normal();
        for (auto& x : p.W_x) x = rng.normal() * s;
        for (auto& x : p.W_h) x = rng.normal() * s * 0.5;
        for (auto& x : p.W_o) x = rng.normal() * s * output_scale;
        return p;
    }

    /// Copy-biased init. The state splits into two halves sharing one random
    /// embedding per token: a slow half that accumulates the prompt and feeds
    /// the readout positively, and a fast half that tracks the last few inputs
    /// and feeds it negatively, so sampling favors prompt tokens not just
    /// emitted. Needs d >= 2; a leftover odd unit stays zero.
    static PolicyParams copy_prior(std::size_t vocab, std::size_t hidden, std::uint64_t seed, double output_scale = 10.0) {
        if (hidden < 2) throw ConfigError("copy init needs hidden >= 2");
        auto p = zeros(vocab, hidden);
        const std::size_t d = hidden, h = hidden / 2, V = vocab;
        Rng rng(seed);
        for (std::size_t v = 0; v < V; ++v) {
            for (std::size_t k = 0; k < h; ++k) {
                const double x = rng.normal();
                p.E[v * d + k] = x;
                p.E[v * d + h + k] = x;
            }
        }
        for (std::size_t i = 0; i < h; ++i) {
            p.W_x[i * d + i] = 0.3;
            p.W_h[i * d + i] = 0.95;
            p.W_x[(h + i) * d + h + i] = 0.5;
            p.W_h[(h + i) * d + h + i] = 0.6;
        }
        const double g = output_scale / std::sqrt(static_cast<double>(h));
        for (std::size_t k = 0; k < h; ++k) {
            for (std::size_t v = kNumSpecials; v < V; ++v) {
                p.W_o[k * V + v] = g * p.E[v * d + k];
                p.W_o[(h + k) * V + v] = -g * p.E[v * d + k];
            }
        }
        p.b_o[kEos] = -2.0;
        p.b_o[kBos] = -10.0;
        p.b_o[kUnk] = -10.0;
        return p;
    }

    /// Tensors in declared field order: E, W_x, W_h, b_h, W_o, b_o.
    std::array<std::span<double>, 6> tensors() { return {E, W_x, W_h, b_h, W_o, b_o}; }
    std::array<std::span<const double>, 6> tensors() const { return {E, W_x, W_h, b_h, W_o, b_o}; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (auto t : tensors()) n += t.size();
        return n;
    }

    bool same_shape(const PolicyParams& o) const { return vocab == o.vocab && hidden == o.hidden; }

    bool all_finite() const {
        for (auto t : tensors()) {
            for (double x : t) {
                if (!std::isfinite(x)) return false;
            }
        }
        return true;
    }

    void fill(double v) {
        for (auto t : tensors()) std::fill(t.begin(), t.end(), v);
    }

    friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

/// Activations kept by the forward pass for backpropagation through time.
struct ForwardTrace {
    std::vector<TokenId> inputs;   // prompt followed by outputs
    std::size_t prompt_len = 0;
    std::vector<double> h;         // (inputs.size()) x d; row t holds h_t, row 0 is h_0 = 0
    std::vector<double> probs;     // outputs x V softmax at each output position
    std::vector<double> logprobs;  // log-probability of each realized output token
};

namespace detail {

inline void check_ids(std::span<const TokenId> ids, std::size_t vocab) {
    for (auto i : ids) {
        if (i >= vocab) throw ConfigError("token id " + std::to_string(i) + " out of vocab range");
    }
}

/// h_out = tanh(W_x E[x] + W_h h_prev + b_h)
inline void step_hidden(const PolicyParams& p, TokenId x, const double* h_prev, double* h_out) {
    const std::size_t d = p.hidden;
    const double* e = &p.E[static_cast<std::size_t>(x) * d];
    for (std::size_t r = 0; r < d; ++r) {
        double z = p.b_h[r];
        const double* wx = &p.W_x[r * d];
        const double* wh = &p.W_h[r * d];
        for (std::size_t c = 0; c < d; ++c) z += wx[c] * e[c] + wh[c] * h_prev[c];
        h_out[r] = std::tanh(z);
    }
}

inline void logits_of(const PolicyParams& p, const double* h, std::vector<double>& out) {
    const std::size_t V = p.vocab;
    out.assign(p.b_o.begin(), p.b_o.end());
    for (std::size_t k = 0; k < p.hidden; ++k) {
        const double hk = h[k];
        const double* w = &p.W_o[k * V];
        for (std::size_t v = 0; v < V; ++v) out[v] += w[v] * hk;
    }
}

/// In-place softmax; returns log-sum-exp of the input.
inline double softmax_inplace(std::vector<double>& x) {
    const double m = *std::max_element(x.begin(), x.end());
    double s = 0.0;
    for (auto& v : x) {
        v = std::exp(v - m);
        s += v;
    }
    for (auto& v : x) v /= s;
    return m + std::log(s);
}

} // namespace detail

inline ForwardTrace policy_trace(const PolicyParams& p, std::span<const TokenId> prompt, std::span<const TokenId> out) {
    if (prompt.empty()) throw ConfigError("policy prompt must contain at least BOS");
    detail::check_ids(prompt, p.vocab);
    detail::check_ids(out, p.vocab);
    ForwardTrace tr;
    tr.prompt_len = prompt.size();
    tr.inputs.assign(prompt.begin(), prompt.end());
    tr.inputs.insert(tr.inputs.end(), out.begin(), out.end());
    const std::size_t d = p.hidden;
    const std::size_t V = p.vocab;
    const std::size_t steps = tr.inputs.size();
    tr.h.assign(steps * d, 0.0);
    // h_t consumes x_{t-1}; output i sits at position t = prompt_len + i.
    for (std::size_t t = 1; t < steps; ++t) detail::step_hidden(p, tr.inputs[t - 1], &tr.h[(t - 1) * d], &tr.h[t * d]);
    tr.probs.resize(out.size() * V);
    tr.logprobs.resize(out.size());
    std::vector<double> logits;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::size_t t = tr.prompt_len + i;
        detail::logits_of(p, &tr.h[t * d], logits);
        const double realized = logits[out[i]];
        const double lse = detail::softmax_inplace(logits);
        tr.logprobs[i] = realized - lse;
        std::copy(logits.begin(), logits.end(), tr.probs.begin() + static_cast<std::ptrdiff_t>(i * V));
    }
    return tr;
}

/// Per-output-token log-probabilities under the policy.
inline std::vector<double> policy_forward(const PolicyParams& p, std::span<const TokenId> prompt,
                                          std::span<const TokenId> out) {
    return policy_trace(p, prompt, out).logprobs;
}

/// Accumulates sum_i coeff[i] * d logprob_i / d theta into `grad`.
inline void policy_backward(const PolicyParams& p, const ForwardTrace& tr, std::span<const double> coeff,
                            PolicyParams& grad) {
    const std::size_t d = p.hidden;
    const std::size_t V = p.vocab;
    const std::size_t n_out = tr.logprobs.size();
    if (coeff.size() != n_out) throw ConfigError("policy_backward: coefficient count mismatch");
    const std::size_t steps = tr.inputs.size();
    std::vector<double> dh(steps * d, 0.0);
    std::vector<double> dlogits(V);
    for (std::size_t i = 0; i < n_out; ++i) {
        if (coeff[i] == 0.0) continue;
        const std::size_t t = tr.prompt_len + i;
        const double* probs = &tr.probs[i * V];
        for (std::size_t v = 0; v < V; ++v) dlogits[v] = -coeff[i] * probs[v];
        dlogits[tr.inputs[t]] += coeff[i];
        const double* h = &tr.h[t * d];
        double* dht = &dh[t * d];
        for (std::size_t v = 0; v < V; ++v) grad.b_o[v] += dlogits[v];
        for (std::size_t k = 0; k < d; ++k) {
            double* gw = &grad.W_o[k * V];
            const double* w = &p.W_o[k * V];
            const double hk = h[k];
            double acc = 0.0;
            for (std::size_t v = 0; v < V; ++v) {
                gw[v] += hk * dlogits[v];
                acc += w[v] * dlogits[v];
            }
            dht[k] += acc;
        }
    }
    std::vector<double> dz(d);
    for (std::size_t t = steps - 1; t >= 1; --t) {
        const double* h = &tr.h[t * d];
        const double* hp = &tr.h[(t - 1) * d];
        const double* dht = &dh[t * d];
        bool any = false;
        for (std::size_t r = 0; r < d; ++r) {
            dz[r] = dht[r] * (1.0 - h[r] * h[r]);
            any = any || dz[r] != 0.0;
        }
        if (!any) continue;
        const std::size_t x = tr.inputs[t - 1];
        const double* e = &p.E[x * d];
        double* ge = &grad.E[x * d];
        double* dhp = &dh[(t - 1) * d];
        for (std::size_t r = 0; r < d; ++r) {
            const double g = dz[r];
            if (g == 0.0) continue;
            grad.b_h[r] += g;
            double* gwx = &grad.W_x[r * d];
            double* gwh = &grad.W_h[r * d];
            const double* wx = &p.W_x[r * d];
            const double* wh = &p.W_h[r * d];
            for (std::size_t c = 0; c < d; ++c) {
                gwx[c] += g * e[c];
                gwh[c] += g * hp[c];
                ge[c] += g * wx[c];
                dhp[c] += g * wh[c];
            }
        }
    }
}

/// Autoregressive sampling until EOS or `max_len` tokens. Temperature <= 0
/// selects greedy decoding (argmax, ties to the lowest id).
inline std::vector<TokenId> policy_sample(const PolicyParams& p, std::span<const TokenId> prompt, std::size_t max_len,
                                          double temperature, std::uint64_t seed) {
    if (max_len < 1) throw ConfigError("policy_sample: max length must be >= 1");
    if (prompt.empty()) throw ConfigError("policy prompt must contain at least BOS");
    detail::check_ids(prompt, p.vocab);
    const std::size_t d = p.hidden;
    Rng rng(seed);
    std::vector<double> h(d, 0.0), next(d);
    for (auto x : prompt) {
        detail::step_hidden(p, x, h.data(), next.data());
        h.swap(next);
    }
    std::vector<TokenId> out;
    std::vector<double> logits;
    while (out.size() < max_len) {
        detail::logits_of(p, h.data(), logits);
        TokenId tok = 0;
        if (temperature <= 0.0) {
            tok = static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        } else {
            for (auto& l : logits) l /= temperature;
            detail::softmax_inplace(logits);
            const double u = rng.uniform();
            double c = 0.0;
            tok = static_cast<TokenId>(logits.size() - 1);
            for (std::size_t v = 0; v < logits.size(); ++v) {
                c += logits[v];
                if (u < c) {
                    tok = static_cast<TokenId>(v);
                    break;
                }
            }
        }
        out.push_back(tok);
        if (tok == kEos) break;
        detail::step_hidden(p, tok, h.data(), next.data());
        h.swap(next);
    }
    return out;
}

/// BOS, then the question, then (optionally) the target answer.
inline std::vector<TokenId> make_prompt(const Vocab& vocab, std::string_view question, std::string_view target_answer,
                                        bool with_target = true) {
    std::vector<TokenId> out{kBos};
    for (auto t : vocab.encode(question)) out.push_back(t);
    if (with_target) {
        for (auto t : vocab.encode(target_answer)) out.push_back(t);
    }
    return out;
}

} // namespace rpl::attack
