#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "../binary_io.hpp"
#include "../error.hpp"
#include "brpo.hpp"
#include "policy.hpp"
#include "vocab.hpp"

namespace rpl::attack {

/// Policy checkpoint:
///   "RPLP", u32 version, u64 V, u64 d,
///   E, W_x, W_h, b_h, W_o, b_o as f64 (declared field order),
///   then a trailer: u64 epochs_completed, u64 blackbox_calls, u8 has_optimizer,
///   [u64 adam_step, m tensors, v tensors], u64 n_tokens, n_tokens x str
///   (vocabulary without specials, in id order).
/// All integers and reals are little-endian.
struct Checkpoint {
    PolicyParams params;
    std::optional<AdamState> optimizer;
    std::uint64_t epochs_completed = 0;
    std::uint64_t blackbox_calls = 0;
    Vocab vocab;

    static constexpr std::uint32_t kFormatVersion = 1;

    void save(const std::filesystem::path& path) const {
        io::Writer w;
        w.bytes("RPLP");
        w.u32(kFormatVersion);
        w.u64(params.vocab);
        w.u64(params.hidden);
        for (auto t : params.tensors()) w.f64s(t);
        w.u64(epochs_completed);
        w.u64(blackbox_calls);
        w.u8(optimizer ? 1 : 0);
        if (optimizer) {
            w.u64(optimizer->step);
            for (auto t : optimizer->m.tensors()) w.f64s(t);
            for (auto t : optimizer->v.tensors()) w.f64s(t);
        }
        const auto toks = vocab.tokens();
        w.u64(toks.size() - kNumSpecials);
        for (std::size_t i = kNumSpecials; i < toks.size(); ++i) w.str(toks[i]);
        w.save(path);
    }

    static Checkpoint load(const std::filesystem::path& path) {
        auto r = io::Reader::open(path);
        r.header("RPLP", kFormatVersion);
        Checkpoint c;
        const auto V = r.u64();
        const auto d = r.u64();
        c.params = PolicyParams::zeros(V, d);
        for (auto t : c.params.tensors()) r.f64s(t);
        c.epochs_completed = r.u64();
        c.blackbox_calls = r.u64();
        if (r.u8()) {
            AdamState s = AdamState::for_params(c.params);
            s.step = r.u64();
            for (auto t : s.m.tensors()) r.f64s(t);
            for (auto t : s.v.tensors()) r.f64s(t);
            c.optimizer = std::move(s);
        }
        const auto n = r.u64();
        std::vector<std::string> toks;
        for (std::uint64_t i = 0; i < n; ++i) toks.push_back(r.str());
        c.vocab = Vocab::from_tokens(std::move(toks));
        if (c.vocab.size() != V) throw ParseError("checkpoint vocabulary does not match V");
        if (!r.at_end()) throw ParseError("trailing bytes in " + path.string());
        return c;
    }
};

} // namespace rpl::attack
