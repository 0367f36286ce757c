// The attacker must compile and train against nothing but the black-box
// interface. This translation unit includes only attack headers.

#include <gtest/gtest.h>

#include <bit>
#include <unistd.h>

#include "rpl/attack/checkpoint.hpp"
#include "rpl/attack/rlbf.hpp"

#ifdef RPL_RAGSYS_INCLUDED
#error "attack headers must not pull in the target system"
#endif

using namespace rpl;
using namespace rpl::attack;

namespace {

// Answers with the target whenever any injected document mentions it.
class EchoTarget final : public BlackBoxEnvironment {
public:
    explicit EchoTarget(std::string target) : target_(std::move(target)) {}

    void with_injection(std::span<const Document> poison, const std::function<void(ChatChannel&)>& body) override {
        ++injections;
        Channel ch{*this, poison};
        body(ch);
    }

    int injections = 0;
    int asks = 0;

private:
    struct Channel final : ChatChannel {
        Channel(EchoTarget& t, std::span<const Document> p) : self(t), poison(p) {}
        Answer ask(std::string_view) override {
            ++self.asks;
            for (const auto& d : poison) {
                if (normalize_answer(d.text).find(normalize_answer(self.target_)) != std::string::npos) {
                    return Answer::of(self.target_);
                }
            }
            return Answer::abstain();
        }
        EchoTarget& self;
        std::span<const Document> poison;
    };

    std::string target_;
};

// Fails every request.
class DeadTarget final : public BlackBoxEnvironment {
public:
    void with_injection(std::span<const Document>, const std::function<void(ChatChannel&)>&) override {
        throw TransportError("unreachable");
    }
};

struct Fixture {
    std::vector<QueryCase> train, eval;
    CorpusSnapshot ref;
    Vocab vocab;
    BrpoConfig cfg;

    Fixture() {
        for (int i = 0; i < 4; ++i) {
            train.push_back({"t" + std::to_string(i), "where is lumo", "Kell", "Zorp", {}, {}});
        }
        eval.push_back({"e0", "where is lumo", "Kell", "Zorp", {}, {}});
        ref = CorpusSnapshot({{"d1", "lumo is in kell", Origin::clean}, {"d2", "zorp zorp lumo", Origin::clean}});
        vocab = build_vocab(ref, train, 16);
        cfg.hidden = 4;
        cfg.max_len = 4;
        cfg.batch_queries = 4;
        cfg.epochs = 2;
        cfg.vocab_size = vocab.size();
        cfg.seed = 3;
    }
};

} // namespace

TEST(AttackInterface, TrainsAgainstAnyBlackBox) {
    Fixture f;
    EchoTarget env("Zorp");
    const auto res = rlbf_train(f.cfg, env, f.train, f.eval, f.vocab, f.ref.stats());
    ASSERT_EQ(res.metrics.size(), 2u);
    EXPECT_EQ(env.asks, 2 * 4 + 1);
    EXPECT_EQ(res.state.blackbox_calls, 9u);
    ASSERT_TRUE(res.metrics.back().eval_asr.has_value());
    for (const auto& m : res.metrics) {
        EXPECT_GE(m.train_asr, 0.0);
        EXPECT_LE(m.train_asr, 1.0);
    }
}

TEST(AttackInterface, TransportFailuresDropQueries) {
    Fixture f;
    DeadTarget env;
    RlbfTrainer trainer(f.cfg, env, f.vocab, f.ref.stats());
    auto st = trainer.initial_state();
    const auto before = st.params;
    const auto m = trainer.run_epoch(st, f.train, {});
    EXPECT_EQ(m.dropped_queries, 4u);
    EXPECT_EQ(st.params, before);
}

TEST(AttackInterface, CheckpointReloadReproducesForward) {
    Fixture f;
    EchoTarget env("Zorp");
    auto res = rlbf_train(f.cfg, env, f.train, f.eval, f.vocab, f.ref.stats());
    rpl::attack::Checkpoint ck{res.state.params, res.state.adam, res.state.epochs_completed, res.state.blackbox_calls,
                               f.vocab};
    const auto path = std::filesystem::temp_directory_path() / ("rpl_iface_" + std::to_string(::getpid()) + ".ckpt");
    ck.save(path);
    const auto back = Checkpoint::load(path);
    std::filesystem::remove(path);
    const auto prompt = make_prompt(f.vocab, "where is lumo", "Zorp");
    const std::vector<TokenId> out{3, 4, kEos};
    const auto a = policy_forward(res.state.params, prompt, out);
    const auto b = policy_forward(back.params, prompt, out);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(std::bit_cast<std::uint64_t>(a[i]), std::bit_cast<std::uint64_t>(b[i]));
}
