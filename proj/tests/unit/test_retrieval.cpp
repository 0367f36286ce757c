#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "rpl/bm25.hpp"
#include "rpl/embedder.hpp"
#include "rpl/ivf_sq8.hpp"
#include "rpl/ranked_list.hpp"
#include "test_util.hpp"

using namespace rpl;

namespace {

CorpusSnapshot fruit_corpus() {
    return CorpusSnapshot({{"d1", "apple banana", Origin::clean},
                           {"d2", "apple apple cherry", Origin::clean},
                           {"d3", "durian", Origin::clean}});
}

std::vector<Term> terms(std::string_view s) { return tokenize(s); }

// Brute force over raw token lists: nothing shared with the index.
double oracle_bm25(const std::vector<std::vector<std::string>>& docs, const std::vector<std::string>& query,
                   std::size_t doc) {
    const double k1 = 1.2, b = 0.75;
    const double N = static_cast<double>(docs.size());
    double total = 0;
    for (const auto& d : docs) total += static_cast<double>(d.size());
    const double avgdl = total / N;
    std::set<std::string> uq(query.begin(), query.end());
    double s = 0;
    for (const auto& t : uq) {
        double df = 0;
        for (const auto& d : docs) df += std::find(d.begin(), d.end(), t) != d.end() ? 1 : 0;
        const double tf = static_cast<double>(std::count(docs[doc].begin(), docs[doc].end(), t));
        if (tf == 0) continue;
        const double idf = std::log(1.0 + (N - df + 0.5) / (df + 0.5));
        const double dl = static_cast<double>(docs[doc].size());
        s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl));
    }
    return s;
}

} // namespace

TEST(Bm25, HandEvaluatedScores) {
    const auto idx = Bm25Index::build(fruit_corpus());
    // idf = ln(1.6); d1 has length == avgdl so its term weight is exactly 1.
    EXPECT_NEAR(bm25_score(idx, terms("apple"), 0), std::log(1.6), 1e-12);
    EXPECT_NEAR(bm25_score(idx, terms("apple"), 0), 0.4700, 5e-5);
    EXPECT_NEAR(bm25_score(idx, terms("apple"), 1), 0.5666, 5e-5);
    EXPECT_NEAR(bm25_score(idx, terms("apple"), 1), std::log(1.6) * 4.4 / 3.65, 1e-12);
}

TEST(Bm25, NoOverlapAndEmptyQuery) {
    const auto idx = Bm25Index::build(fruit_corpus());
    EXPECT_EQ(bm25_score(idx, terms("durian"), 0), 0.0);
    EXPECT_EQ(bm25_score(idx, {}, 1), 0.0);
    EXPECT_TRUE(bm25_search(idx, {}, 3).empty());
}

TEST(Bm25, OutOfRangeDocThrows) {
    const auto idx = Bm25Index::build(fruit_corpus());
    EXPECT_THROW(bm25_score(idx, terms("apple"), 3), ConfigError);
}

TEST(Bm25, TopOneIsD2) {
    const auto idx = Bm25Index::build(fruit_corpus());
    const auto r = bm25_search(idx, terms("apple"), 1);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].id, "d2");
}

TEST(Bm25, LargeKReturnsOnlyPositive) {
    const auto idx = Bm25Index::build(fruit_corpus());
    EXPECT_EQ(bm25_search(idx, terms("apple"), 10).ids(), (std::vector<std::string>{"d2", "d1"}));
}

TEST(Bm25, TiesByAscendingId) {
    const CorpusSnapshot snap({{"b", "kiwi", Origin::clean}, {"a", "kiwi", Origin::clean}, {"c", "lime", Origin::clean}});
    const auto r = bm25_search(Bm25Index::build(snap), terms("kiwi"), 5);
    EXPECT_EQ(r.ids(), (std::vector<std::string>{"a", "b"}));
    EXPECT_TRUE(r.is_canonical());
}

TEST(Bm25, MatchesBruteForceOnRandomCorpora) {
    std::mt19937_64 rng(2024);
    for (int c = 0; c < 100; ++c) {
        const std::size_t n = 1 + rng() % 50;
        std::vector<Document> docs;
        std::vector<std::vector<std::string>> raw;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<std::string> words;
            const std::size_t len = rng() % 15;
            std::string text;
            for (std::size_t k = 0; k < len; ++k) {
                words.push_back("w" + std::to_string(rng() % 20));
                text += words.back() + " ";
            }
            raw.push_back(words);
            docs.push_back({"d" + std::to_string(i), text, Origin::clean});
        }
        const auto idx = Bm25Index::build(CorpusSnapshot(std::move(docs)));
        std::vector<std::string> q;
        for (std::size_t k = 0, len = rng() % 9; k < len; ++k) q.push_back("w" + std::to_string(rng() % 25));
        for (std::size_t d = 0; d < n; ++d) EXPECT_NEAR(idx.score(q, d), oracle_bm25(raw, q, d), 1e-9);
        const auto hits = idx.search(q, n);
        for (const auto& h : hits) EXPECT_EQ(h.score, idx.score(q, *idx.find(h.id)));
    }
}

TEST(Bm25, SaveLoadRoundTrip) {
    test::TempDir dir;
    const auto idx = Bm25Index::build(fruit_corpus());
    idx.save(dir / "bm25.rplx");
    const auto back = Bm25Index::load(dir / "bm25.rplx");
    EXPECT_EQ(back.ids(), idx.ids());
    EXPECT_EQ(back.score(terms("apple"), 1), idx.score(terms("apple"), 1));
}

TEST(Bm25, LoadRejectsGarbage) {
    test::TempDir dir;
    test::write_file(dir / "x.rplx", "not an index");
    EXPECT_THROW(Bm25Index::load(dir / "x.rplx"), Error);
}

TEST(Rerank, IdempotentOnBm25Order) {
    const auto idx = Bm25Index::build(fruit_corpus());
    const auto first = idx.search(terms("apple"), 2);
    EXPECT_EQ(idx.rerank(terms("apple"), first, 2), first);
}

TEST(Rerank, AllTermsBeatsNone) {
    const CorpusSnapshot snap({{"x", "red fox", Origin::clean}, {"y", "blue whale", Origin::clean}});
    const auto idx = Bm25Index::build(snap);
    const RankedList cand{{{"y", 0.9}, {"x", 0.1}}};
    EXPECT_EQ(idx.rerank(terms("red fox"), cand, 1).ids(), (std::vector<std::string>{"x"}));
}

TEST(Rerank, PadsWithZeroScoreInIncomingOrder) {
    const CorpusSnapshot snap({{"p", "pear", Origin::clean},
                               {"q", "plum", Origin::clean},
                               {"r", "fig", Origin::clean},
                               {"s", "date", Origin::clean}});
    const auto idx = Bm25Index::build(snap);
    const RankedList cand{{{"s", 0.9}, {"q", 0.8}, {"r", 0.7}}};
    const auto out = idx.rerank(terms("fig"), cand, 3);
    EXPECT_EQ(out.ids(), (std::vector<std::string>{"r", "s", "q"}));
    EXPECT_GT(out[0].score, 0.0);
    EXPECT_EQ(out[1].score, 0.0);
    EXPECT_EQ(out[2].score, 0.0);
}

TEST(Rerank, UnknownIdThrows) {
    const auto idx = Bm25Index::build(fruit_corpus());
    EXPECT_THROW(idx.rerank(terms("apple"), RankedList{{{"zz", 1.0}}}, 1), ConfigError);
}

TEST(Rerank, MatchesDirectFormulaOnRandomInputs) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Document> docs;
        for (int i = 0; i < 30; ++i) {
            std::string t;
            for (int k = 0, n = static_cast<int>(rng() % 6); k < n; ++k) t += "t" + std::to_string(rng() % 10) + " ";
            docs.push_back({"d" + std::to_string(10 + i), t, Origin::clean});
        }
        const auto idx = Bm25Index::build(CorpusSnapshot(docs));
        std::vector<Hit> cands;
        for (int i = 0; i < 30; ++i) {
            if (rng() % 2) cands.push_back({docs[static_cast<std::size_t>(i)].id, 1.0 / (1 + i)});
        }
        const RankedList in{cands};
        const std::vector<Term> q{"t" + std::to_string(rng() % 10), "t" + std::to_string(rng() % 10)};
        const std::size_t k = 1 + rng() % 8;
        std::vector<Hit> pos, zero;
        for (const auto& c : cands) {
            const double s = bm25_score(idx, q, *idx.find(c.id));
            (s > 0 ? pos : zero).push_back({c.id, s});
        }
        std::sort(pos.begin(), pos.end(), hit_before);
        std::vector<Hit> expect(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(std::min(k, pos.size())));
        for (const auto& z : zero) {
            if (expect.size() < k) expect.push_back(z);
        }
        EXPECT_EQ(idx.rerank(q, in, k).entries, expect);
    }
}

TEST(Embedder, EmptyTextIsZero) {
    const CorpusStats stats;
    const auto v = DenseEmbedder::a().embed("", stats);
    ASSERT_EQ(v.size(), 256u);
    EXPECT_TRUE(std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }));
}

TEST(Embedder, SingleTokenIsSignedBasisVector) {
    const auto snap = fruit_corpus();
    for (const auto& e : {DenseEmbedder::a(), DenseEmbedder::b()}) {
        const auto v = e.embed("apple", snap.stats());
        std::size_t nonzero = 0;
        for (double x : v) {
            if (x != 0.0) {
                ++nonzero;
                EXPECT_NEAR(std::abs(x), 1.0, 1e-15);
            }
        }
        EXPECT_EQ(nonzero, 1u);
        const auto h = feature_hash(e.seed, "apple");
        EXPECT_EQ(v[h % e.dim], (h >> 63) == 0 ? 1.0 : -1.0);
    }
}

TEST(Embedder, FeatureHashIsFnvOverSeedThenBytes) {
    // FNV-1a 64 of the 8 little-endian seed bytes, then "a".
    std::uint64_t h = 14695981039346656037ULL;
    const auto mix = [&](unsigned char c) {
        h ^= c;
        h *= 1099511628211ULL;
    };
    const std::uint64_t seed = 0x0102030405060708ULL;
    for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>((seed >> (8 * i)) & 0xFF));
    mix('a');
    EXPECT_EQ(feature_hash(seed, "a"), h);
}

TEST(Embedder, UnitNormAndDeterministic) {
    const auto snap = fruit_corpus();
    std::mt19937_64 rng(3);
    for (int i = 0; i < 50; ++i) {
        std::string text;
        for (int k = 0, n = 1 + static_cast<int>(rng() % 10); k < n; ++k) text += "tok" + std::to_string(rng() % 40) + " ";
        const auto v = DenseEmbedder::b().embed(text, snap.stats());
        EXPECT_NEAR(std::sqrt(dot(v, v)), 1.0, 1e-6);
        EXPECT_EQ(v, DenseEmbedder::b().embed(text, snap.stats()));
    }
}

namespace {

std::vector<Vector> random_vectors(std::size_t n, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::vector<Vector> out(n, Vector(dim));
    for (auto& v : out) {
        for (auto& x : v) x = nd(rng);
    }
    return out;
}

std::vector<std::string> numbered_ids(std::size_t n) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("v" + std::to_string(10000 + i));
    return ids;
}

RankedList brute_force(const IvfSq8Index& idx, std::span<const double> q, std::size_t k) {
    std::vector<Hit> hits;
    for (std::size_t i = 0; i < idx.size(); ++i) hits.push_back({idx.ids()[i], dot(q, idx.decoded(i))});
    return top_k(std::move(hits), k);
}

} // namespace

TEST(IvfSq8, QuantizationExample) {
    // One dimension spanning [0, 2.55] gives a step of exactly 0.01.
    std::vector<Vector> vs{{0.0}, {2.55}, {1.0}};
    const auto idx = IvfSq8Index::build(vs, {"a", "b", "c"}, 1);
    EXPECT_EQ(idx.quantize(0, 1.0), 100);
    EXPECT_NEAR(idx.dequantize(0, 100), 1.0, 1e-12);
    EXPECT_EQ(idx.code(2, 0), 100);
}

TEST(IvfSq8, ConstantDimensionCodesZero) {
    std::vector<Vector> vs{{1.0, 3.0}, {2.0, 3.0}};
    const auto idx = IvfSq8Index::build(vs, {"a", "b"}, 1);
    EXPECT_EQ(idx.code(0, 1), 0);
    EXPECT_EQ(idx.code(1, 1), 0);
}

TEST(IvfSq8, ErrorBoundAndPartition) {
    const auto vs = random_vectors(300, 16, 8);
    const auto idx = IvfSq8Index::build(vs, numbered_ids(300), 8);
    std::vector<int> seen(300, 0);
    for (const auto& list : idx.inverted_lists()) {
        for (auto i : list) ++seen[i];
    }
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
    for (std::size_t i = 0; i < vs.size(); ++i) {
        for (std::size_t d = 0; d < 16; ++d) {
            const double step = (idx.max(d) - idx.min(d)) / 255.0;
            EXPECT_LE(std::abs(vs[i][d] - idx.decoded(i)[d]), step / 2 + 1e-9);
        }
    }
}

TEST(IvfSq8, FullProbeEqualsBruteForce) {
    const auto vs = random_vectors(400, 32, 9);
    const auto idx = IvfSq8Index::build(vs, numbered_ids(400), 16);
    const auto qs = random_vectors(20, 32, 10);
    for (const auto& q : qs) EXPECT_EQ(idx.search(q, 10, 16), brute_force(idx, q, 10));
}

TEST(IvfSq8, ExactVectorRanksFirst) {
    const auto vs = random_vectors(200, 8, 12);
    const auto idx = IvfSq8Index::build(vs, numbered_ids(200), 4);
    const auto r = idx.search(idx.decoded(37), 1, 4);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].id, idx.ids()[37]);
}

TEST(IvfSq8, IdenticalVectorsStillDistinctIds) {
    std::vector<Vector> vs(10, Vector{0.5, -0.5});
    const auto idx = IvfSq8Index::build(vs, numbered_ids(10), 3);
    const auto r = idx.search(Vector{1.0, 0.0}, 5, 3);
    ASSERT_EQ(r.size(), 5u);
    EXPECT_TRUE(r.is_canonical());
}

TEST(IvfSq8, EmptyIndexAndTooFewVectors) {
    const IvfSq8Index empty;
    EXPECT_TRUE(empty.search(Vector{1.0}, 3, 1).empty());
    EXPECT_THROW(IvfSq8Index::build(random_vectors(3, 4, 1), numbered_ids(3), 4), ConfigError);
}

TEST(IvfSq8, SaveLoadRoundTrip) {
    test::TempDir dir;
    const auto vs = random_vectors(100, 8, 13);
    const auto idx = IvfSq8Index::build(vs, numbered_ids(100), 4);
    idx.save(dir / "ivf.rplx");
    const auto back = IvfSq8Index::load(dir / "ivf.rplx");
    const auto q = random_vectors(1, 8, 14)[0];
    EXPECT_EQ(back.search(q, 10, 2), idx.search(q, 10, 2));
    EXPECT_EQ(test::read_file(dir / "ivf.rplx"), [&] {
        back.save(dir / "again.rplx");
        return test::read_file(dir / "again.rplx");
    }());
}

TEST(Rrf, DirectFormulaExamples) {
    const RankedList a{{{"x", 9}, {"y", 8}, {"z", 7}}};
    const RankedList b{{{"x", 5}, {"w", 4}}};
    const std::vector<RankedList> lists{a, b};
    const auto fused = rrf_fuse(lists, 60, 10);
    std::map<std::string, double> s;
    for (const auto& h : fused) s[h.id] = h.score;
    EXPECT_EQ(s["x"], 1.0 / 61 + 1.0 / 61);
    EXPECT_NEAR(s["x"], 2.0 / 61, 1e-15);
    EXPECT_EQ(s["z"], 1.0 / 63);
    EXPECT_EQ(fused[0].id, "x");
}

TEST(Rrf, SingleListKeepsOrder) {
    const RankedList a{{{"m", 3}, {"c", 2}, {"q", 1}}};
    const std::vector<RankedList> lists{a};
    EXPECT_EQ(rrf_fuse(lists, 60, 3).ids(), a.ids());
}

TEST(Rrf, RandomizedAgainstFormulaAndPermutation) {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<RankedList> lists(1 + rng() % 4);
        for (auto& l : lists) {
            std::vector<std::string> pool;
            for (int i = 0; i < 12; ++i) pool.push_back("d" + std::to_string(i));
            std::shuffle(pool.begin(), pool.end(), rng);
            pool.resize(rng() % 12);
            for (std::size_t r = 0; r < pool.size(); ++r) l.entries.push_back({pool[r], 1.0 / (1.0 + static_cast<double>(r))});
        }
        const std::size_t k_rrf = 1 + rng() % 80;
        const std::size_t k = 1 + rng() % 12;
        std::map<std::string, std::vector<double>> parts;
        for (const auto& l : lists) {
            for (std::size_t r = 0; r < l.size(); ++r) parts[l[r].id].push_back(1.0 / static_cast<double>(k_rrf + r + 1));
        }
        std::vector<Hit> expect;
        for (auto& [id, p] : parts) {
            std::sort(p.begin(), p.end(), std::greater<>());
            double s = 0;
            for (double x : p) s += x;
            expect.push_back({id, s});
        }
        std::sort(expect.begin(), expect.end(), hit_before);
        if (expect.size() > k) expect.resize(k);
        const auto fused = rrf_fuse(lists, k_rrf, k);
        EXPECT_EQ(fused.entries, expect);
        std::reverse(lists.begin(), lists.end());
        EXPECT_EQ(rrf_fuse(lists, k_rrf, k), fused);
    }
}

TEST(Rrf, InvalidArguments) {
    const std::vector<RankedList> lists;
    EXPECT_THROW(rrf_fuse(lists, 60, 0), ConfigError);
    EXPECT_THROW(rrf_fuse(lists, 0, 3), ConfigError);
    EXPECT_TRUE(rrf_fuse(lists, 60, 3).empty());
}
