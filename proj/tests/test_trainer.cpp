#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "pogcn/trainer.hpp"
#include "test_helpers.hpp"

using namespace pogcn;

namespace {

PogGraph pools_graph() {
    // rank 1: 4 edges, rank 2: 2 edges, rank 5: 1 edge over 3 users x 6 items.
    return PogGraph::from_edges(3, 6, 1.0,
                                {{0, 0, 1, 1}, {0, 1, 1, 1}, {1, 2, 1, 1}, {2, 3, 1, 1},
                                 {0, 4, 2, 2}, {1, 0, 2, 2}, {2, 5, 5, 5}});
}

// Loss of one model on fixed triples, evaluated independently of the
// gradient code: propagate, score, sum, add regularization by hand.
double reference_loss(const EmbeddingModel& m, const PogGraph& g, const std::vector<TrainTriple>& triples,
                      double l2) {
    const auto emb = propagate(m, g);
    double loss = 0.0;
    std::set<Index> us, is;
    for (const auto& t : triples) {
        const double x = emb.users.row(t.user).dot(emb.items.row(t.pos)) - emb.users.row(t.user).dot(emb.items.row(t.neg));
        loss += -std::log(1.0 / (1.0 + std::exp(-x)));
        us.insert(t.user);
        is.insert(t.pos);
        is.insert(t.neg);
    }
    for (auto u : us) loss += l2 * m.users.row(u).squaredNorm();
    for (auto i : is) loss += l2 * m.items.row(i).squaredNorm();
    return loss;
}

void check_gradient(std::uint32_t seed, std::size_t users, std::size_t items, std::size_t edges, std::size_t dim,
                    int layers) {
    std::mt19937 rng(seed);
    const auto g = testutil::random_graph(rng, users, items, edges, 1.0, 4);
    auto m = testutil::random_model(rng, g, dim, layers, 0.5);
    PairSampler sampler(g, 1.0);
    Rng srng = make_rng(seed, "sampler");
    const auto triples = sampler.sample_batch(6, srng);
    const double l2 = 0.05;
    const auto res = pobpr_loss(m, g, triples, l2);
    EXPECT_NEAR(res.loss, reference_loss(m, g, triples, l2), 1e-10);

    const double h = 1e-5;
    double worst = 0.0;
    for (int table = 0; table < 2; ++table) {
        Matrix& p = table == 0 ? m.users : m.items;
        const Matrix& grad = table == 0 ? res.grad_users : res.grad_items;
        for (Eigen::Index r = 0; r < p.rows(); ++r)
            for (Eigen::Index c = 0; c < p.cols(); ++c) {
                const double saved = p(r, c);
                p(r, c) = saved + h;
                const double up = reference_loss(m, g, triples, l2);
                p(r, c) = saved - h;
                const double down = reference_loss(m, g, triples, l2);
                p(r, c) = saved;
                const double fd = (up - down) / (2 * h);
                const double rel = std::abs(fd - grad(r, c)) / std::max(1.0, std::abs(fd) + std::abs(grad(r, c)));
                worst = std::max(worst, rel);
            }
    }
    EXPECT_LT(worst, 1e-4);
}

PogGraph planted_small(std::uint64_t seed) {
    PlantedConfig pc;
    pc.users = 20;
    pc.items = 120;
    pc.clicks_per_user = 30;
    pc.seed = seed;
    return testutil::planted_graph(make_planted_dataset(pc), 1.0);
}

} // namespace

TEST(Distribution, HandEvaluatedExample) {
    const auto d = CombinationDistribution::from_counts({1, 2}, {10, 5}, 1.0);
    ASSERT_EQ(d.probs.size(), 2u);
    EXPECT_DOUBLE_EQ(d.probs[0], 0.5);
    EXPECT_DOUBLE_EQ(d.probs[1], 0.5);
}

TEST(Distribution, GammaZeroIsFrequency) {
    const auto d = CombinationDistribution::from_counts({1, 3, 7}, {6, 3, 1}, 0.0);
    EXPECT_NEAR(d.probs[0], 0.6, 1e-15);
    EXPECT_NEAR(d.probs[1], 0.3, 1e-15);
    EXPECT_NEAR(d.probs[2], 0.1, 1e-15);
}

TEST(Distribution, SinglePoolAndEmptyPools) {
    const auto d = CombinationDistribution::from_counts({4}, {9}, 2.0);
    EXPECT_EQ(d.probs, std::vector<double>{1.0});
    const auto skip = CombinationDistribution::from_counts({1, 2, 3}, {2, 0, 2}, 1.0);
    EXPECT_EQ(skip.ranks, (std::vector<int>{1, 3}));
    EXPECT_DOUBLE_EQ(skip.probs[0], 0.25);
    EXPECT_THROW(CombinationDistribution::from_counts({1}, {0}, 1.0), Error);
    try {
        build_distribution(PogGraph::from_edges(2, 2, 1.0, {}), 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::EmptyGraph);
    }
}

TEST(Distribution, FromGraphNormalizesAndGammaMonotone) {
    const auto g = pools_graph();
    double prev_top = -1.0;
    for (double gamma : {0.0, 0.5, 1.0, 1.5, 2.0, 4.0}) {
        const auto d = build_distribution(g, gamma);
        double sum = 0.0;
        for (double p : d.probs) sum += p;
        EXPECT_NEAR(sum, 1.0, 1e-12);
        ASSERT_EQ(d.ranks.back(), 5);
        EXPECT_GT(d.probs.back(), prev_top);
        prev_top = d.probs.back();
        const double z = 4.0 + 2.0 * std::pow(2.0, gamma) + std::pow(5.0, gamma);
        EXPECT_NEAR(d.probs[0], 4.0 / z, 1e-14);
    }
}

TEST(Sampler, ForcedOutcome) {
    const auto g = PogGraph::from_edges(1, 2, 1.0, {{0, 0, 1.0, 1}});
    PairSampler s(g, 1.0);
    Rng rng = make_rng(3, "sampler");
    for (const auto& t : s.sample_batch(500, rng)) EXPECT_EQ(t, (TrainTriple{0, 0, 1}));
}

TEST(Sampler, EmpiricalPoolFrequencies) {
    const auto g = pools_graph();
    PairSampler s(g, 1.0);
    std::map<std::pair<Index, Index>, int> rank_of;
    for (const auto& e : g.edges()) rank_of[{e.user, e.item}] = e.rank;
    Rng rng = make_rng(11, "sampler");
    const int n = 100000;
    std::map<int, int> hits;
    for (int k = 0; k < n; ++k) {
        const auto t = s.sample(rng);
        ++hits[rank_of.at({t.user, t.pos})];
    }
    const auto& d = s.distribution();
    double l1 = 0.0;
    for (std::size_t h = 0; h < d.ranks.size(); ++h) l1 += std::abs(hits[d.ranks[h]] / double(n) - d.probs[h]);
    EXPECT_LT(l1, 0.01);
}

TEST(Sampler, DeterministicGivenSeed) {
    std::mt19937 gen(5);
    const auto g = testutil::random_graph(gen, 30, 40, 200, 1.0);
    PairSampler s(g, 1.0);
    Rng a = make_rng(99, "sampler"), b = make_rng(99, "sampler"), c = make_rng(100, "sampler");
    const auto ba = s.sample_batch(256, a);
    EXPECT_EQ(ba, s.sample_batch(256, b));
    EXPECT_NE(ba, s.sample_batch(256, c));
    Rng d = make_rng(99, "sampler");
    EXPECT_EQ(ba, sample_batch(build_distribution(g, 1.0), g, 256, d));
}

TEST(Sampler, NegativesNeverCollide) {
    std::mt19937 gen(6);
    // Dense users exercise the direct non-neighbor path.
    for (std::size_t edges : {60u, 300u, 395u}) {
        const auto g = testutil::random_graph(gen, 10, 40, edges, 1.0);
        PairSampler s(g, 1.0);
        NegativeSampler neg(g);
        Rng rng = make_rng(edges, "sampler");
        std::map<Index, std::set<Index>> seen;
        for (int b = 0; b < 20; ++b)
            for (const auto& t : s.sample_batch(512, rng)) {
                ASSERT_LT(t.neg, g.items());
                ASSERT_TRUE(neg.is_positive(t.user, t.pos));
                ASSERT_FALSE(neg.is_positive(t.user, t.neg));
                seen[t.user].insert(t.neg);
            }
        // Every non-neighbor of a frequently drawn user eventually shows up.
        for (const auto& [u, negs] : seen)
            if (g.user_edges(u).size() >= 38) {
                EXPECT_EQ(negs.size(), g.items() - g.user_edges(u).size());
            }
    }
}

TEST(Sampler, SaturatedUsersExcluded) {
    // User 0 touched both items; user 1 only item 0.
    const auto g = PogGraph::from_edges(2, 2, 1.0, {{0, 0, 1, 1}, {0, 1, 8, 8}, {1, 0, 1, 1}});
    PairSampler s(g, 1.0);
    EXPECT_EQ(s.distribution().ranks, std::vector<int>{1});
    Rng rng = make_rng(1, "sampler");
    for (const auto& t : s.sample_batch(50, rng)) EXPECT_EQ(t, (TrainTriple{1, 0, 1}));

    const auto full = PogGraph::from_edges(1, 2, 1.0, {{0, 0, 1, 1}, {0, 1, 1, 1}});
    try {
        PairSampler bad(full, 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NoNegativeAvailable);
    }
    Rng r2 = make_rng(1, "sampler");
    EXPECT_THROW(NegativeSampler(full).sample(0, r2), Error);
}

TEST(Sampler, ExpectationMatchesPoolMixture) {
    const auto g = pools_graph();
    std::mt19937 gen(8);
    const auto m = testutil::random_model(gen, g, 3, 1);
    const auto emb = propagate(m, g);
    const auto dist = build_distribution(g, 1.5);
    NegativeSampler neg(g);

    // Exhaustive: sum over pools, pairs in the pool and negatives of the user.
    double exact = 0.0;
    std::size_t h = 0;
    for (const auto& [rank, pool] : g.pools()) {
        double pool_mean = 0.0;
        for (auto e : pool) {
            const auto& edge = g.edges()[e];
            double pair_mean = 0.0;
            int count = 0;
            for (Index j = 0; j < g.items(); ++j) {
                if (neg.is_positive(edge.user, j)) continue;
                const TrainTriple t{edge.user, edge.item, j};
                pair_mean += triple_losses(emb, std::span<const TrainTriple>(&t, 1))[0];
                ++count;
            }
            pool_mean += pair_mean / count;
        }
        exact += dist.probs[h++] * pool_mean / static_cast<double>(pool.size());
    }

    PairSampler s(g, 1.5);
    Rng rng = make_rng(21, "sampler");
    const auto losses = triple_losses(emb, s.sample_batch(100000, rng));
    double mean = 0.0, sq = 0.0;
    for (double x : losses) mean += x;
    mean /= static_cast<double>(losses.size());
    for (double x : losses) sq += (x - mean) * (x - mean);
    const double se = std::sqrt(sq / static_cast<double>(losses.size() - 1) / static_cast<double>(losses.size()));
    EXPECT_LT(std::abs(mean - exact), 3 * se);
}

TEST(Loss, EqualScoresGiveLn2) {
    const auto g = pools_graph();
    EmbeddingModel m{Matrix::Zero(3, 4), Matrix::Zero(6, 4), 2};
    const std::vector<TrainTriple> t{{0, 0, 2}, {1, 2, 3}, {2, 3, 0}};
    const auto r = pobpr_loss(m, g, t, 0.3);
    EXPECT_NEAR(r.loss, 3 * 0.693147180559945, 1e-12);
    EXPECT_NEAR(neg_log_sigmoid(0.0), std::log(2.0), 1e-15);
}

TEST(Loss, SaturatesTowardZero) {
    EXPECT_LT(neg_log_sigmoid(50.0), 1e-20);
    EXPECT_GT(neg_log_sigmoid(50.0), 0.0);
    EXPECT_NEAR(neg_log_sigmoid(-800.0), 800.0, 1e-9);
    // Scores pushed apart: a single edge (0,0) with negative 1.
    const auto g = PogGraph::from_edges(1, 2, 1.0, {{0, 0, 1, 1}});
    for (double s : {1.0, 10.0, 100.0}) {
        EmbeddingModel m{Matrix{{s}}, Matrix{{s}, {-s}}, 0};
        const std::vector<TrainTriple> t{{0, 0, 1}};
        EXPECT_NEAR(pobpr_loss(m, g, t, 0.0).loss, neg_log_sigmoid(2 * s * s), 1e-15);
    }
}

TEST(Loss, GradientMatchesFiniteDifferences) {
    check_gradient(1, 4, 4, 8, 3, 1);
    for (std::uint32_t seed = 2; seed < 8; ++seed)
        check_gradient(seed, 3 + seed % 3, 6, std::min<std::size_t>(6 + seed, 12), 2 + seed % 3, 1 + static_cast<int>(seed % 2));
}

TEST(Loss, NonFinite) {
    const auto g = PogGraph::from_edges(1, 2, 1.0, {{0, 0, 1, 1}});
    const double inf = std::numeric_limits<double>::infinity();
    EmbeddingModel m{Matrix{{inf}}, Matrix{{1.0}, {1.0}}, 0};
    const std::vector<TrainTriple> t{{0, 0, 1}};
    try {
        pobpr_loss(m, g, t, 0.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_TRUE(e.kind() == ErrorKind::NonFiniteLoss || e.kind() == ErrorKind::NonFiniteValue);
    }
}

TEST(MtlLoss, SingleTaskMatchesBpr) {
    std::mt19937 gen(9);
    const auto g = testutil::random_graph(gen, 5, 6, 12, 1.0);
    const auto m = testutil::random_model(gen, g, 3, 2);
    PairSampler s(g, 0.0);
    Rng rng = make_rng(2, "sampler");
    const auto triples = s.sample_batch(10, rng);
    const std::vector<BehaviorTask> tasks{{"click", 1.0, triples}};
    const auto a = mtl_bpr_loss(m, g, tasks, 0.01);
    const auto b = pobpr_loss(m, g, triples, 0.01);
    EXPECT_EQ(a.loss, b.loss);
    EXPECT_EQ(a.grad_users, b.grad_users);
    EXPECT_EQ(a.grad_items, b.grad_items);
}

TEST(MtlLoss, ZeroWeightsLeaveRegularization) {
    std::mt19937 gen(10);
    const auto g = testutil::random_graph(gen, 5, 6, 12, 1.0);
    const auto m = testutil::random_model(gen, g, 3, 2);
    const std::vector<TrainTriple> t1{{0, 1, 2}}, t2{{3, 4, 5}};
    std::vector<TrainTriple> all = t1;
    all.insert(all.end(), t2.begin(), t2.end());
    const std::vector<BehaviorTask> tasks{{"a", 0.0, t1}, {"b", 0.0, t2}};
    const auto r = mtl_bpr_loss(m, g, tasks, 0.2);
    EXPECT_EQ(r.bpr, 0.0);
    EXPECT_NEAR(r.loss, reference_loss(m, g, {}, 0.2) + r.reg, 1e-15);
    const double expected_reg = 0.2 * (m.users.row(0).squaredNorm() + m.users.row(3).squaredNorm() +
                                       m.items.row(1).squaredNorm() + m.items.row(2).squaredNorm() +
                                       m.items.row(4).squaredNorm() + m.items.row(5).squaredNorm());
    EXPECT_NEAR(r.loss, expected_reg, 1e-12);
}

TEST(MtlLoss, TwoTasksEqualHandSum) {
    std::mt19937 gen(11);
    const auto g = testutil::random_graph(gen, 4, 6, 10, 1.0);
    const auto m = testutil::random_model(gen, g, 3, 1);
    const std::vector<TrainTriple> t1{{0, 1, 2}, {1, 0, 3}}, t2{{2, 4, 5}, {0, 1, 5}};
    const double a1 = 0.7, a2 = 1.9;
    const std::vector<BehaviorTask> tasks{{"click", a1, t1}, {"buy", a2, t2}};
    const auto r = mtl_bpr_loss(m, g, tasks, 0.0);
    const double hand = a1 * reference_loss(m, g, t1, 0.0) + a2 * reference_loss(m, g, t2, 0.0);
    EXPECT_NEAR(r.loss, hand, 1e-12);
}

TEST(Train, RejectsZeroEpochs) {
    const auto g = pools_graph();
    TrainConfig cfg;
    cfg.epochs = 0;
    EXPECT_THROW(train(g, cfg), Error);
    cfg.epochs = 1;
    cfg.batch_size = 0;
    EXPECT_THROW(train(g, cfg), Error);
    cfg.batch_size = 4;
    cfg.lr = 0.0;
    EXPECT_THROW(train(g, cfg), Error);
    EXPECT_EQ(parse_sampler_mode("uniform"), SamplerMode::UniformBPR);
    EXPECT_THROW(parse_sampler_mode("softmax"), Error);
}

TEST(Train, DeterministicBitForBit) {
    const auto g = planted_small(3);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.dim = 16;
    cfg.batch_size = 128;
    cfg.seed = 17;
    const auto a = train(g, cfg);
    const auto b = train(g, cfg);
    EXPECT_EQ(a.final_model.users, b.final_model.users);
    EXPECT_EQ(a.final_model.items, b.final_model.items);
    cfg.seed = 18;
    EXPECT_NE(train(g, cfg).final_model.users, a.final_model.users);
}

TEST(Train, EpochsAndStepsCounted) {
    const auto g = pools_graph();  // 7 edges
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.dim = 4;
    cfg.batch_size = 3;
    const auto r = train(g, cfg);
    ASSERT_EQ(r.log.size(), 3u);
    EXPECT_EQ(r.log[0].step, 3);
    EXPECT_EQ(r.log[2].step, 9);
    EXPECT_TRUE(std::isnan(r.log[0].val_mean_ndcg));
}

TEST(Train, LossDecreasesOverFirstEpochs) {
    std::vector<std::vector<double>> per_epoch(5);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto g = planted_small(100 + seed);
        TrainConfig cfg;
        cfg.lr = 1e-3;
        cfg.epochs = 50;
        cfg.seed = seed;
        const auto r = train(g, cfg);
        ASSERT_EQ(r.log.size(), 50u);
        for (int e = 0; e < 5; ++e) per_epoch[e].push_back(r.log[e].loss);
    }
    std::vector<double> medians;
    for (auto& v : per_epoch) {
        std::sort(v.begin(), v.end());
        medians.push_back(v[2]);
    }
    for (int e = 1; e < 5; ++e) EXPECT_LT(medians[e], medians[e - 1]) << "epoch " << e + 1;
}

TEST(Train, EarlyStoppingKeepsBest) {
    const auto g = pools_graph();
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.dim = 4;
    cfg.batch_size = 4;
    int calls = 0;
    const auto r = train(g, cfg, {}, [&](const PropagatedEmbeddings&) { return ++calls == 2 ? 0.9 : 0.1; });
    EXPECT_TRUE(r.early_stopped);
    EXPECT_EQ(r.best_epoch, 10);
    EXPECT_DOUBLE_EQ(r.best_val, 0.9);
    // Evaluations at 5, 10, then ten stale ones through epoch 60.
    EXPECT_EQ(r.log.back().epoch, 60);
    EXPECT_EQ(calls, 12);
    EXPECT_NE(r.best_model.users, r.final_model.users);
}

TEST(Train, MtlModeUsesBehaviorLogs) {
    PlantedConfig pc;
    pc.users = 20;
    pc.items = 100;
    pc.clicks_per_user = 20;
    const auto ds = make_planted_dataset(pc);
    const auto g = testutil::planted_graph(ds, 1.0);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.dim = 8;
    cfg.batch_size = 64;
    cfg.sampler_mode = SamplerMode::MTLBPR;
    cfg.mtl_weights = {{"click", 1.0}, {"cart", 0.5}, {"buy", 2.0}};
    const auto r = train(g, cfg, ds.logs);
    EXPECT_EQ(r.log.size(), 3u);
    EXPECT_TRUE(std::isfinite(r.log.back().loss));
    EXPECT_THROW(train(g, cfg), Error);
}

TEST(Train, DivergenceKeepsLastFiniteModel) {
    const auto g = planted_small(4);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.dim = 8;
    cfg.lr = 1e200;
    try {
        train(g, cfg);
        FAIL() << "expected divergence";
    } catch (const TrainingDiverged& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Diverged);
        EXPECT_TRUE(all_finite(e.last_finite().users));
        EXPECT_TRUE(all_finite(e.last_finite().items));
    }
}
