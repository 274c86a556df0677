#include "gtp/common/errors.hpp"
#include "gtp/model/gtp.hpp"
#include "gtp/numerics/grad_check.hpp"
#include "gtp/numerics/ops.hpp"
#include "reference_model.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

using namespace gtp;
using namespace gtp::model;
using gtp::num::Tape;
using gtp::num::Tensor;
using gtp::num::Var;

namespace {

GtpConfig small_config(int feature_dim = 6) {
    GtpConfig c;
    c.feature_dim = feature_dim;
    c.hidden_dim = 8;
    c.gc_layers = 2;
    c.blocks = 2;
    c.heads = 2;
    c.transformer_dim = 6;
    c.mlp_size = 10;
    c.pooled_nodes = 4;
    c.init_std = 0.3;
    c.seed = 5;
    return c;
}

Tensor rand_tensor(std::mt19937_64& rng, num::Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = u(rng);
    return t;
}

double max_abs_diff(const Tensor& a, const gtp::testing::Mat& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) worst = std::max(worst, std::abs(a(i, j) - b(i, j)));
    return worst;
}

graph::WsiGraph two_cliques() {
    graph::WsiGraph g;
    g.coords = {{0, 0}, {0, 1}, {0, 3}, {0, 4}};
    g.edges = graph::build_adjacency(g.coords);
    g.features = Tensor({4, 1}, 1.0);
    return g;
}

struct PoolFixture {
    Tape tape;
    GraphInputs in;
    PoolResult run(const graph::WsiGraph& g, const Tensor& s) {
        in = prepare_inputs(g, s.cols());
        return mincut_pool_from_assignment(tape.constant(g.features), tape.constant(s), tape.constant(in.a_tilde),
                                           tape.constant(in.degree_rows));
    }
};

} // namespace

TEST(GcnLayer, SingleNodeIdentity) {
    Tape tape;
    Var out = gcn_layer(tape.constant(Tensor::matrix(1, 2, {0.5, 2.0})), tape.constant(Tensor::identity(1)),
                        tape.constant(Tensor::identity(2)));
    EXPECT_EQ(out.value(), Tensor::matrix(1, 2, {0.5, 2.0}));
}

TEST(GcnLayer, ZeroFeaturesGiveZero) {
    std::mt19937_64 rng(1);
    Tape tape;
    Var out = gcn_layer(tape.constant(Tensor({3, 2})), tape.constant(graph::normalize_adjacency({{0, 1}, {1, 2}}, 3)),
                        tape.constant(rand_tensor(rng, {2, 4})));
    for (double v : out.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(GcnLayer, TwoNodePath) {
    Tape tape;
    Var out = gcn_layer(tape.constant(Tensor::identity(2)), tape.constant(graph::normalize_adjacency({{0, 1}}, 2)),
                        tape.constant(Tensor::identity(2)));
    for (double v : out.value().data()) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(MincutPool, HardCliqueAssignment) {
    PoolFixture f;
    PoolResult r = f.run(two_cliques(), Tensor::matrix(4, 2, {1, 0, 1, 0, 0, 1, 0, 1}));
    EXPECT_NEAR(r.cut_loss.value().item(), -1.0, 1e-12);
    EXPECT_NEAR(r.ortho_loss.value().item(), 0.0, 1e-12);
}

TEST(MincutPool, IdentityAssignmentKeepsFeatures) {
    std::mt19937_64 rng(2);
    graph::WsiGraph g = gtp::testing::random_graph(rng, 2, 2, 0.0, 3, 0);
    PoolFixture f;
    PoolResult r = f.run(g, Tensor::identity(4));
    EXPECT_EQ(r.pooled.value(), g.features);
}

TEST(MincutPool, UniformAssignmentClosedForm) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        graph::WsiGraph g = gtp::testing::random_graph(rng, 4, 5, 0.3, 2, 0);
        if (g.num_nodes() < 2) continue;
        PoolFixture f;
        PoolResult r = f.run(g, Tensor({g.num_nodes(), 2}, 0.5));
        EXPECT_NEAR(r.cut_loss.value().item(), -1.0, 1e-12);
        EXPECT_NEAR(r.ortho_loss.value().item(), std::sqrt(2.0 - std::sqrt(2.0)), 1e-12);
    }
}

TEST(MincutPool, CutLossWithinBoundsForStochasticS) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        graph::WsiGraph g = gtp::testing::random_graph(rng, 5, 5, 0.3, 2, 0);
        if (g.num_nodes() < 3) continue;
        Tensor s = rand_tensor(rng, {g.num_nodes(), 3}, 0.0, 1.0);
        for (std::size_t i = 0; i < s.rows(); ++i) {
            double tot = s(i, 0) + s(i, 1) + s(i, 2);
            for (std::size_t k = 0; k < 3; ++k) s(i, k) /= tot;
        }
        PoolFixture f;
        const double cut = f.run(g, s).cut_loss.value().item();
        EXPECT_GE(cut, -1.0 - 1e-12);
        EXPECT_LE(cut, 0.0);
    }
}

TEST(MincutPool, PooledAdjacencyHasZeroDiagonalAndIsSymmetric) {
    std::mt19937_64 rng(5);
    graph::WsiGraph g = gtp::testing::random_graph(rng, 4, 4, 0.1, 2, 0);
    Tensor s = rand_tensor(rng, {g.num_nodes(), 3}, 0.1, 1.0);
    Tensor ap = pooled_adjacency(s, graph::self_looped_adjacency(g.edges, g.num_nodes()));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(ap(i, i), 0.0);
    EXPECT_LE(gtp::testing::max_asymmetry(ap), 1e-12);
}

TEST(MincutPool, CannotPoolUp) {
    std::mt19937_64 rng(6);
    graph::WsiGraph g = gtp::testing::random_graph(rng, 2, 2, 0.0, 3, 0);
    EXPECT_THROW(prepare_inputs(g, 5), DataError);
}

TEST(Msa, SingleTokenAttendsToItself) {
    std::mt19937_64 rng(7);
    Tape tape;
    Var x = tape.constant(rand_tensor(rng, {1, 4}));
    Var wq = tape.constant(rand_tensor(rng, {4, 12}));
    Var bq = tape.constant(rand_tensor(rng, {12}));
    MsaResult r = msa(x, wq, bq, tape.constant(Tensor::identity(4)), tape.constant(Tensor({4})), 2);
    for (Var a : r.attention) EXPECT_EQ(a.value(), Tensor::matrix(1, 1, {1.0}));
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(r.out.value()(0, j), r.qkv.value()(0, 8 + j), 1e-15);
}

TEST(Msa, RowsAreStochastic) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        Tape tape;
        MsaResult r = msa(tape.constant(rand_tensor(rng, {7, 8}, -3, 3)), tape.constant(rand_tensor(rng, {8, 24}, -2, 2)),
                          tape.constant(Tensor({24})), tape.constant(rand_tensor(rng, {8, 8})), tape.constant(Tensor({8})), 4);
        for (Var a : r.attention)
            for (std::size_t i = 0; i < 7; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < 7; ++j) {
                    EXPECT_GE(a.value()(i, j), 0.0);
                    s += a.value()(i, j);
                }
                EXPECT_NEAR(s, 1.0, 1e-12);
            }
    }
}

TEST(Msa, TwoTokensIdentityProjections) {
    Tape tape;
    Tensor x = Tensor::matrix(2, 2, {1.0, 0.0, 0.5, 2.0});
    Tensor w({2, 6});
    for (std::size_t blk = 0; blk < 3; ++blk)
        for (std::size_t i = 0; i < 2; ++i) w(i, blk * 2 + i) = 1.0;
    MsaResult r = msa(tape.constant(x), tape.constant(w), tape.constant(Tensor({6})), tape.constant(Tensor::identity(2)),
                      tape.constant(Tensor({2})), 1);
    // q = k = v = x; logits = x xᵀ / √2
    const double s00 = 1.0 / std::sqrt(2.0), s01 = 0.5 / std::sqrt(2.0), s11 = 4.25 / std::sqrt(2.0);
    const double a00 = std::exp(s00) / (std::exp(s00) + std::exp(s01));
    const double a10 = std::exp(s01) / (std::exp(s01) + std::exp(s11));
    const Tensor& a = r.attention[0].value();
    EXPECT_NEAR(a(0, 0), a00, 1e-14);
    EXPECT_NEAR(a(1, 0), a10, 1e-14);
    EXPECT_NEAR(r.out.value()(0, 0), a00 * 1.0 + (1 - a00) * 0.5, 1e-14);
    EXPECT_NEAR(r.out.value()(1, 1), a10 * 0.0 + (1 - a10) * 2.0, 1e-14);
}

TEST(Msa, IndivisibleWidthRejected) {
    Tape tape;
    EXPECT_THROW(msa(tape.constant(Tensor({2, 6})), tape.constant(Tensor({6, 18})), tape.constant(Tensor({18})),
                     tape.constant(Tensor({6, 6})), tape.constant(Tensor({6})), 4),
                 num::DimensionError);
}

TEST(Forward, MatchesReferenceImplementation) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        GtpConfig c = small_config();
        c.seed = 100 + trial;
        if (trial % 2) c.hidden_dim = c.transformer_dim;
        GtpModel m = GtpModel::initialize(c);
        graph::WsiGraph g = gtp::testing::random_graph(rng, 4, 5, 0.25, 6, trial % 3);
        if (g.num_nodes() < 4) continue;
        ForwardTrace tr = forward(m, prepare_inputs(g, 4));
        auto ref = gtp::testing::reference_forward(m, g);
        EXPECT_LE(max_abs_diff(tr.logits.value(), ref.logits), 1e-11);
        EXPECT_LE(max_abs_diff(tr.s.value(), ref.s), 1e-12);
        EXPECT_NEAR(tr.cut_loss.value().item(), ref.cut, 1e-12);
        EXPECT_NEAR(tr.ortho_loss.value().item(), ref.ortho, 1e-12);
        for (std::size_t l = 0; l < tr.blocks.size(); ++l)
            for (std::size_t h = 0; h < 2; ++h) EXPECT_LE(max_abs_diff(tr.blocks[l].attention[h].value(), ref.attention[l][h]), 1e-12);
    }
}

TEST(Forward, OneBlockZeroMlpStepByStep) {
    GtpConfig c = small_config(2);
    c.gc_layers = 1;
    c.blocks = 1;
    c.heads = 1;
    c.hidden_dim = c.transformer_dim = 2;
    c.pooled_nodes = 1;
    GtpModel m = GtpModel::initialize(c);
    m.params.at("gc1.w") = Tensor::identity(2);
    Tensor w({2, 6});
    for (std::size_t blk = 0; blk < 3; ++blk)
        for (std::size_t i = 0; i < 2; ++i) w(i, blk * 2 + i) = 1.0;
    m.params.at("block1.qkv.w") = w;
    m.params.at("block1.msa.w") = Tensor::identity(2);
    m.params.at("block1.mlp1.w") = Tensor({2, 10});
    m.params.at("block1.mlp2.w") = Tensor({10, 2});
    m.params.at("cls") = Tensor::matrix(1, 2, {0.3, -0.2});
    m.params.at("head.w") = Tensor::matrix(2, 3, {1, 0, -1, 0, 1, 2});
    m.params.at("head.b") = Tensor::vector({0.1, 0.2, 0.3});

    graph::WsiGraph g;
    g.coords = {{0, 0}, {0, 1}};
    g.edges = graph::build_adjacency(g.coords);
    g.features = Tensor::matrix(2, 2, {1.0, 3.0, 2.0, 0.5});
    ForwardTrace tr = forward(m, prepare_inputs(g, 1));

    // N_t = 1: S is all ones, pooled = column sums of ReLU(Â F).
    const double p0 = 0.5 * (1.0 + 2.0) * 2, p1 = 0.5 * (3.0 + 0.5) * 2;
    auto ln = [](double a, double b) {
        const double mu = 0.5 * (a + b), sd = std::sqrt(0.25 * (a - b) * (a - b) + 1e-5);
        return std::pair{(a - mu) / sd, (b - mu) / sd};
    };
    const double t[2][2] = {{0.3, -0.2}, {p0, p1}};
    double y[2][2];
    for (int i = 0; i < 2; ++i) std::tie(y[i][0], y[i][1]) = ln(t[i][0], t[i][1]);
    double att[2][2];
    for (int i = 0; i < 2; ++i) {
        double s[2];
        for (int j = 0; j < 2; ++j) s[j] = (y[i][0] * y[j][0] + y[i][1] * y[j][1]) / std::sqrt(2.0);
        const double mx = std::max(s[0], s[1]);
        const double e0 = std::exp(s[0] - mx), e1 = std::exp(s[1] - mx);
        att[i][0] = e0 / (e0 + e1);
        att[i][1] = e1 / (e0 + e1);
    }
    const double r0 = t[0][0] + att[0][0] * y[0][0] + att[0][1] * y[1][0];
    const double r1 = t[0][1] + att[0][0] * y[0][1] + att[0][1] * y[1][1];
    auto [z0, z1] = ln(r0, r1);
    const double expected[3] = {z0 + 0.1, z1 + 0.2, -z0 + 2 * z1 + 0.3};
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(tr.logits.value()[j], expected[j], 1e-12);
}

TEST(Forward, LogitsInvariantUnderNodePermutation) {
    std::mt19937_64 rng(10);
    GtpConfig c = small_config();
    GtpModel m = GtpModel::initialize(c);
    for (int trial = 0; trial < 10; ++trial) {
        graph::WsiGraph g = gtp::testing::random_graph(rng, 5, 5, 0.2, 6, 1);
        const Tensor base = forward(m, prepare_inputs(g, 4)).logits.value();
        std::vector<std::size_t> perm(g.num_nodes());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        const Tensor moved = forward(m, prepare_inputs(graph::permute_nodes(g, perm), 4)).logits.value();
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(base[j], moved[j], 1e-10);
    }
}

TEST(Forward, DefaultWidthsGiveThreeLogits) {
    std::mt19937_64 rng(11);
    GtpConfig c;
    c.pooled_nodes = 100;
    graph::WsiGraph g = gtp::testing::random_graph(rng, 11, 11, 0.0, 64, 0);
    Inference inf = infer(GtpModel::initialize(c), g);
    EXPECT_EQ(inf.trace.logits.value().shape(), (num::Shape{1, 3}));
    EXPECT_EQ(inf.probabilities.shape(), (num::Shape{3}));
    for (const auto& blk : inf.trace.blocks) EXPECT_EQ(blk.attention.size(), 8u);
}

TEST(Forward, AttentionAndAssignmentRowsStochastic) {
    std::mt19937_64 rng(12);
    GtpModel m = GtpModel::initialize(small_config());
    graph::WsiGraph g = gtp::testing::random_graph(rng, 4, 4, 0.1, 6, 0);
    ForwardTrace tr = forward(m, prepare_inputs(g, 4));
    auto check = [](const Tensor& t) {
        for (std::size_t i = 0; i < t.rows(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < t.cols(); ++j) {
                EXPECT_GE(t(i, j), 0.0);
                s += t(i, j);
            }
            EXPECT_NEAR(s, 1.0, 1e-9);
        }
    };
    check(tr.s.value());
    for (const auto& heads : tr.attention_maps())
        for (const auto& a : heads) check(a);
}

TEST(Forward, FeatureDimMismatch) {
    std::mt19937_64 rng(13);
    GtpModel m = GtpModel::initialize(small_config());
    graph::WsiGraph g = gtp::testing::random_graph(rng, 3, 3, 0.0, 5, 0);
    EXPECT_THROW(infer(m, g), DataError);
}

TEST(Infer, ProbabilitiesSumToOne) {
    std::mt19937_64 rng(14);
    GtpModel m = GtpModel::initialize(small_config());
    graph::WsiGraph g = gtp::testing::random_graph(rng, 4, 4, 0.0, 6, 0);
    Tensor p = infer(m, g).probabilities;
    EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
}

TEST(Infer, ZeroReadoutIsUniform) {
    std::mt19937_64 rng(15);
    GtpModel m = GtpModel::initialize(small_config());
    m.params.at("head.w") = Tensor({6, 3});
    graph::WsiGraph g = gtp::testing::random_graph(rng, 4, 4, 0.0, 6, 0);
    Tensor p = infer(m, g).probabilities;
    for (double v : p.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Infer, LargeGraphUnderOneSecond) {
    std::mt19937_64 rng(16);
    GtpConfig c;
    c.pooled_nodes = 120;
    GtpModel m = GtpModel::initialize(c);
    graph::WsiGraph g = gtp::testing::random_graph(rng, 16, 16, 0.0, 64, 0);
    ASSERT_EQ(g.num_nodes(), 256u);
    const auto t0 = std::chrono::steady_clock::now();
    infer(m, g);
    EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 1.0);
}

TEST(GradCheck, EndToEndNineNodeGraph) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        std::mt19937_64 rng(seed + 20);
        GtpConfig c = small_config(5);
        c.gc_layers = 1;
        c.blocks = 1;
        c.heads = 2;
        c.pooled_nodes = 4;
        c.seed = seed;
        GtpModel m = GtpModel::initialize(c);
        graph::WsiGraph g = gtp::testing::random_graph(rng, 3, 3, 0.0, 5, static_cast<int>(seed % 3));
        const GraphInputs in = prepare_inputs(g, 4);
        std::vector<Tensor> leaves;
        for (std::size_t i = 0; i < m.params.size(); ++i) leaves.push_back(m.params.value(i));
        auto report = num::grad_check(
            [&](Tape&, const std::vector<Var>& vars) {
                num::BoundParameters p(m.params, vars);
                ForwardTrace tr = forward_on(*vars.front().tape, p, c, in);
                return total_loss(tr, static_cast<std::size_t>(*g.label), c.lambda_cut).total;
            },
            leaves, 1e-6, 1e-3);
        EXPECT_TRUE(report.passed) << "max rel err " << report.max_relative_error;
    }
}

TEST(Train, SingleGraphOverfits) {
    std::mt19937_64 rng(30);
    GtpConfig c = small_config();
    graph::WsiGraph g = gtp::testing::random_graph(rng, 4, 4, 0.0, 6, 2);
    TrainConfig tc;
    tc.steps = 60;
    tc.batch = 8;
    tc.learning_rate = 1e-3;
    tc.milestones = {1000};
    TrainResult r = train(std::vector<graph::WsiGraph>{g}, c, tc);
    for (int s = 1; s < 20; ++s) EXPECT_LT(r.history[s].total, r.history[s - 1].total) << "step " << s;
    Tensor p = infer(r.model, g).probabilities;
    EXPECT_GT(p[2], p[0]);
    EXPECT_GT(p[2], p[1]);
}

TEST(Train, DeterministicHistory) {
    std::mt19937_64 rng(31);
    std::vector<graph::WsiGraph> graphs;
    for (int i = 0; i < 6; ++i) graphs.push_back(gtp::testing::random_graph(rng, 3, 4, 0.1, 6, i % 3));
    TrainConfig tc;
    tc.steps = 5;
    tc.batch = 4;
    TrainResult a = train(graphs, small_config(), tc), b = train(graphs, small_config(), tc);
    EXPECT_EQ(history_csv(a.history), history_csv(b.history));
    EXPECT_EQ(a.model.params, b.model.params);
}

TEST(Train, RejectsBadInputs) {
    EXPECT_THROW(train(std::vector<graph::WsiGraph>{}, small_config(), TrainConfig{}), DataError);
    std::mt19937_64 rng(32);
    graph::WsiGraph g = gtp::testing::random_graph(rng, 3, 3, 0.0, 6, 0);
    g.label.reset();
    EXPECT_THROW(train(std::vector<graph::WsiGraph>{g}, small_config(), TrainConfig{}), DataError);
}

TEST(Train, StepScheduleScalesMilestones) {
    TrainConfig tc;
    tc.steps = 150;
    EXPECT_EQ(tc.resolved_milestones(), (std::vector<int>{30, 100}));
    tc.steps = 600;
    EXPECT_EQ(tc.resolved_milestones(), (std::vector<int>{120, 400}));
    EXPECT_DOUBLE_EQ(step_lr(1e-3, 29, {30, 100}), 1e-3);
    EXPECT_NEAR(step_lr(1e-3, 30, {30, 100}), 1e-4, 1e-18);
    EXPECT_NEAR(step_lr(1e-3, 149, {30, 100}), 1e-5, 1e-18);
}

TEST(Checkpoint, ModelRoundTrip) {
    GtpModel m = GtpModel::initialize(small_config());
    for (std::size_t i = 0; i < m.params.size(); ++i)
        for (double& v : m.params.value(i).data()) v = static_cast<float>(v);
    auto dir = std::filesystem::temp_directory_path() / "gtp_model_ckpt";
    std::filesystem::remove_all(dir);
    save_model(dir, m);
    GtpModel back = load_model(dir);
    EXPECT_EQ(back.params, m.params);
    EXPECT_EQ(to_json(back.config), to_json(m.config));
}
