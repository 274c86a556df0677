#include "gtp/common/errors.hpp"
#include "gtp/contrastive/pretrain.hpp"
#include "gtp/numerics/grad_check.hpp"
#include "gtp/numerics/ops.hpp"
#include "gtp/synth/slides.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace gtp;
using namespace gtp::contrastive;
using gtp::num::Tape;
using gtp::num::Tensor;

namespace {

double loss_of(const Tensor& z, double tau) {
    Tape tape;
    return nt_xent_loss(tape.constant(z), tau).value().item();
}

Tensor random_z(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Tensor z({rows, cols});
    for (double& v : z.data()) v = nd(rng);
    return z;
}

std::vector<Image> tissue_patches(int count, int side, std::uint64_t seed) {
    std::vector<Image> out;
    for (int cls = 0; out.size() < static_cast<std::size_t>(count); cls = (cls + 1) % 3) {
        auto s = synth::generate_slide(seed + out.size(), cls, side * 4, side * 4, 0.5, side);
        auto tiles = synth::filter_background(synth::tile_slide(s.pixels, side));
        for (auto& p : tiles.patches) {
            if (out.size() < static_cast<std::size_t>(count)) out.push_back(std::move(p));
        }
    }
    return out;
}

PretrainConfig tiny_config() {
    PretrainConfig c;
    c.encoder.input_size = 16;
    c.encoder.channels = {4};
    c.encoder.embedding_dim = 8;
    c.encoder.projection_dim = 4;
    c.batch = 8;
    c.steps = 4;
    c.learning_rate = 1e-3;
    return c;
}

} // namespace

TEST(AugmentPair, IdentityConfigReturnsPatch) {
    auto patch = tissue_patches(1, 32, 1)[0];
    auto [a, b] = augment_pair(patch, AugmentationConfig::identity(), 5);
    EXPECT_EQ(a, patch);
    EXPECT_EQ(b, patch);
}

TEST(AugmentPair, DeterministicUnderSeed) {
    auto patch = tissue_patches(1, 32, 2)[0];
    EXPECT_EQ(augment_pair(patch, {}, 9), augment_pair(patch, {}, 9));
}

TEST(AugmentPair, DefaultViewsDiffer) {
    auto patches = tissue_patches(10, 32, 3);
    for (std::size_t i = 0; i < patches.size(); ++i) {
        auto [a, b] = augment_pair(patches[i], {}, 100 + i);
        double diff = 0.0;
        for (std::size_t k = 0; k < a.pixels.size(); ++k) diff += std::abs(int(a.pixels[k]) - int(b.pixels[k]));
        EXPECT_GT(diff / static_cast<double>(a.pixels.size()), 0.0);
        EXPECT_EQ(a.width, 32);
    }
}

TEST(NtXent, SinglePairIsZero) {
    std::mt19937_64 rng(1);
    for (double tau : {0.1, 0.5, 2.0}) EXPECT_NEAR(loss_of(random_z(rng, 2, 5), tau), 0.0, 1e-15);
}

TEST(NtXent, RowScalingInvariant) {
    std::mt19937_64 rng(2);
    Tensor z = random_z(rng, 6, 4);
    Tensor z3 = z;
    for (double& v : z3.data()) v *= 3.0;
    EXPECT_NEAR(loss_of(z, 0.5), loss_of(z3, 0.5), 1e-12);
    Tensor zr = z;
    std::uniform_real_distribution<double> pos(0.1, 10.0);
    for (std::size_t i = 0; i < zr.rows(); ++i) {
        const double f = pos(rng);
        for (std::size_t j = 0; j < zr.cols(); ++j) zr(i, j) *= f;
    }
    EXPECT_NEAR(loss_of(z, 0.5), loss_of(zr, 0.5), 1e-12);
}

TEST(NtXent, OrthonormalBasisExample) {
    Tensor z = Tensor::matrix(4, 2, {1, 0, 1, 0, 0, 1, 0, 1});
    const double e = std::exp(1.0);
    const double expected = -std::log(e / (e + 2.0));
    EXPECT_NEAR(loss_of(z, 1.0), expected, 1e-14);
    EXPECT_NEAR(gtp::testing::brute_force_nt_xent(z, 1.0), expected, 1e-14);
}

TEST(NtXent, MatchesBruteForceAcrossSeeds) {
    for (std::size_t k = 1; k <= 8; ++k)
        for (double tau : {0.1, 0.5, 1.0})
            for (std::uint64_t seed = 0; seed < 50; ++seed) {
                std::mt19937_64 rng(seed * 131 + k);
                Tensor z = random_z(rng, 2 * k, 5);
                ASSERT_NEAR(loss_of(z, tau), gtp::testing::brute_force_nt_xent(z, tau), 1e-10) << "K=" << k << " tau=" << tau;
            }
}

TEST(NtXent, SwappingViewsInvariant) {
    std::mt19937_64 rng(4);
    Tensor z = random_z(rng, 8, 3);
    Tensor s = z;
    for (std::size_t m = 0; m < 4; ++m)
        for (std::size_t j = 0; j < 3; ++j) std::swap(s(2 * m, j), s(2 * m + 1, j));
    EXPECT_NEAR(loss_of(z, 0.5), loss_of(s, 0.5), 1e-12);
}

TEST(NtXent, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(5);
    for (std::size_t k : {2u, 4u}) {
        auto report = num::grad_check([](Tape&, const std::vector<num::Var>& v) { return nt_xent_loss(v[0], 0.5); },
                                      {random_z(rng, 2 * k, 4)}, 1e-6, 1e-4);
        EXPECT_TRUE(report.passed) << report.max_relative_error;
    }
}

TEST(NtXent, ZeroRowRejected) {
    Tensor z = Tensor::matrix(2, 2, {0, 0, 1, 0});
    EXPECT_THROW(loss_of(z, 0.5), std::invalid_argument);
}

TEST(Encoder, EmbeddingShapeAndIdenticalRows) {
    Encoder enc = Encoder::initialize(tiny_config().encoder, 3);
    auto patches = tissue_patches(3, 32, 7);
    patches.push_back(patches[0]);
    Tensor e = embed_patches(enc, patches, 2);
    ASSERT_EQ(e.shape(), (num::Shape{4, 8}));
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(e(0, j), e(3, j));
}

TEST(Encoder, CheckpointRoundTrip) {
    Encoder enc = Encoder::initialize(tiny_config().encoder, 3);
    for (std::size_t i = 0; i < enc.params.size(); ++i)
        for (double& v : enc.params.value(i).data()) v = static_cast<float>(v);
    auto dir = std::filesystem::temp_directory_path() / "gtp_encoder_ckpt";
    std::filesystem::remove_all(dir);
    save_encoder(dir, enc, {{"seed", 3}});
    Encoder back = load_encoder(dir);
    EXPECT_EQ(back.params, enc.params);
    EXPECT_EQ(to_json(back.config), to_json(enc.config));
}

TEST(Pretrain, CorpusTooSmall) {
    auto corpus = tissue_patches(4, 32, 1);
    EXPECT_THROW(pretrain_encoder(corpus, tiny_config()), DataError);
}

TEST(Pretrain, DeterministicParameters) {
    auto corpus = tissue_patches(16, 32, 11);
    auto a = pretrain_encoder(corpus, tiny_config());
    auto b = pretrain_encoder(corpus, tiny_config());
    EXPECT_EQ(a.encoder.params, b.encoder.params);
    ASSERT_EQ(a.log.size(), 4u);
    for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss, b.log[i].loss);
}

TEST(Pretrain, CosineScheduleEndpoints) {
    EXPECT_DOUBLE_EQ(cosine_lr(1e-4, 0, 100), 1e-4);
    EXPECT_NEAR(cosine_lr(1e-4, 50, 100), 5e-5, 1e-18);
    EXPECT_NEAR(cosine_lr(1e-4, 100, 100), 0.0, 1e-18);
}

TEST(Pretrain, HeldOutLossDecreases) {
    auto corpus = tissue_patches(400, 64, 21);
    auto heldout = tissue_patches(32, 64, 900);
    PretrainConfig c;
    c.batch = 32;
    c.steps = 40;
    c.learning_rate = 1e-3;
    auto r = pretrain_encoder(corpus, c, &heldout);
    ASSERT_TRUE(r.heldout_loss_initial && r.heldout_loss_final);
    EXPECT_LT(*r.heldout_loss_final, *r.heldout_loss_initial);
}
