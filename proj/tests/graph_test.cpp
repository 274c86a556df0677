#include "gtp/common/binary_io.hpp"
#include "gtp/common/errors.hpp"
#include "gtp/graph/wsi_graph.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

using namespace gtp;
using namespace gtp::graph;
using gtp::synth::GridCoord;

namespace {

synth::TileSet fake_tiles(const std::vector<GridCoord>& coords, int rows, int cols) {
    synth::TileSet t;
    t.patch_size = t.stride = 8;
    t.grid_rows = rows;
    t.grid_cols = cols;
    t.slide_height = rows * 8;
    t.slide_width = cols * 8;
    t.coords = coords;
    t.patches.assign(coords.size(), Image(8, 8, 3));
    t.kept_mask.assign(static_cast<std::size_t>(rows) * cols, 0);
    for (auto c : coords) t.kept_mask[c.row * cols + c.col] = 1;
    return t;
}

} // namespace

TEST(BuildAdjacency, SinglePatchHasNoEdges) { EXPECT_TRUE(build_adjacency({{0, 0}}).empty()); }

TEST(BuildAdjacency, TwoNeighborsShareOneEdge) {
    auto e = build_adjacency({{0, 0}, {0, 1}});
    ASSERT_EQ(e.size(), 1u);
    EXPECT_EQ(e[0], Edge(0, 1));
}

TEST(BuildAdjacency, FullThreeByThreeGrid) {
    std::vector<GridCoord> c;
    for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) c.push_back({r, k});
    auto e = build_adjacency(c);
    EXPECT_EQ(e, gtp::testing::brute_force_edges(c));
    EXPECT_EQ(e.size(), 20u);
    std::vector<int> deg(9, 0);
    for (auto [i, j] : e) ++deg[i], ++deg[j];
    EXPECT_EQ(deg[4], 8);
    for (int corner : {0, 2, 6, 8}) EXPECT_EQ(deg[corner], 3);
    for (int mid : {1, 3, 5, 7}) EXPECT_EQ(deg[mid], 5);
}

TEST(BuildAdjacency, FourConnectivity) {
    std::vector<GridCoord> c{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    EXPECT_EQ(build_adjacency(c, 4).size(), 4u);
    EXPECT_EQ(build_adjacency(c, 4), gtp::testing::brute_force_edges(c, 4));
}

TEST(BuildAdjacency, DuplicateCoordinatesRejected) {
    EXPECT_THROW(build_adjacency({{1, 1}, {0, 0}, {1, 1}}), DataError);
}

TEST(BuildAdjacency, MatchesBruteForceUpTo200Nodes) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 60; ++trial) {
        std::uniform_int_distribution<int> side(1, 16);
        const int rows = side(rng), cols = side(rng);
        auto coords = gtp::testing::random_grid_with_holes(rng, rows, cols, 0.3);
        if (coords.size() > 200) coords.resize(200);
        const auto e = build_adjacency(coords);
        EXPECT_EQ(e, gtp::testing::brute_force_edges(coords));
        std::vector<int> deg(coords.size(), 0);
        for (auto [i, j] : e) ++deg[i], ++deg[j];
        for (int d : deg) EXPECT_LE(d, 8);
    }
}

TEST(BuildAdjacency, FullGridHasNoIsolatedNodes) {
    std::vector<GridCoord> c;
    for (int r = 0; r < 5; ++r)
        for (int k = 0; k < 7; ++k) c.push_back({r, k});
    std::vector<int> deg(c.size(), 0);
    for (auto [i, j] : build_adjacency(c)) ++deg[i], ++deg[j];
    for (int d : deg) {
        EXPECT_GE(d, 1);
        EXPECT_LE(d, 8);
    }
}

TEST(NormalizeAdjacency, IsolatedNode) {
    Tensor a = normalize_adjacency({}, 1);
    EXPECT_EQ(a, Tensor::matrix(1, 1, {1.0}));
}

TEST(NormalizeAdjacency, TwoNodePath) {
    Tensor a = normalize_adjacency({{0, 1}}, 2);
    for (double v : a.data()) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(NormalizeAdjacency, ThreeNodePathFromDirectFormula) {
    Tensor a = normalize_adjacency({{0, 1}, {1, 2}}, 3);
    const double d[3] = {2, 3, 2};
    const double at[3][3] = {{1, 1, 0}, {1, 1, 1}, {0, 1, 1}};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_NEAR(a(i, j), at[i][j] / std::sqrt(d[i] * d[j]), 1e-15);
}

TEST(NormalizeAdjacency, EmptyGraphRejected) { EXPECT_THROW(normalize_adjacency({}, 0), std::invalid_argument); }

TEST(NormalizeAdjacency, SymmetricWithUnitSpectralRadius) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 40; ++trial) {
        auto coords = gtp::testing::random_grid_with_holes(rng, 12, 12, 0.35);
        Tensor a = normalize_adjacency(build_adjacency(coords), coords.size());
        EXPECT_LE(gtp::testing::max_asymmetry(a), 1e-12);
        EXPECT_LE(gtp::testing::spectral_radius_symmetric(a), 1.0 + 1e-9);
        for (std::size_t i = 0; i < coords.size(); ++i) EXPECT_GT(a(i, i), 0.0);
    }
}

TEST(AssembleGraph, TwoByTwoBlock) {
    auto tiles = fake_tiles({{0, 0}, {0, 1}, {1, 0}, {1, 1}}, 2, 2);
    Tensor emb({4, 3}, 1.0);
    WsiGraph g = assemble_graph(tiles, emb, 1);
    EXPECT_EQ(g.edges.size(), 6u);
    EXPECT_EQ(g.edges, gtp::testing::brute_force_edges(tiles.coords));
}

TEST(AssembleGraph, RejectsEmptyAndMismatched) {
    EXPECT_THROW(assemble_graph(fake_tiles({}, 2, 2), Tensor({0, 3}), 0), DataError);
    EXPECT_THROW(assemble_graph(fake_tiles({{0, 0}, {0, 1}}, 2, 2), Tensor({3, 3}), 0), DataError);
}

TEST(AssembleGraph, PermutationGivesIsomorphicGraph) {
    std::mt19937_64 rng(8);
    WsiGraph g = gtp::testing::random_graph(rng, 5, 5, 0.2, 4, 2);
    std::vector<std::size_t> perm(g.num_nodes());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    WsiGraph p = permute_nodes(g, perm);
    EXPECT_NO_THROW(validate(p));
    EXPECT_EQ(p.edges, build_adjacency(p.coords));
    for (std::size_t i = 0; i < g.num_nodes(); ++i) {
        EXPECT_EQ(p.coords[perm[i]], g.coords[i]);
        for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(p.features(perm[i], k), g.features(i, k));
    }
}

TEST(GraphContainer, RoundTripAndValidation) {
    std::mt19937_64 rng(12);
    WsiGraph g = gtp::testing::random_graph(rng, 6, 6, 0.25, 5, 1);
    for (double& v : g.features.data()) v = static_cast<float>(v);
    g.slide_id = "s001";
    auto dir = std::filesystem::temp_directory_path() / "gtp_graph_test";
    std::filesystem::remove_all(dir);
    save_graph(dir, g);
    WsiGraph back = load_graph(dir);
    EXPECT_EQ(back.features, g.features);
    EXPECT_EQ(back.edges, g.edges);
    EXPECT_EQ(back.coords, g.coords);
    EXPECT_EQ(back.label, g.label);
    EXPECT_EQ(back.slide_id, "s001");

    write_u32(dir / "edges.u32", {});
    EXPECT_THROW(load_graph(dir), DataError);
    std::filesystem::remove(dir / "features.f32");
    EXPECT_THROW(load_graph(dir), DataError);
}
