#pragma once

#include "gtp/graph/wsi_graph.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace gtp::testing {

/// Grid of `rows`×`cols` cells with each cell dropped with probability `hole_p`
/// (at least one cell is kept).
inline std::vector<synth::GridCoord> random_grid_with_holes(std::mt19937_64& rng, int rows, int cols, double hole_p) {
    std::bernoulli_distribution hole(hole_p);
    std::vector<synth::GridCoord> out;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            if (!hole(rng)) out.push_back({r, c});
    if (out.empty()) out.push_back({0, 0});
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

inline std::vector<graph::Edge> brute_force_edges(const std::vector<synth::GridCoord>& coords, int connectivity = 8) {
    std::vector<graph::Edge> out;
    for (std::uint32_t i = 0; i < coords.size(); ++i)
        for (std::uint32_t j = i + 1; j < coords.size(); ++j) {
            const int dr = std::abs(coords[i].row - coords[j].row), dc = std::abs(coords[i].col - coords[j].col);
            const bool adj = connectivity == 8 ? std::max(dr, dc) == 1 : dr + dc == 1;
            if (adj) out.emplace_back(i, j);
        }
    return out;
}

inline graph::WsiGraph random_graph(std::mt19937_64& rng, int rows, int cols, double hole_p, std::size_t dim, int label) {
    graph::WsiGraph g;
    g.coords = random_grid_with_holes(rng, rows, cols, hole_p);
    g.edges = graph::build_adjacency(g.coords);
    std::normal_distribution<double> nd(0.0, 1.0);
    g.features = num::Tensor({g.coords.size(), dim});
    for (double& v : g.features.data()) v = nd(rng);
    g.label = label;
    g.patch_size = 64;
    g.grid_rows = rows;
    g.grid_cols = cols;
    return g;
}

inline Eigen::MatrixXd to_eigen(const num::Tensor& t) {
    Eigen::MatrixXd m(t.rows(), t.cols());
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t(i, j);
    return m;
}

inline double spectral_radius_symmetric(const num::Tensor& t) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(to_eigen(t), Eigen::EigenvaluesOnly);
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

inline double max_asymmetry(const num::Tensor& t) {
    double worst = 0.0;
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) worst = std::max(worst, std::abs(t(i, j) - t(j, i)));
    return worst;
}

} // namespace gtp::testing
