#pragma once

#include "gtp/numerics/tensor.hpp"
#include "gtp/synth/slides.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace gtp::graph {

using num::Tensor;
using synth::GridCoord;
using Edge = std::pair<std::uint32_t, std::uint32_t>;

struct WsiGraph {
    Tensor features;            // N×D
    std::vector<Edge> edges;    // canonical: i<j, sorted
    std::vector<GridCoord> coords;
    std::optional<int> label;
    int patch_size = 0;
    int grid_rows = 0;
    int grid_cols = 0;
    int connectivity = 8;
    std::string slide_id;

    std::size_t num_nodes() const noexcept { return coords.size(); }
    std::size_t feature_dim() const { return features.empty() ? 0 : features.cols(); }
};

/// All pairs at Chebyshev distance 1 (connectivity 8) or Manhattan distance 1
/// (connectivity 4), canonicalized. Throws on duplicate coordinates.
std::vector<Edge> build_adjacency(const std::vector<GridCoord>& coords, int connectivity = 8);

/// Ã = A + I as a dense matrix.
Tensor self_looped_adjacency(const std::vector<Edge>& edges, std::size_t n);
/// Â = D̃^{-1/2} Ã D̃^{-1/2}
Tensor normalize_adjacency(const std::vector<Edge>& edges, std::size_t n);

/// Builds the graph of kept tiles; embedding row i belongs to tile i.
WsiGraph assemble_graph(const synth::TileSet& tiles, const Tensor& embeddings, std::optional<int> label,
                        int connectivity = 8, std::string slide_id = {});

/// Throws DataError describing the first violated invariant.
void validate(const WsiGraph& g);

/// Relabels node i as perm[i]; features, coords and edges move together.
WsiGraph permute_nodes(const WsiGraph& g, const std::vector<std::size_t>& perm);

/// Directory with manifest.json, features.f32, edges.u32, coords.i32.
void save_graph(const std::filesystem::path& dir, const WsiGraph& g);
WsiGraph load_graph(const std::filesystem::path& dir);

} // namespace gtp::graph
