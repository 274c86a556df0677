#include "gtp/graph/wsi_graph.hpp"

#include "gtp/common/binary_io.hpp"
#include "gtp/common/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace gtp::graph {
namespace {

bool adjacent(GridCoord a, GridCoord b, int connectivity) {
    const int dr = std::abs(a.row - b.row), dc = std::abs(a.col - b.col);
    if (connectivity == 4) return dr + dc == 1;
    return std::max(dr, dc) == 1;
}

} // namespace

std::vector<Edge> build_adjacency(const std::vector<GridCoord>& coords, int connectivity) {
    if (connectivity != 4 && connectivity != 8) throw std::invalid_argument("connectivity must be 4 or 8");
    std::map<GridCoord, std::uint32_t> index;
    for (std::size_t i = 0; i < coords.size(); ++i) {
        if (!index.emplace(coords[i], static_cast<std::uint32_t>(i)).second) {
            throw DataError("duplicate patch coordinate (" + std::to_string(coords[i].row) + ", " +
                            std::to_string(coords[i].col) + ")");
        }
    }
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < coords.size(); ++i) {
        for (int dr = -1; dr <= 1; ++dr) {
            for (int dc = -1; dc <= 1; ++dc) {
                const GridCoord nb{coords[i].row + dr, coords[i].col + dc};
                if (!adjacent(coords[i], nb, connectivity)) continue;
                auto it = index.find(nb);
                if (it != index.end() && it->second > i) edges.emplace_back(static_cast<std::uint32_t>(i), it->second);
            }
        }
    }
    std::sort(edges.begin(), edges.end());
    return edges;
}

Tensor self_looped_adjacency(const std::vector<Edge>& edges, std::size_t n) {
    if (n == 0) throw std::invalid_argument("adjacency of an empty graph");
    Tensor a = Tensor::identity(n);
    for (auto [i, j] : edges) {
        if (i >= n || j >= n || i == j) throw DataError("invalid edge (" + std::to_string(i) + ", " + std::to_string(j) + ")");
        a(i, j) = 1.0;
        a(j, i) = 1.0;
    }
    return a;
}

Tensor normalize_adjacency(const std::vector<Edge>& edges, std::size_t n) {
    Tensor a = self_looped_adjacency(edges, n);
    std::vector<double> inv_sqrt(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d = 0.0;
        for (std::size_t j = 0; j < n; ++j) d += a(i, j);
        inv_sqrt[i] = 1.0 / std::sqrt(d);
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) a(i, j) *= inv_sqrt[i] * inv_sqrt[j];
    return a;
}

WsiGraph assemble_graph(const synth::TileSet& tiles, const Tensor& embeddings, std::optional<int> label,
                        int connectivity, std::string slide_id) {
    if (tiles.size() == 0) throw DataError("cannot build a graph from an empty tile set");
    if (embeddings.rank() != 2 || embeddings.rows() != tiles.size()) {
        throw DataError("embedding rows (" + num::shape_string(embeddings.shape()) + ") do not match " +
                        std::to_string(tiles.size()) + " kept patches");
    }
    WsiGraph g;
    g.features = embeddings;
    g.coords = tiles.coords;
    g.edges = build_adjacency(g.coords, connectivity);
    g.label = label;
    g.patch_size = tiles.patch_size;
    g.grid_rows = tiles.grid_rows;
    g.grid_cols = tiles.grid_cols;
    g.connectivity = connectivity;
    g.slide_id = std::move(slide_id);
    validate(g);
    return g;
}

void validate(const WsiGraph& g) {
    const std::size_t n = g.num_nodes();
    if (n == 0) throw DataError("graph has no nodes");
    if (g.features.rank() != 2 || g.features.rows() != n) throw DataError("feature rows do not match node count");
    if (!g.features.all_finite()) throw DataError("non-finite node features");
    if (g.label && (*g.label < 0 || *g.label >= synth::kNumClasses)) throw DataError("label outside {0,1,2}");
    for (const auto& c : g.coords) {
        if (c.row < 0 || c.col < 0 || (g.grid_rows > 0 && c.row >= g.grid_rows) || (g.grid_cols > 0 && c.col >= g.grid_cols)) {
            throw DataError("coordinate outside the patch grid");
        }
    }
    if (!std::is_sorted(g.edges.begin(), g.edges.end()) ||
        std::adjacent_find(g.edges.begin(), g.edges.end()) != g.edges.end()) {
        throw DataError("edge list is not canonical (sorted, unique)");
    }
    std::vector<int> degree(n, 0);
    for (auto [i, j] : g.edges) {
        if (i >= j || j >= n) throw DataError("edge (" + std::to_string(i) + ", " + std::to_string(j) + ") is not i<j<N");
        if (!adjacent(g.coords[i], g.coords[j], g.connectivity)) throw DataError("edge joins non-adjacent patches");
        ++degree[i];
        ++degree[j];
    }
    if (g.edges != build_adjacency(g.coords, g.connectivity)) throw DataError("edges are not exactly the adjacent pairs");
    for (int d : degree)
        if (d > 8) throw DataError("node degree exceeds 8");
}

WsiGraph permute_nodes(const WsiGraph& g, const std::vector<std::size_t>& perm) {
    const std::size_t n = g.num_nodes();
    if (perm.size() != n) throw std::invalid_argument("permutation size mismatch");
    WsiGraph out = g;
    const std::size_t d = g.feature_dim();
    for (std::size_t i = 0; i < n; ++i) {
        out.coords[perm[i]] = g.coords[i];
        for (std::size_t k = 0; k < d; ++k) out.features(perm[i], k) = g.features(i, k);
    }
    out.edges.clear();
    for (auto [i, j] : g.edges) {
        auto a = static_cast<std::uint32_t>(perm[i]), b = static_cast<std::uint32_t>(perm[j]);
        out.edges.emplace_back(std::min(a, b), std::max(a, b));
    }
    std::sort(out.edges.begin(), out.edges.end());
    return out;
}

void save_graph(const std::filesystem::path& dir, const WsiGraph& g) {
    validate(g);
    std::filesystem::create_directories(dir);
    nlohmann::json m{{"num_nodes", g.num_nodes()},
                     {"feature_dim", g.feature_dim()},
                     {"num_edges", g.edges.size()},
                     {"patch_size", g.patch_size},
                     {"grid_rows", g.grid_rows},
                     {"grid_cols", g.grid_cols},
                     {"connectivity", g.connectivity},
                     {"slide_id", g.slide_id}};
    m["label"] = g.label ? nlohmann::json(*g.label) : nlohmann::json(nullptr);
    write_json(dir / "manifest.json", m);
    write_f32(dir / "features.f32", g.features.storage());
    std::vector<std::uint32_t> e;
    for (auto [i, j] : g.edges) {
        e.push_back(i);
        e.push_back(j);
    }
    write_u32(dir / "edges.u32", e);
    std::vector<std::int32_t> c;
    for (const auto& p : g.coords) {
        c.push_back(p.row);
        c.push_back(p.col);
    }
    write_i32(dir / "coords.i32", c);
}

WsiGraph load_graph(const std::filesystem::path& dir) {
    const nlohmann::json m = read_json(dir / "manifest.json");
    WsiGraph g;
    std::size_t n = 0, d = 0, ne = 0;
    try {
        n = m.at("num_nodes").get<std::size_t>();
        d = m.at("feature_dim").get<std::size_t>();
        ne = m.at("num_edges").get<std::size_t>();
        g.patch_size = m.at("patch_size").get<int>();
        g.grid_rows = m.value("grid_rows", 0);
        g.grid_cols = m.value("grid_cols", 0);
        g.connectivity = m.value("connectivity", 8);
        g.slide_id = m.value("slide_id", std::string{});
        if (!m.at("label").is_null()) g.label = m.at("label").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError((dir / "manifest.json").string() + ": " + e.what());
    }
    if (n == 0 || d == 0) throw DataError(dir.string() + ": empty graph");
    g.features = Tensor({n, d}, read_f32(dir / "features.f32", n * d));
    const auto e = ne ? read_u32(dir / "edges.u32", 2 * ne) : read_u32(dir / "edges.u32");
    if (e.size() != 2 * ne) throw DataError(dir.string() + ": edge count mismatch");
    for (std::size_t k = 0; k < ne; ++k) g.edges.emplace_back(e[2 * k], e[2 * k + 1]);
    const auto c = read_i32(dir / "coords.i32", 2 * n);
    for (std::size_t k = 0; k < n; ++k) g.coords.push_back({c[2 * k], c[2 * k + 1]});
    validate(g);
    return g;
}

} // namespace gtp::graph
