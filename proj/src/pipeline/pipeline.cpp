#include "gtp/pipeline/pipeline.hpp"

#include "gtp/common/binary_io.hpp"
#include "gtp/common/errors.hpp"
#include "gtp/common/random.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace gtp::pipeline {

using nlohmann::json;

void RunConfig::validate() const {
    model.validate();
    if (model.feature_dim != pretrain.encoder.embedding_dim) {
        throw DataError("model.feature_dim (" + std::to_string(model.feature_dim) +
                        ") must equal pretrain.encoder.embedding_dim (" + std::to_string(pretrain.encoder.embedding_dim) + ")");
    }
    if (!(tiling.overlap >= 0.0 && tiling.overlap < 1.0)) throw DataError("tiling.overlap must lie in [0, 1)");
    if (!(tiling.tissue_threshold >= 0.0 && tiling.tissue_threshold <= 1.0)) {
        throw DataError("tiling.tissue_threshold must lie in [0, 1]");
    }
    if (folds < 2) throw DataError("folds must be at least 2");
    if (pretrain_patches_per_slide < 0) throw DataError("pretrain_patches_per_slide must be >= 0");
}

json to_json(const RunConfig& c) {
    return {{"dataset", synth::to_json(c.dataset)},
            {"tiling",
             {{"overlap", c.tiling.overlap},
              {"tissue_threshold", c.tiling.tissue_threshold},
              {"background_luminance", c.tiling.background_luminance}}},
            {"pretrain", contrastive::to_json(c.pretrain)},
            {"pretrain_patches_per_slide", c.pretrain_patches_per_slide},
            {"model", model::to_json(c.model)},
            {"train", model::to_json(c.train)},
            {"folds", c.folds},
            {"fold_seed", c.fold_seed},
            {"clamp_positive", c.clamp_positive},
            {"ablation",
             {{"pooled_nodes", c.ablation.pooled_nodes},
              {"gc_layers", c.ablation.gc_layers},
              {"blocks", c.ablation.blocks}}}};
}

RunConfig run_config_from_json(const json& doc) {
    static const std::set<std::string> known{"dataset", "tiling", "pretrain", "pretrain_patches_per_slide", "model",
                                             "train", "folds", "fold_seed", "clamp_positive", "ablation"};
    if (!doc.is_object()) throw DataError("run config must be a JSON object");
    for (const auto& [k, v] : doc.items())
        if (!known.contains(k)) throw DataError("unknown run config key '" + k + "'");
    RunConfig c;
    try {
        if (doc.contains("dataset")) c.dataset = synth::dataset_config_from_json(doc["dataset"]);
        if (doc.contains("tiling")) {
            const json& t = doc["tiling"];
            c.tiling.overlap = t.value("overlap", c.tiling.overlap);
            c.tiling.tissue_threshold = t.value("tissue_threshold", c.tiling.tissue_threshold);
            c.tiling.background_luminance = t.value("background_luminance", c.tiling.background_luminance);
        }
        if (doc.contains("pretrain")) c.pretrain = contrastive::pretrain_config_from_json(doc["pretrain"]);
        c.pretrain_patches_per_slide = doc.value("pretrain_patches_per_slide", c.pretrain_patches_per_slide);
        if (doc.contains("model")) c.model = model::gtp_config_from_json(doc["model"]);
        if (doc.contains("train")) c.train = model::train_config_from_json(doc["train"]);
        c.folds = doc.value("folds", c.folds);
        c.fold_seed = doc.value("fold_seed", c.fold_seed);
        c.clamp_positive = doc.value("clamp_positive", c.clamp_positive);
        if (doc.contains("ablation")) {
            const json& a = doc["ablation"];
            c.ablation.pooled_nodes = a.value("pooled_nodes", c.ablation.pooled_nodes);
            c.ablation.gc_layers = a.value("gc_layers", c.ablation.gc_layers);
            c.ablation.blocks = a.value("blocks", c.ablation.blocks);
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("run config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("run config: ") + e.what());
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const fs::path& path) { return run_config_from_json(read_json(path)); }

synth::Dataset synth(const RunConfig& c, const fs::path& data_dir) { return synth::synthesize_dataset(c.dataset, data_dir); }

synth::TileSet tile(const RunConfig& c, const fs::path& data_dir, const synth::SlideEntry& entry) {
    const synth::Slide s = synth::load_slide(data_dir, entry, c.dataset.patch_size);
    return synth::filter_background(synth::tile_slide(s.pixels, c.dataset.patch_size, c.tiling.overlap),
                                    c.tiling.tissue_threshold, c.tiling.background_luminance);
}

namespace {

json coords_json(const std::vector<synth::GridCoord>& coords) {
    json out = json::array();
    for (const auto& g : coords) out.push_back({g.row, g.col});
    return out;
}

std::string patch_name(const synth::GridCoord& g) { return "r" + std::to_string(g.row) + "_c" + std::to_string(g.col) + ".png"; }

} // namespace

void write_tiles(const fs::path& dir, const synth::TileSet& tiles, const json& echo) {
    fs::create_directories(dir);
    json files = json::array();
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        write_png(dir / patch_name(tiles.coords[i]), tiles.patches[i]);
        files.push_back(patch_name(tiles.coords[i]));
    }
    write_json(dir / "tiles.json", {{"patch_size", tiles.patch_size},
                                    {"stride", tiles.stride},
                                    {"grid_rows", tiles.grid_rows},
                                    {"grid_cols", tiles.grid_cols},
                                    {"slide_height", tiles.slide_height},
                                    {"slide_width", tiles.slide_width},
                                    {"kept", coords_json(tiles.coords)},
                                    {"files", files},
                                    {"discarded", coords_json(tiles.discarded_coords)},
                                    {"run_config", echo}});
}

contrastive::PretrainResult pretrain(const RunConfig& c, const fs::path& data_dir, const Log& log) {
    const synth::Dataset ds = synth::load_dataset(data_dir / "manifest.json");
    std::vector<Image> corpus, heldout;
    for (std::size_t i = 0; i < ds.slides.size(); ++i) {
        const auto& e = ds.slides[i];
        if (e.split != "train" && e.split != "val") continue;
        synth::TileSet t = tile(c, data_dir, e);
        std::vector<std::size_t> pick(t.size());
        std::iota(pick.begin(), pick.end(), 0);
        if (c.pretrain_patches_per_slide > 0 && pick.size() > static_cast<std::size_t>(c.pretrain_patches_per_slide)) {
            std::mt19937_64 rng(derive_seed(c.pretrain.seed, 100 + i));
            std::shuffle(pick.begin(), pick.end(), rng);
            pick.resize(static_cast<std::size_t>(c.pretrain_patches_per_slide));
            std::sort(pick.begin(), pick.end());
        }
        auto& dst = e.split == "train" ? corpus : heldout;
        for (std::size_t p : pick) dst.push_back(std::move(t.patches[p]));
    }
    if (heldout.size() > static_cast<std::size_t>(c.pretrain.batch)) {
        std::mt19937_64 rng(derive_seed(c.pretrain.seed, 99));
        std::shuffle(heldout.begin(), heldout.end(), rng);
        heldout.resize(static_cast<std::size_t>(c.pretrain.batch));
    }
    if (log) log("pretraining on " + std::to_string(corpus.size()) + " patches");
    return contrastive::pretrain_encoder(corpus, c.pretrain, heldout.empty() ? nullptr : &heldout);
}

Embedding embed(const RunConfig& c, const fs::path& data_dir, const synth::SlideEntry& entry, const contrastive::Encoder& enc) {
    synth::TileSet t = tile(c, data_dir, entry);
    Embedding e;
    e.slide_id = entry.id;
    e.label = entry.class_label;
    e.patch_size = t.patch_size;
    e.grid_rows = t.grid_rows;
    e.grid_cols = t.grid_cols;
    e.coords = t.coords;
    e.features = contrastive::embed_patches(enc, t.patches);
    return e;
}

void save_embedding(const fs::path& dir, const Embedding& e, const json& echo) {
    fs::create_directories(dir);
    write_f32(dir / "features.f32", e.features.storage());
    std::vector<std::int32_t> xy;
    for (const auto& g : e.coords) {
        xy.push_back(g.row);
        xy.push_back(g.col);
    }
    write_i32(dir / "coords.i32", xy);
    write_json(dir / "manifest.json", {{"kind", "embedding"},
                                       {"slide_id", e.slide_id},
                                       {"label", e.label},
                                       {"patch_size", e.patch_size},
                                       {"grid_rows", e.grid_rows},
                                       {"grid_cols", e.grid_cols},
                                       {"num_patches", e.coords.size()},
                                       {"dim", e.features.cols()},
                                       {"run_config", echo}});
}

Embedding load_embedding(const fs::path& dir) {
    const json m = read_json(dir / "manifest.json");
    if (m.value("kind", "") != "embedding") throw DataError(dir.string() + " is not an embedding directory");
    Embedding e;
    try {
        e.slide_id = m.at("slide_id");
        e.label = m.at("label");
        e.patch_size = m.at("patch_size");
        e.grid_rows = m.at("grid_rows");
        e.grid_cols = m.at("grid_cols");
        const std::size_t n = m.at("num_patches"), d = m.at("dim");
        e.features = num::Tensor({n, d}, read_f32(dir / "features.f32", n * d));
        const auto xy = read_i32(dir / "coords.i32", 2 * n);
        for (std::size_t i = 0; i < n; ++i) e.coords.push_back({xy[2 * i], xy[2 * i + 1]});
    } catch (const json::exception& ex) {
        throw DataError(dir.string() + "/manifest.json: " + ex.what());
    }
    return e;
}

graph::WsiGraph build_graph(const Embedding& e, int connectivity) {
    graph::WsiGraph g;
    g.features = e.features;
    g.coords = e.coords;
    g.edges = graph::build_adjacency(e.coords, connectivity);
    g.label = e.label;
    g.patch_size = e.patch_size;
    g.grid_rows = e.grid_rows;
    g.grid_cols = e.grid_cols;
    g.connectivity = connectivity;
    g.slide_id = e.slide_id;
    graph::validate(g);
    return g;
}

std::vector<graph::WsiGraph> load_graphs(const fs::path& graph_dir, const synth::Dataset& ds) {
    std::vector<graph::WsiGraph> out;
    out.reserve(ds.slides.size());
    for (const auto& e : ds.slides) out.push_back(graph::load_graph(graph_dir / e.id));
    return out;
}

std::vector<int> assign_folds(const std::vector<int>& labels, int folds, std::uint64_t seed) {
    std::vector<int> fold(labels.size(), -1);
    std::mt19937_64 rng(seed);
    int next = 0;
    for (int cls = 0; cls < static_cast<int>(model::kNumClasses); ++cls) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == cls) idx.push_back(i);
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t i : idx) fold[i] = next++ % folds;
    }
    return fold;
}

Evaluation evaluate(const model::GtpModel& m, const std::vector<const graph::WsiGraph*>& graphs) {
    Evaluation ev;
    for (const graph::WsiGraph* g : graphs) {
        if (!g->label) throw DataError("graph " + g->slide_id + " has no label to evaluate against");
        const num::Tensor p = model::infer(m, *g).probabilities;
        ev.slide_ids.push_back(g->slide_id);
        ev.labels.push_back(*g->label);
        ev.probabilities.push_back({p[0], p[1], p[2]});
    }
    ev.report = metrics::evaluate(ev.labels, ev.probabilities);
    return ev;
}

CrossValidation cross_validate(const RunConfig& c, const std::vector<graph::WsiGraph>& graphs, const Log& log) {
    CrossValidation cv;
    std::vector<int> labels;
    for (const auto& g : graphs) {
        if (!g.label) throw DataError("graph " + g.slide_id + " has no label");
        labels.push_back(*g.label);
    }
    cv.fold_of = assign_folds(labels, c.folds, c.fold_seed);
    std::vector<metrics::MetricsReport> reports;
    for (int k = 0; k < c.folds; ++k) {
        std::vector<const graph::WsiGraph*> train, test;
        for (std::size_t i = 0; i < graphs.size(); ++i) (cv.fold_of[i] == k ? test : train).push_back(&graphs[i]);
        FoldResult f{model::train(train, c.model, c.train), {}};
        f.test = evaluate(f.trained.model, test);
        if (log) {
            std::ostringstream os;
            os << "fold " << k << ": train " << train.size() << ", test " << test.size() << ", accuracy "
               << f.test.report.confusion.accuracy;
            log(os.str());
        }
        reports.push_back(f.test.report);
        cv.folds.push_back(std::move(f));
    }
    cv.summary = metrics::aggregate_folds(reports);
    return cv;
}

json predictions_json(const Evaluation& e) {
    json out = json::array();
    for (std::size_t i = 0; i < e.slide_ids.size(); ++i) {
        out.push_back({{"slide_id", e.slide_ids[i]},
                       {"label", e.labels[i]},
                       {"predicted", metrics::argmax(e.probabilities[i])},
                       {"probabilities", e.probabilities[i]}});
    }
    return out;
}

Explanation explain_slide(const RunConfig& c, const model::GtpModel& m, const graph::WsiGraph& g, const synth::Slide& slide,
                          int target_class) {
    if (target_class < 0 || target_class >= static_cast<int>(model::kNumClasses)) {
        throw DataError("target class must be 0, 1 or 2");
    }
    Explanation ex;
    ex.relevance = explain::graphcam(m, g, static_cast<std::size_t>(target_class), {c.clamp_positive});
    const int stride = std::max(1, static_cast<int>(std::floor(g.patch_size * (1.0 - c.tiling.overlap))));
    ex.heatmap = explain::reconstruct_heatmap(ex.relevance.c_g, g.coords, g.grid_rows, g.grid_cols, slide.pixels.height,
                                              slide.pixels.width, g.patch_size, stride);
    ex.iou = explain::binarize_and_iou(ex.heatmap, slide.truth_mask);
    ex.sidecar = {{"slide_id", g.slide_id},
                  {"target_class", target_class},
                  {"class_probability", ex.relevance.probabilities[static_cast<std::size_t>(target_class)]},
                  {"probabilities", ex.relevance.probabilities.storage()},
                  {"max_iou", ex.iou.max_iou},
                  {"argmax_threshold", ex.iou.argmax_threshold},
                  {"thresholds", ex.iou.thresholds},
                  {"iou", ex.iou.iou},
                  {"clamp_positive", c.clamp_positive}};
    return ex;
}

} // namespace gtp::pipeline
