#pragma once

#include "gtp/contrastive/pretrain.hpp"
#include "gtp/explain/graphcam.hpp"
#include "gtp/graph/wsi_graph.hpp"
#include "gtp/metrics/metrics.hpp"
#include "gtp/model/gtp.hpp"
#include "gtp/synth/slides.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace gtp::pipeline {

namespace fs = std::filesystem;

struct TilingConfig {
    double overlap = 0.0;
    double tissue_threshold = 0.5;
    double background_luminance = synth::kDefaultBackgroundLuminance;
};

struct AblationGrid {
    std::vector<int> pooled_nodes{80, 100, 120};
    std::vector<int> gc_layers{1, 3};
    std::vector<int> blocks{3, 6};
};

/// Every science parameter of a run. Patch size lives in `dataset`, the
/// connectivity in `model`, the embedding width in `pretrain.encoder`.
struct RunConfig {
    synth::DatasetConfig dataset;
    TilingConfig tiling;
    contrastive::PretrainConfig pretrain;
    /// Patches drawn from each training slide for the pretraining corpus; 0 = all.
    int pretrain_patches_per_slide = 0;
    model::GtpConfig model;
    model::TrainConfig train;
    int folds = 5;
    std::uint64_t fold_seed = 11;
    bool clamp_positive = true;
    AblationGrid ablation;

    void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const fs::path& path);

using Log = std::function<void(const std::string&)>;

synth::Dataset synth(const RunConfig& c, const fs::path& data_dir);

synth::TileSet tile(const RunConfig& c, const fs::path& data_dir, const synth::SlideEntry& entry);
/// Kept patches as PNGs plus tiles.json with kept and discarded coordinates.
void write_tiles(const fs::path& dir, const synth::TileSet& tiles, const nlohmann::json& echo);

/// Pretraining corpus from the train split, held-out batch from the val split.
contrastive::PretrainResult pretrain(const RunConfig& c, const fs::path& data_dir, const Log& log = {});

struct Embedding {
    std::string slide_id;
    int label = 0;
    int patch_size = 0, grid_rows = 0, grid_cols = 0;
    std::vector<synth::GridCoord> coords;
    num::Tensor features;
};

Embedding embed(const RunConfig& c, const fs::path& data_dir, const synth::SlideEntry& entry,
                const contrastive::Encoder& enc);
void save_embedding(const fs::path& dir, const Embedding& e, const nlohmann::json& echo);
Embedding load_embedding(const fs::path& dir);

graph::WsiGraph build_graph(const Embedding& e, int connectivity);

/// Graphs for every slide of the manifest, from graph_dir/<id>.
std::vector<graph::WsiGraph> load_graphs(const fs::path& graph_dir, const synth::Dataset& ds);

/// Slide-level stratified folds: fold id per slide.
std::vector<int> assign_folds(const std::vector<int>& labels, int folds, std::uint64_t seed);

struct Evaluation {
    std::vector<std::string> slide_ids;
    std::vector<int> labels;
    std::vector<std::array<double, 3>> probabilities;
    metrics::MetricsReport report;
};

Evaluation evaluate(const model::GtpModel& m, const std::vector<const graph::WsiGraph*>& graphs);

struct FoldResult {
    model::TrainResult trained;
    Evaluation test;
};

struct CrossValidation {
    std::vector<int> fold_of;
    std::vector<FoldResult> folds;
    nlohmann::json summary;
};

CrossValidation cross_validate(const RunConfig& c, const std::vector<graph::WsiGraph>& graphs, const Log& log = {});

nlohmann::json predictions_json(const Evaluation& e);

struct Explanation {
    explain::RelevanceMap relevance;
    explain::Heatmap heatmap;
    explain::IouReport iou;
    nlohmann::json sidecar;
};

Explanation explain_slide(const RunConfig& c, const model::GtpModel& m, const graph::WsiGraph& g, const synth::Slide& slide,
                          int target_class);

} // namespace gtp::pipeline
