#pragma once

#include "gtp/common/image.hpp"

#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace gtp::synth {

inline constexpr int kNumClasses = 3;
inline constexpr double kDefaultBackgroundLuminance = 220.0;

struct Slide {
    Image pixels;
    int class_label = 0;
    /// One byte per pixel, 1 inside the tumor region.
    Image truth_mask;
    std::uint64_t seed = 0;
    double tumor_fraction = 0.0;
    int patch_size = 0;
};

/// Renders a slide: near-white background, an elliptical tissue region with a
/// shared stroma texture, and for classes 1 and 2 a patch-aligned tumor blob
/// with a class-specific texture. The tumor covers round(fraction · cells)
/// grid cells. `tumor_fraction` is ignored for class 0.
Slide generate_slide(std::uint64_t seed, int class_label, int height, int width, double tumor_fraction,
                     int patch_size = 512);

struct GridCoord {
    int row = 0;
    int col = 0;
    auto operator<=>(const GridCoord&) const = default;
};

struct TileSet {
    int patch_size = 0;
    int stride = 0;
    int grid_rows = 0;
    int grid_cols = 0;
    int slide_height = 0;
    int slide_width = 0;
    std::vector<Image> patches;
    std::vector<GridCoord> coords;
    /// Row-major over the grid; 1 where the patch survives filtering.
    std::vector<std::uint8_t> kept_mask;
    std::vector<Image> discarded;
    std::vector<GridCoord> discarded_coords;

    std::size_t size() const noexcept { return patches.size(); }
};

/// Row-major windows with stride floor(P·(1 − overlap)).
TileSet tile_slide(const Image& slide, int patch_size, double overlap_fraction = 0.0);

/// Fraction of pixels whose luminance is at or below `background_luminance`.
double tissue_fraction(const Image& patch, double background_luminance = kDefaultBackgroundLuminance);

/// Keeps patches with tissue fraction ≥ threshold; throws DataError when none remain.
TileSet filter_background(TileSet tiles, double tissue_threshold = 0.5,
                          double background_luminance = kDefaultBackgroundLuminance);

/// Rebuilds the slide from kept and discarded patches of a non-overlapping tiling.
Image assemble_tiles(const TileSet& tiles);

// Dataset of slides on disk.
struct DatasetConfig {
    int num_slides = 300;
    std::uint64_t seed = 42;
    int height = 4096;
    int width = 4096;
    int patch_size = 512;
    double tumor_fraction_min = 0.15;
    double tumor_fraction_max = 0.45;
    double train_fraction = 0.7;
    double val_fraction = 0.15;
};

struct SlideEntry {
    std::string id;
    std::uint64_t seed = 0;
    int class_label = 0;
    double tumor_fraction = 0.0;
    std::string split;
    std::string image;
    std::string mask;
    std::string sidecar;
};

struct Dataset {
    DatasetConfig config;
    std::vector<SlideEntry> slides;
};

/// Deterministic slide list: balanced classes (index mod 3), per-slide seeds
/// derived from the dataset seed, stratified train/val/test split.
Dataset plan_dataset(const DatasetConfig& config);
Slide render_entry(const Dataset& dataset, const SlideEntry& entry);

void save_slide(const std::filesystem::path& dir, const SlideEntry& entry, const Slide& slide);
Slide load_slide(const std::filesystem::path& dir, const SlideEntry& entry, int patch_size);

/// Writes every slide plus manifest.json into `dir`.
Dataset synthesize_dataset(const DatasetConfig& config, const std::filesystem::path& dir);

nlohmann::json to_json(const DatasetConfig& config);
DatasetConfig dataset_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const Dataset& dataset);
Dataset dataset_from_json(const nlohmann::json& doc);
Dataset load_dataset(const std::filesystem::path& manifest);

} // namespace gtp::synth
