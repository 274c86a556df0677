#include "gtp/synth/slides.hpp"

#include "gtp/common/binary_io.hpp"
#include "gtp/common/errors.hpp"
#include "gtp/common/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>

namespace gtp::synth {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Tissue {
    double cy, cx, ry, rx, wobble, phase;

    bool contains(double y, double x) const {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        const double theta = std::atan2(dy, dx);
        const double r = 1.0 + wobble * std::sin(3.0 * theta + phase);
        return dy * dy + dx * dx <= r * r;
    }
};

struct Texture {
    double cos_a, sin_a, period, phase;

    double u(double x, double y) const { return x * cos_a + y * sin_a; }
    double v(double x, double y) const { return -x * sin_a + y * cos_a; }
};

Texture make_texture(std::mt19937_64& rng, double angle, double period) {
    std::uniform_real_distribution<double> jitter(-0.15, 0.15), phase(0.0, kTwoPi);
    const double a = angle + jitter(rng);
    return {std::cos(a), std::sin(a), period, phase(rng)};
}

std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

// Random-frontier growth of a 4-connected blob of `count` cells, preferring
// cells inside the tissue.
std::vector<std::uint8_t> grow_tumor(std::mt19937_64& rng, int rows, int cols, const std::vector<std::uint8_t>& eligible,
                                     int count) {
    std::vector<std::uint8_t> tumor(eligible.size(), 0);
    if (count <= 0) return tumor;
    auto pick_seed_cell = [&](bool eligible_only) {
        std::vector<int> pool;
        for (int i = 0; i < rows * cols; ++i)
            if (!tumor[i] && (!eligible_only || eligible[i])) pool.push_back(i);
        if (pool.empty()) return -1;
        return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    };
    int placed = 0;
    while (placed < count) {
        std::vector<int> frontier;
        if (placed > 0) {
            for (int i = 0; i < rows * cols; ++i) {
                if (tumor[i] || !eligible[i]) continue;
                const int r = i / cols, c = i % cols;
                const bool touches = (r > 0 && tumor[i - cols]) || (r + 1 < rows && tumor[i + cols]) ||
                                     (c > 0 && tumor[i - 1]) || (c + 1 < cols && tumor[i + 1]);
                if (touches) frontier.push_back(i);
            }
        }
        int cell;
        if (!frontier.empty()) {
            cell = frontier[std::uniform_int_distribution<std::size_t>(0, frontier.size() - 1)(rng)];
        } else {
            cell = pick_seed_cell(true);
            if (cell < 0) cell = pick_seed_cell(false);
        }
        tumor[cell] = 1;
        ++placed;
    }
    return tumor;
}

} // namespace

Slide generate_slide(std::uint64_t seed, int class_label, int height, int width, double tumor_fraction,
                     int patch_size) {
    if (class_label < 0 || class_label >= kNumClasses) throw std::invalid_argument("class label must be 0, 1 or 2");
    if (patch_size <= 0 || height <= 0 || width <= 0 || height % patch_size || width % patch_size) {
        throw std::invalid_argument("slide dimensions " + std::to_string(height) + "x" + std::to_string(width) +
                                    " must be positive multiples of the patch size " + std::to_string(patch_size));
    }
    if (!(tumor_fraction >= 0.0 && tumor_fraction <= 1.0)) throw std::invalid_argument("tumor fraction must lie in [0, 1]");
    if (class_label == 0) tumor_fraction = 0.0;

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Tissue tissue{height * (0.5 + 0.1 * (unit(rng) - 0.5)), width * (0.5 + 0.1 * (unit(rng) - 0.5)),
                        height * (0.50 + 0.10 * unit(rng)),       width * (0.50 + 0.10 * unit(rng)),
                        0.04 + 0.04 * unit(rng),                  kTwoPi * unit(rng)};
    const double p = patch_size;
    const Texture stroma = make_texture(rng, 0.0, p / 5.0);
    const Texture tumor_tex = class_label == 2 ? make_texture(rng, std::numbers::pi / 4.0, p / 4.0)
                                               : make_texture(rng, 0.0, p / 6.0);

    const int rows = height / patch_size, cols = width / patch_size;
    std::vector<std::uint8_t> eligible(static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) eligible[r * cols + c] = tissue.contains((r + 0.5) * p, (c + 0.5) * p);
    const int tumor_cells = static_cast<int>(std::lround(tumor_fraction * rows * cols));
    const std::vector<std::uint8_t> tumor_grid = grow_tumor(rng, rows, cols, eligible, tumor_cells);

    Slide slide;
    slide.pixels = Image(width, height, 3);
    slide.truth_mask = Image(width, height, 1);
    slide.class_label = class_label;
    slide.seed = seed;
    slide.tumor_fraction = tumor_fraction;
    slide.patch_size = patch_size;

    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::uint64_t noise_bits = rng();
            double noise[3];
            for (int ch = 0; ch < 3; ++ch) noise[ch] = static_cast<double>((noise_bits >> (8 * ch)) % 21) - 10.0;
            std::uint8_t* px = slide.pixels.at(x, y);
            const bool in_tumor = tumor_grid[(y / patch_size) * cols + x / patch_size] != 0;
            double rgb[3];
            if (in_tumor) {
                slide.truth_mask.at(x, y)[0] = 1;
                const double u = tumor_tex.u(x, y), v = tumor_tex.v(x, y);
                if (class_label == 1) {
                    const double t = 0.5 + 0.5 * std::sin(kTwoPi * u / tumor_tex.period + tumor_tex.phase);
                    rgb[0] = 172 - 62 * t, rgb[1] = 112 - 58 * t, rgb[2] = 196 - 40 * t;
                } else {
                    const double t = 0.5 + 0.5 * std::sin(kTwoPi * u / tumor_tex.period + tumor_tex.phase) *
                                               std::sin(kTwoPi * v / tumor_tex.period);
                    rgb[0] = 138 - 50 * t, rgb[1] = 86 - 40 * t, rgb[2] = 164 - 50 * t;
                }
            } else if (tissue.contains(y, x)) {
                const double u = stroma.u(x, y), v = stroma.v(x, y);
                const double t = 0.5 + 0.5 * std::sin(kTwoPi * v / stroma.period +
                                                      1.5 * std::sin(kTwoPi * u / (2.5 * stroma.period)) + stroma.phase);
                rgb[0] = 226 - 36 * t, rgb[1] = 168 - 52 * t, rgb[2] = 204 - 30 * t;
            } else {
                rgb[0] = 241, rgb[1] = 240, rgb[2] = 243;
                for (double& n : noise) n /= 3.0;
            }
            for (int ch = 0; ch < 3; ++ch) px[ch] = clamp_byte(rgb[ch] + noise[ch]);
        }
    }
    return slide;
}

TileSet tile_slide(const Image& slide, int patch_size, double overlap_fraction) {
    if (patch_size <= 0) throw std::invalid_argument("patch size must be positive");
    if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0)) throw std::invalid_argument("overlap must lie in [0, 1)");
    if (patch_size > slide.width || patch_size > slide.height) {
        throw std::invalid_argument("patch size " + std::to_string(patch_size) + " exceeds slide " +
                                    std::to_string(slide.width) + "x" + std::to_string(slide.height));
    }
    if (overlap_fraction == 0.0 && (slide.width % patch_size || slide.height % patch_size)) {
        throw std::invalid_argument("patch size must divide the slide dimensions when overlap is 0");
    }
    TileSet tiles;
    tiles.patch_size = patch_size;
    tiles.stride = std::max(1, static_cast<int>(std::floor(patch_size * (1.0 - overlap_fraction) + 1e-9)));
    tiles.grid_rows = (slide.height - patch_size) / tiles.stride + 1;
    tiles.grid_cols = (slide.width - patch_size) / tiles.stride + 1;
    tiles.slide_height = slide.height;
    tiles.slide_width = slide.width;
    for (int r = 0; r < tiles.grid_rows; ++r) {
        for (int c = 0; c < tiles.grid_cols; ++c) {
            tiles.patches.push_back(slide.crop(c * tiles.stride, r * tiles.stride, patch_size, patch_size));
            tiles.coords.push_back({r, c});
        }
    }
    tiles.kept_mask.assign(tiles.patches.size(), 1);
    return tiles;
}

double tissue_fraction(const Image& patch, double background_luminance) {
    if (patch.channels != 3) throw std::invalid_argument("tissue detection needs an RGB patch");
    const std::size_t n = static_cast<std::size_t>(patch.width) * patch.height;
    if (n == 0) return 0.0;
    std::size_t tissue = 0;
    for (std::size_t i = 0; i < n; ++i) tissue += luminance(&patch.pixels[3 * i]) <= background_luminance;
    return static_cast<double>(tissue) / static_cast<double>(n);
}

TileSet filter_background(TileSet tiles, double tissue_threshold, double background_luminance) {
    std::vector<Image> kept;
    std::vector<GridCoord> kept_coords;
    for (std::size_t i = 0; i < tiles.patches.size(); ++i) {
        const GridCoord g = tiles.coords[i];
        if (tissue_fraction(tiles.patches[i], background_luminance) >= tissue_threshold) {
            kept.push_back(std::move(tiles.patches[i]));
            kept_coords.push_back(g);
        } else {
            tiles.kept_mask[g.row * tiles.grid_cols + g.col] = 0;
            tiles.discarded.push_back(std::move(tiles.patches[i]));
            tiles.discarded_coords.push_back(g);
        }
    }
    if (kept.empty()) throw DataError("empty slide: every patch is background");
    tiles.patches = std::move(kept);
    tiles.coords = std::move(kept_coords);
    return tiles;
}

Image assemble_tiles(const TileSet& tiles) {
    if (tiles.stride != tiles.patch_size) throw std::invalid_argument("assemble_tiles needs a non-overlapping tiling");
    Image out(tiles.slide_width, tiles.slide_height, 3);
    for (std::size_t i = 0; i < tiles.patches.size(); ++i)
        out.paste(tiles.patches[i], tiles.coords[i].col * tiles.stride, tiles.coords[i].row * tiles.stride);
    for (std::size_t i = 0; i < tiles.discarded.size(); ++i)
        out.paste(tiles.discarded[i], tiles.discarded_coords[i].col * tiles.stride,
                  tiles.discarded_coords[i].row * tiles.stride);
    return out;
}

Dataset plan_dataset(const DatasetConfig& config) {
    if (config.num_slides < 1) throw std::invalid_argument("dataset needs at least one slide");
    if (!(config.tumor_fraction_min >= 0.0 && config.tumor_fraction_min <= config.tumor_fraction_max &&
          config.tumor_fraction_max <= 1.0)) {
        throw std::invalid_argument("tumor fraction range must satisfy 0 <= min <= max <= 1");
    }
    if (config.train_fraction < 0.0 || config.val_fraction < 0.0 || config.train_fraction + config.val_fraction > 1.0) {
        throw std::invalid_argument("split fractions must be nonnegative and sum to at most 1");
    }
    Dataset ds;
    ds.config = config;
    for (int i = 0; i < config.num_slides; ++i) {
        SlideEntry e;
        char id[32];
        std::snprintf(id, sizeof id, "s%03d", i);
        e.id = id;
        e.seed = derive_seed(config.seed, static_cast<std::uint64_t>(i));
        e.class_label = i % kNumClasses;
        std::mt19937_64 frac_rng(derive_seed(e.seed, 1));
        e.tumor_fraction = e.class_label == 0 ? 0.0
                                              : std::uniform_real_distribution<double>(config.tumor_fraction_min,
                                                                                       config.tumor_fraction_max)(frac_rng);
        e.image = e.id + ".png";
        e.mask = e.id + "_mask.pgm";
        e.sidecar = e.id + ".json";
        ds.slides.push_back(e);
    }
    std::mt19937_64 split_rng(derive_seed(config.seed, 0x5eed));
    for (int cls = 0; cls < kNumClasses; ++cls) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < ds.slides.size(); ++i)
            if (ds.slides[i].class_label == cls) members.push_back(i);
        std::shuffle(members.begin(), members.end(), split_rng);
        const auto n_train = static_cast<std::size_t>(std::lround(config.train_fraction * members.size()));
        const auto n_val = static_cast<std::size_t>(std::lround(config.val_fraction * members.size()));
        for (std::size_t j = 0; j < members.size(); ++j)
            ds.slides[members[j]].split = j < n_train ? "train" : j < n_train + n_val ? "val" : "test";
    }
    return ds;
}

Slide render_entry(const Dataset& dataset, const SlideEntry& entry) {
    return generate_slide(entry.seed, entry.class_label, dataset.config.height, dataset.config.width,
                          entry.tumor_fraction, dataset.config.patch_size);
}

void save_slide(const std::filesystem::path& dir, const SlideEntry& entry, const Slide& slide) {
    write_png(dir / entry.image, slide.pixels);
    Image mask = slide.truth_mask;
    for (auto& v : mask.pixels) v = v ? 255 : 0;
    write_pgm(dir / entry.mask, mask);
    write_json(dir / entry.sidecar,
               {{"seed", slide.seed}, {"class", slide.class_label}, {"tumor_fraction", slide.tumor_fraction}});
}

Slide load_slide(const std::filesystem::path& dir, const SlideEntry& entry, int patch_size) {
    Slide s;
    s.pixels = read_png(dir / entry.image);
    if (s.pixels.channels != 3) throw DataError(entry.image + " is not an RGB image");
    s.truth_mask = read_pgm(dir / entry.mask);
    if (s.truth_mask.width != s.pixels.width || s.truth_mask.height != s.pixels.height) {
        throw DataError(entry.mask + " does not match the slide dimensions");
    }
    for (auto& v : s.truth_mask.pixels) v = v >= 128 ? 1 : 0;
    s.class_label = entry.class_label;
    s.seed = entry.seed;
    s.tumor_fraction = entry.tumor_fraction;
    s.patch_size = patch_size;
    return s;
}

Dataset synthesize_dataset(const DatasetConfig& config, const std::filesystem::path& dir) {
    Dataset ds = plan_dataset(config);
    std::filesystem::create_directories(dir);
    for (const SlideEntry& e : ds.slides) save_slide(dir, e, render_entry(ds, e));
    write_json(dir / "manifest.json", to_json(ds));
    return ds;
}

nlohmann::json to_json(const DatasetConfig& c) {
    return {{"num_slides", c.num_slides},
            {"seed", c.seed},
            {"height", c.height},
            {"width", c.width},
            {"patch_size", c.patch_size},
            {"tumor_fraction_min", c.tumor_fraction_min},
            {"tumor_fraction_max", c.tumor_fraction_max},
            {"train_fraction", c.train_fraction},
            {"val_fraction", c.val_fraction}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json& doc) {
    DatasetConfig c;
    c.num_slides = doc.value("num_slides", c.num_slides);
    c.seed = doc.value("seed", c.seed);
    c.height = doc.value("height", c.height);
    c.width = doc.value("width", c.width);
    c.patch_size = doc.value("patch_size", c.patch_size);
    c.tumor_fraction_min = doc.value("tumor_fraction_min", c.tumor_fraction_min);
    c.tumor_fraction_max = doc.value("tumor_fraction_max", c.tumor_fraction_max);
    c.train_fraction = doc.value("train_fraction", c.train_fraction);
    c.val_fraction = doc.value("val_fraction", c.val_fraction);
    return c;
}

nlohmann::json to_json(const Dataset& ds) {
    nlohmann::json slides = nlohmann::json::array();
    for (const SlideEntry& e : ds.slides) {
        slides.push_back({{"id", e.id},
                          {"seed", e.seed},
                          {"class", e.class_label},
                          {"tumor_fraction", e.tumor_fraction},
                          {"split", e.split},
                          {"image", e.image},
                          {"mask", e.mask},
                          {"sidecar", e.sidecar}});
    }
    return {{"config", to_json(ds.config)}, {"slides", slides}};
}

Dataset dataset_from_json(const nlohmann::json& doc) {
    Dataset ds;
    try {
        ds.config = dataset_config_from_json(doc.at("config"));
        for (const auto& s : doc.at("slides")) {
            SlideEntry e;
            e.id = s.at("id").get<std::string>();
            e.seed = s.at("seed").get<std::uint64_t>();
            e.class_label = s.at("class").get<int>();
            e.tumor_fraction = s.at("tumor_fraction").get<double>();
            e.split = s.at("split").get<std::string>();
            e.image = s.at("image").get<std::string>();
            e.mask = s.at("mask").get<std::string>();
            e.sidecar = s.at("sidecar").get<std::string>();
            if (e.class_label < 0 || e.class_label >= kNumClasses) throw DataError("slide " + e.id + ": bad class");
            if (e.split != "train" && e.split != "val" && e.split != "test") throw DataError("slide " + e.id + ": bad split");
            ds.slides.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("dataset manifest: ") + ex.what());
    }
    return ds;
}

Dataset load_dataset(const std::filesystem::path& manifest) { return dataset_from_json(read_json(manifest)); }

} // namespace gtp::synth
