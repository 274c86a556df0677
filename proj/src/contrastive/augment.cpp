#include "gtp/contrastive/augment.hpp"

#include "gtp/common/random.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

namespace gtp::contrastive {
namespace {

using Planar = std::vector<double>;  // interleaved RGB as doubles

Planar to_float(const Image& img) { return {img.pixels.begin(), img.pixels.end()}; }

Image to_image(const Planar& v, int w, int h) {
    Image out(w, h, 3);
    for (std::size_t i = 0; i < v.size(); ++i)
        out.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v[i]), 0L, 255L));
    return out;
}

Planar resized_crop(const Planar& src, int side, double x0, double y0, double crop) {
    Planar out(static_cast<std::size_t>(side) * side * 3);
    const double step = crop / side;
    for (int y = 0; y < side; ++y) {
        const double sy = std::clamp(y0 + (y + 0.5) * step - 0.5, 0.0, side - 1.0);
        const int iy = std::min(static_cast<int>(sy), side - 2 < 0 ? 0 : side - 2);
        const double fy = side > 1 ? sy - iy : 0.0;
        for (int x = 0; x < side; ++x) {
            const double sx = std::clamp(x0 + (x + 0.5) * step - 0.5, 0.0, side - 1.0);
            const int ix = std::min(static_cast<int>(sx), side - 2 < 0 ? 0 : side - 2);
            const double fx = side > 1 ? sx - ix : 0.0;
            const int ix1 = std::min(ix + 1, side - 1), iy1 = std::min(iy + 1, side - 1);
            for (int c = 0; c < 3; ++c) {
                auto at = [&](int yy, int xx) { return src[(static_cast<std::size_t>(yy) * side + xx) * 3 + c]; };
                out[(static_cast<std::size_t>(y) * side + x) * 3 + c] =
                    (1 - fy) * ((1 - fx) * at(iy, ix) + fx * at(iy, ix1)) + fy * ((1 - fx) * at(iy1, ix) + fx * at(iy1, ix1));
            }
        }
    }
    return out;
}

void color_jitter(Planar& v, double fb, double fc, double fs) {
    for (double& x : v) x *= fb;
    const std::size_t n = v.size() / 3;
    double mean_gray = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean_gray += 0.299 * v[3 * i] + 0.587 * v[3 * i + 1] + 0.114 * v[3 * i + 2];
    mean_gray /= static_cast<double>(n);
    for (double& x : v) x = std::clamp((x - mean_gray) * fc + mean_gray, 0.0, 255.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double g = 0.299 * v[3 * i] + 0.587 * v[3 * i + 1] + 0.114 * v[3 * i + 2];
        for (int c = 0; c < 3; ++c) v[3 * i + c] = std::clamp(g + (v[3 * i + c] - g) * fs, 0.0, 255.0);
    }
}

void gaussian_blur(Planar& v, int side, int ksize, double sigma) {
    const int r = ksize / 2;
    std::vector<double> k(ksize);
    double total = 0.0;
    for (int i = 0; i < ksize; ++i) total += k[i] = std::exp(-0.5 * (i - r) * (i - r) / (sigma * sigma));
    for (double& w : k) w /= total;
    Planar tmp(v.size());
    auto idx = [side](int y, int x, int c) { return (static_cast<std::size_t>(y) * side + x) * 3 + c; };
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (int i = 0; i < ksize; ++i) s += k[i] * v[idx(y, std::clamp(x + i - r, 0, side - 1), c)];
                tmp[idx(y, x, c)] = s;
            }
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (int i = 0; i < ksize; ++i) s += k[i] * tmp[idx(std::clamp(y + i - r, 0, side - 1), x, c)];
                v[idx(y, x, c)] = s;
            }
}

} // namespace

AugmentationConfig AugmentationConfig::identity() {
    AugmentationConfig c;
    c.crop_scale_min = c.crop_scale_max = 1.0;
    c.jitter_probability = 0.0;
    c.brightness = c.contrast = c.saturation = 0.0;
    c.blur_probability = 0.0;
    return c;
}

Image augment(const Image& patch, const AugmentationConfig& cfg, std::uint64_t seed) {
    if (patch.channels != 3 || patch.width != patch.height || patch.width == 0) {
        throw std::invalid_argument("augment expects a square RGB patch");
    }
    const int side = patch.width;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto in_range = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    Planar v = to_float(patch);
    bool touched = false;
    const double area = in_range(cfg.crop_scale_min, cfg.crop_scale_max);
    const double crop = side * std::sqrt(area);
    if (crop < side - 1e-9) {
        v = resized_crop(v, side, in_range(0.0, side - crop), in_range(0.0, side - crop), crop);
        touched = true;
    }
    if (unit(rng) < cfg.jitter_probability) {
        const double fb = in_range(1 - cfg.brightness, 1 + cfg.brightness);
        const double fc = in_range(1 - cfg.contrast, 1 + cfg.contrast);
        const double fs = in_range(1 - cfg.saturation, 1 + cfg.saturation);
        color_jitter(v, fb, fc, fs);
        touched = true;
    }
    if (unit(rng) < cfg.blur_probability) {
        int ksize = static_cast<int>(std::lround(cfg.blur_kernel_fraction * side));
        if (ksize % 2 == 0) ++ksize;
        const double sigma = in_range(cfg.blur_sigma_min, cfg.blur_sigma_max);
        if (ksize > 1 && sigma > 0.0) {
            gaussian_blur(v, side, ksize, sigma);
            touched = true;
        }
    }
    return touched ? to_image(v, side, side) : patch;
}

std::pair<Image, Image> augment_pair(const Image& patch, const AugmentationConfig& config, std::uint64_t seed) {
    return {augment(patch, config, derive_seed(seed, 0)), augment(patch, config, derive_seed(seed, 1))};
}

nlohmann::json to_json(const AugmentationConfig& c) {
    return {{"crop_scale_min", c.crop_scale_min},       {"crop_scale_max", c.crop_scale_max},
            {"jitter_probability", c.jitter_probability}, {"brightness", c.brightness},
            {"contrast", c.contrast},                   {"saturation", c.saturation},
            {"blur_probability", c.blur_probability},   {"blur_kernel_fraction", c.blur_kernel_fraction},
            {"blur_sigma_min", c.blur_sigma_min},       {"blur_sigma_max", c.blur_sigma_max}};
}

AugmentationConfig augmentation_from_json(const nlohmann::json& d) {
    AugmentationConfig c;
    c.crop_scale_min = d.value("crop_scale_min", c.crop_scale_min);
    c.crop_scale_max = d.value("crop_scale_max", c.crop_scale_max);
    c.jitter_probability = d.value("jitter_probability", c.jitter_probability);
    c.brightness = d.value("brightness", c.brightness);
    c.contrast = d.value("contrast", c.contrast);
    c.saturation = d.value("saturation", c.saturation);
    c.blur_probability = d.value("blur_probability", c.blur_probability);
    c.blur_kernel_fraction = d.value("blur_kernel_fraction", c.blur_kernel_fraction);
    c.blur_sigma_min = d.value("blur_sigma_min", c.blur_sigma_min);
    c.blur_sigma_max = d.value("blur_sigma_max", c.blur_sigma_max);
    if (!(c.crop_scale_min > 0.0 && c.crop_scale_min <= c.crop_scale_max && c.crop_scale_max <= 1.0)) {
        throw std::invalid_argument("augmentation crop scale must satisfy 0 < min <= max <= 1");
    }
    return c;
}

} // namespace gtp::contrastive
