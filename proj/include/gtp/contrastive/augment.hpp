#pragma once

#include "gtp/common/image.hpp"

#include <cstdint>
#include <utility>

#include <json.hpp>

namespace gtp::contrastive {

struct AugmentationConfig {
    // Random resized crop: fraction of the patch area kept, then resized back.
    double crop_scale_min = 0.5;
    double crop_scale_max = 1.0;
    double jitter_probability = 0.8;
    double brightness = 0.4;
    double contrast = 0.4;
    double saturation = 0.4;
    double blur_probability = 0.5;
    /// Kernel side as a fraction of the patch side (rounded to an odd size).
    double blur_kernel_fraction = 0.1;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 2.0;

    /// All ranges collapsed: augment() returns its input unchanged.
    static AugmentationConfig identity();
};

nlohmann::json to_json(const AugmentationConfig& c);
AugmentationConfig augmentation_from_json(const nlohmann::json& doc);

/// One random view of an RGB patch.
Image augment(const Image& patch, const AugmentationConfig& config, std::uint64_t seed);

/// Two independent views; deterministic in `seed`.
std::pair<Image, Image> augment_pair(const Image& patch, const AugmentationConfig& config, std::uint64_t seed);

} // namespace gtp::contrastive
