#pragma once

#include "gtp/common/image.hpp"
#include "gtp/numerics/parameters.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

namespace gtp::contrastive {

using num::Tensor;
using num::Var;

struct EncoderConfig {
    /// Patches are box-downsampled to input_size × input_size first.
    int input_size = 32;
    /// Widths of the stride-2 conv stages before the last one; the last stage outputs D.
    std::vector<int> channels{8, 16};
    int embedding_dim = 64;
    int projection_dim = 32;
};

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& doc);

/// Strided conv stack + global average pool (patch → R^D) and a two-layer
/// projection head (R^D → R^{D_z}) used only while pretraining.
struct Encoder {
    EncoderConfig config;
    num::ParameterSet params;

    static Encoder initialize(const EncoderConfig& config, std::uint64_t seed);
    std::size_t stages() const { return config.channels.size() + 1; }
};

/// [B, 3, S, S] network input: box downsample, then (v/255 − 0.5)/0.25.
Tensor preprocess(const std::vector<const Image*>& patches, int input_size);

Var encode(const num::BoundParameters& p, const Encoder& enc, Var input);
Var project(const num::BoundParameters& p, Var embedding);

/// Row i = embedding of patch i (projection head not applied).
Tensor embed_patches(const Encoder& enc, const std::vector<Image>& patches, std::size_t batch = 64);

nlohmann::json encoder_manifest(const Encoder& enc);
void save_encoder(const std::filesystem::path& dir, const Encoder& enc, const nlohmann::json& extra = {});
Encoder load_encoder(const std::filesystem::path& dir);

} // namespace gtp::contrastive
