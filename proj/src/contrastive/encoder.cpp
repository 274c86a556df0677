#include "gtp/contrastive/encoder.hpp"

#include "gtp/common/checkpoint.hpp"
#include "gtp/common/errors.hpp"
#include "gtp/numerics/ops.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace gtp::contrastive {

using namespace gtp::num;

nlohmann::json to_json(const EncoderConfig& c) {
    return {{"input_size", c.input_size},
            {"channels", c.channels},
            {"embedding_dim", c.embedding_dim},
            {"projection_dim", c.projection_dim}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& d) {
    EncoderConfig c;
    c.input_size = d.value("input_size", c.input_size);
    c.channels = d.value("channels", c.channels);
    c.embedding_dim = d.value("embedding_dim", c.embedding_dim);
    c.projection_dim = d.value("projection_dim", c.projection_dim);
    if (c.input_size < 4 || c.embedding_dim < 1 || c.projection_dim < 1) throw std::invalid_argument("invalid encoder sizes");
    for (int ch : c.channels)
        if (ch < 1) throw std::invalid_argument("encoder channel widths must be positive");
    return c;
}

Encoder Encoder::initialize(const EncoderConfig& config, std::uint64_t seed) {
    Encoder enc;
    enc.config = config;
    std::mt19937_64 rng(seed);
    std::size_t in_ch = 3;
    std::vector<int> widths = config.channels;
    widths.push_back(config.embedding_dim);
    for (std::size_t s = 0; s < widths.size(); ++s) {
        const auto out_ch = static_cast<std::size_t>(widths[s]);
        const double std = std::sqrt(2.0 / static_cast<double>(in_ch * 9));
        enc.params.add("conv" + std::to_string(s + 1) + ".w", random_normal({out_ch, in_ch, 3, 3}, std, rng));
        enc.params.add("conv" + std::to_string(s + 1) + ".b", Tensor({out_ch}));
        in_ch = out_ch;
    }
    const auto d = static_cast<std::size_t>(config.embedding_dim), dz = static_cast<std::size_t>(config.projection_dim);
    enc.params.add("proj1.w", random_normal({d, d}, std::sqrt(2.0 / static_cast<double>(d)), rng));
    enc.params.add("proj1.b", Tensor({d}));
    enc.params.add("proj2.w", random_normal({d, dz}, std::sqrt(1.0 / static_cast<double>(d)), rng));
    enc.params.add("proj2.b", Tensor({dz}));
    return enc;
}

Tensor preprocess(const std::vector<const Image*>& patches, int input_size) {
    const auto s = static_cast<std::size_t>(input_size);
    Tensor out({patches.size(), 3, s, s});
    for (std::size_t b = 0; b < patches.size(); ++b) {
        const Image& img = *patches[b];
        if (img.channels != 3 || img.width != img.height || img.width % input_size != 0) {
            throw std::invalid_argument("encoder input must be a square RGB patch whose side is a multiple of " +
                                        std::to_string(input_size));
        }
        const int f = img.width / input_size;
        const double norm = 1.0 / (255.0 * f * f);
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x) {
                double acc[3] = {0, 0, 0};
                for (int dy = 0; dy < f; ++dy)
                    for (int dx = 0; dx < f; ++dx) {
                        const auto* px = img.at(static_cast<int>(x) * f + dx, static_cast<int>(y) * f + dy);
                        for (int c = 0; c < 3; ++c) acc[c] += px[c];
                    }
                for (std::size_t c = 0; c < 3; ++c) out[((b * 3 + c) * s + y) * s + x] = (acc[c] * norm - 0.5) / 0.25;
            }
    }
    return out;
}

Var encode(const BoundParameters& p, const Encoder& enc, Var input) {
    Var h = input;
    for (std::size_t s = 1; s <= enc.stages(); ++s) {
        const std::string stage = "conv" + std::to_string(s);
        h = relu(conv2d(h, p[stage + ".w"], p[stage + ".b"], 2, 1));
    }
    return global_avg_pool(h);
}

Var project(const BoundParameters& p, Var embedding) {
    Var h = relu(add_bias(matmul(embedding, p["proj1.w"]), p["proj1.b"]));
    return add_bias(matmul(h, p["proj2.w"]), p["proj2.b"]);
}

Tensor embed_patches(const Encoder& enc, const std::vector<Image>& patches, std::size_t batch) {
    const auto d = static_cast<std::size_t>(enc.config.embedding_dim);
    Tensor out({patches.size(), d});
    for (std::size_t start = 0; start < patches.size(); start += batch) {
        const std::size_t end = std::min(patches.size(), start + batch);
        std::vector<const Image*> chunk;
        for (std::size_t i = start; i < end; ++i) chunk.push_back(&patches[i]);
        Tape tape;
        BoundParameters p(tape, enc.params, false);
        const Tensor& e = encode(p, enc, tape.constant(preprocess(chunk, enc.config.input_size))).value();
        std::copy(e.data().begin(), e.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * d));
    }
    return out;
}

nlohmann::json encoder_manifest(const Encoder& enc) {
    std::vector<std::string> layers;
    for (std::size_t s = 1; s <= enc.stages(); ++s) layers.push_back("conv3x3/s2+relu");
    layers.push_back("global_avg_pool");
    return {{"kind", "encoder"},
            {"config", to_json(enc.config)},
            {"layers", layers},
            {"D", enc.config.embedding_dim},
            {"D_z", enc.config.projection_dim}};
}

void save_encoder(const std::filesystem::path& dir, const Encoder& enc, const nlohmann::json& extra) {
    nlohmann::json m = encoder_manifest(enc);
    if (extra.is_object())
        for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
    save_checkpoint(dir, m, enc.params);
}

Encoder load_encoder(const std::filesystem::path& dir) {
    Checkpoint ck = load_checkpoint(dir);
    if (ck.manifest.value("kind", std::string{}) != "encoder") throw DataError(dir.string() + " is not an encoder checkpoint");
    Encoder enc;
    try {
        enc.config = encoder_config_from_json(ck.manifest.at("config"));
    } catch (const std::exception& e) {
        throw DataError(dir.string() + ": bad encoder config: " + e.what());
    }
    require_same_layout(Encoder::initialize(enc.config, 0).params, ck.params, dir.string());
    enc.params = std::move(ck.params);
    return enc;
}

} // namespace gtp::contrastive
