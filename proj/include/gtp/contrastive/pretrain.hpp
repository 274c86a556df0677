#pragma once

#include "gtp/contrastive/augment.hpp"
#include "gtp/contrastive/encoder.hpp"

#include <optional>

namespace gtp::contrastive {

/// Contrastive loss over 2K rows where rows (2m, 2m+1) are positive pairs:
/// mean over all 2K ordered pairs of −log softmax of cosine similarity / τ,
/// each row's normalizer excluding itself.
Var nt_xent_loss(Var z, double tau);

struct PretrainConfig {
    EncoderConfig encoder;
    AugmentationConfig augmentation;
    int steps = 300;
    int batch = 64;
    double tau = 0.5;
    double learning_rate = 1e-4;
    std::uint64_t seed = 7;
};

nlohmann::json to_json(const PretrainConfig& c);
PretrainConfig pretrain_config_from_json(const nlohmann::json& doc);

struct PretrainLogEntry {
    int step = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct PretrainResult {
    Encoder encoder;
    std::vector<PretrainLogEntry> log;
    std::optional<double> heldout_loss_initial;
    std::optional<double> heldout_loss_final;
};

/// Cosine-annealed rate: lr0 · ½(1 + cos(π·step/steps)).
double cosine_lr(double lr0, int step, int steps);

/// Loss of the encoder + head on augmented views of `patches` (no update).
double contrastive_loss(const Encoder& enc, const std::vector<const Image*>& patches, const PretrainConfig& config,
                        std::uint64_t seed);

/// Adam on mini-batches of K patches (2K views). `heldout`, when given,
/// supplies a fixed evaluation batch scored before and after training.
PretrainResult pretrain_encoder(const std::vector<Image>& corpus, const PretrainConfig& config,
                                const std::vector<Image>* heldout = nullptr);

} // namespace gtp::contrastive
