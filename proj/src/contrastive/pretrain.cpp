#include "gtp/contrastive/pretrain.hpp"

#include "gtp/common/errors.hpp"
#include "gtp/common/random.hpp"
#include "gtp/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace gtp::contrastive {

using namespace gtp::num;

Var nt_xent_loss(Var z, double tau) {
    const Tensor& zv = z.value();
    if (zv.rank() != 2 || zv.rows() < 2 || zv.rows() % 2 != 0) {
        throw DimensionError("nt_xent_loss: expected 2K rows, got " + shape_string(zv.shape()));
    }
    if (!(tau > 0.0)) throw std::invalid_argument("nt_xent_loss: temperature must be positive");
    const std::size_t n = zv.rows();
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < zv.cols(); ++j) s += zv(i, j) * zv(i, j);
        if (s == 0.0) throw std::invalid_argument("nt_xent_loss: embedding row " + std::to_string(i) + " has zero norm");
    }
    Var zn = normalize_rows(z);
    Var logits = scale(matmul_nt(zn, zn), 1.0 / tau);
    std::vector<bool> off_diagonal(n * n, true);
    for (std::size_t i = 0; i < n; ++i) off_diagonal[i * n + i] = false;
    std::vector<std::size_t> partner(n);
    for (std::size_t i = 0; i < n; ++i) partner[i] = i ^ 1U;
    return scale(mean_all(pick(log_softmax_rows(logits, off_diagonal), partner)), -1.0);
}

nlohmann::json to_json(const PretrainConfig& c) {
    return {{"encoder", to_json(c.encoder)},
            {"augmentation", to_json(c.augmentation)},
            {"steps", c.steps},
            {"batch", c.batch},
            {"tau", c.tau},
            {"learning_rate", c.learning_rate},
            {"seed", c.seed}};
}

PretrainConfig pretrain_config_from_json(const nlohmann::json& d) {
    PretrainConfig c;
    if (d.contains("encoder")) c.encoder = encoder_config_from_json(d.at("encoder"));
    if (d.contains("augmentation")) c.augmentation = augmentation_from_json(d.at("augmentation"));
    c.steps = d.value("steps", c.steps);
    c.batch = d.value("batch", c.batch);
    c.tau = d.value("tau", c.tau);
    c.learning_rate = d.value("learning_rate", c.learning_rate);
    c.seed = d.value("seed", c.seed);
    if (c.steps < 0 || c.batch < 1 || !(c.tau > 0.0) || !(c.learning_rate > 0.0)) {
        throw std::invalid_argument("pretrain: steps >= 0, batch >= 1, tau > 0 and learning_rate > 0 required");
    }
    return c;
}

double cosine_lr(double lr0, int step, int steps) {
    if (steps <= 0) return lr0;
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(steps)));
}

namespace {

// Views 2m and 2m+1 come from patch m.
Tensor make_views(const std::vector<const Image*>& patches, const PretrainConfig& config, std::uint64_t seed) {
    std::vector<Image> views;
    views.reserve(2 * patches.size());
    for (std::size_t m = 0; m < patches.size(); ++m) {
        auto [a, b] = augment_pair(*patches[m], config.augmentation, derive_seed(seed, m));
        views.push_back(std::move(a));
        views.push_back(std::move(b));
    }
    std::vector<const Image*> ptrs;
    for (const Image& v : views) ptrs.push_back(&v);
    return preprocess(ptrs, config.encoder.input_size);
}

} // namespace

double contrastive_loss(const Encoder& enc, const std::vector<const Image*>& patches, const PretrainConfig& config,
                        std::uint64_t seed) {
    Tape tape;
    BoundParameters p(tape, enc.params, false);
    Var z = project(p, encode(p, enc, tape.constant(make_views(patches, config, seed))));
    return nt_xent_loss(z, config.tau).value().item();
}

PretrainResult pretrain_encoder(const std::vector<Image>& corpus, const PretrainConfig& config,
                                const std::vector<Image>* heldout) {
    const auto k = static_cast<std::size_t>(config.batch);
    if (corpus.size() < k) {
        throw DataError("pretraining corpus has " + std::to_string(corpus.size()) +
                        " patches, fewer than one mini-batch of " + std::to_string(k));
    }
    PretrainResult result;
    result.encoder = Encoder::initialize(config.encoder, derive_seed(config.seed, 1));
    Adam adam(result.encoder.params);

    std::vector<const Image*> eval_batch;
    const std::uint64_t eval_seed = derive_seed(config.seed, 3);
    if (heldout && !heldout->empty()) {
        for (std::size_t i = 0; i < std::min(k, heldout->size()); ++i) eval_batch.push_back(&(*heldout)[i]);
        result.heldout_loss_initial = contrastive_loss(result.encoder, eval_batch, config, eval_seed);
    }

    std::mt19937_64 rng(derive_seed(config.seed, 2));
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    for (int step = 0; step < config.steps; ++step) {
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<const Image*> batch;
        for (std::size_t i = 0; i < k; ++i) batch.push_back(&corpus[order[i]]);

        Tape tape;
        BoundParameters p(tape, result.encoder.params);
        Var z = project(p, encode(p, result.encoder,
                                  tape.constant(make_views(batch, config, derive_seed(config.seed, 1000 + step)))));
        Var loss = nt_xent_loss(z, config.tau);
        tape.backward(loss);
        const double lr = cosine_lr(config.learning_rate, step, config.steps);
        adam.step(result.encoder.params, p.gradients(), lr);
        result.log.push_back({step, loss.value().item(), lr});
    }

    if (!eval_batch.empty()) result.heldout_loss_final = contrastive_loss(result.encoder, eval_batch, config, eval_seed);
    return result;
}

} // namespace gtp::contrastive
