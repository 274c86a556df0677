#pragma once

#include "gtp/common/image.hpp"
#include "gtp/model/gtp.hpp"

#include <filesystem>
#include <vector>

#include <json.hpp>

namespace gtp::explain {

using num::Tensor;

/// Per-head attention gradient ∇A and relevance R at the attention map of one block.
struct BlockRelevance {
    std::vector<Tensor> grad;
    std::vector<Tensor> relevance;
};

/// ∇A of the target logit for every block and head, plus relevance propagated
/// from a one-hot at that logit. The trace must be recorded with gradients and
/// its tape must not have been used for a backward pass yet.
std::vector<BlockRelevance> attention_relevance(const model::ForwardTrace& trace, const num::ParameterSet& params,
                                               std::size_t target_class);

/// Input relevance of y = x·W (bias ignored), z+ rule with α=1, β=0.
Tensor linear_relprop(const Tensor& relevance, const Tensor& x, const Tensor& w);

/// safe_divide(a, b): 0 where b == 0, else a / (b + 1e-9).
double safe_divide(double a, double b);

struct TransformerRelevance {
    Tensor c_t;
    std::vector<Tensor> a_bar; // per block
};

/// Ā = mean_h(clamp₊(∇A ⊙ R)) + I, C_t = Ā^(1)·…·Ā^(L).
/// `clamp_positive = false` drops the clamp.
TransformerRelevance transformer_relevance(const std::vector<BlockRelevance>& blocks, bool clamp_positive = true);

/// C_g = S · C_t[0, 1:].
Tensor reverse_pool(const Tensor& c_t, const Tensor& s);

struct RelevanceMap {
    Tensor c_t;
    Tensor c_g;
    std::size_t target_class = 0;
    std::vector<Tensor> a_bar;
    std::vector<BlockRelevance> blocks;
    Tensor probabilities;
};

struct GraphCamOptions {
    bool clamp_positive = true;
};

RelevanceMap graphcam(const model::GtpModel& model, const graph::WsiGraph& g, std::size_t target_class,
                      const GraphCamOptions& options = {});

struct Heatmap {
    int grid_rows = 0;
    int grid_cols = 0;
    Tensor grid; // grid_rows × grid_cols in [0, 1]
    int slide_height = 0;
    int slide_width = 0;
    int patch_size = 0;
    int stride = 0;

    /// Nearest-cell value at slide pixel (x, y); 0 outside the tiled area.
    double at_pixel(int x, int y) const;
    /// One byte per cell, round(255·v).
    Image to_gray() const;
    /// Slide-resolution RGB rendering, blue (0) through red (1).
    Image to_color() const;
};

/// Cell at coords[i] gets max(C_g(i), 0) / max_j max(C_g(j), 0); everything
/// else is 0. `stride` 0 means stride = patch_size.
Heatmap reconstruct_heatmap(const Tensor& c_g, const std::vector<synth::GridCoord>& coords, int grid_rows, int grid_cols,
                            int slide_height, int slide_width, int patch_size, int stride = 0);

struct IouReport {
    std::vector<double> thresholds;
    std::vector<double> iou;
    double max_iou = 0.0;
    double argmax_threshold = 0.0;
};

/// 0.1, 0.2, …, 0.9
std::vector<double> default_thresholds();

/// Pixel IoU of {heatmap ≥ t} against a one-channel mask (nonzero = positive).
IouReport binarize_and_iou(const Heatmap& heatmap, const Image& truth_mask,
                           const std::vector<double>& thresholds = default_thresholds());

/// Writes <stem>.pgm (grid), <stem>.png (slide-resolution colour) and <stem>.json.
void write_heatmap(const std::filesystem::path& dir, const std::string& stem, const Heatmap& heatmap,
                   const nlohmann::json& sidecar);

} // namespace gtp::explain
