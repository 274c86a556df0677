#pragma once

#include "gtp/graph/wsi_graph.hpp"
#include "gtp/numerics/parameters.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include <json.hpp>

namespace gtp::model {

using num::Tensor;
using num::Var;

inline constexpr std::size_t kNumClasses = 3;

struct GtpConfig {
    int feature_dim = 64;
    int hidden_dim = 128;
    int gc_layers = 3;        // M
    int blocks = 3;           // L
    int heads = 8;            // k
    int transformer_dim = 64; // D_t
    int mlp_size = 128;
    int pooled_nodes = 120;   // N_t
    int connectivity = 8;
    double lambda_cut = 1.0;
    double init_std = 0.02;
    std::uint64_t seed = 1;

    int head_dim() const { return transformer_dim / heads; }
    void validate() const;
};

nlohmann::json to_json(const GtpConfig& c);
GtpConfig gtp_config_from_json(const nlohmann::json& doc);

struct GtpModel {
    GtpConfig config;
    num::ParameterSet params;

    /// Weights and class token ~ N(0, init_std²); biases 0; layernorm gains 1.
    static GtpModel initialize(const GtpConfig& config);
};

/// Dense per-graph inputs shared by every forward pass over that graph.
struct GraphInputs {
    Tensor features;    // N×D
    Tensor a_hat;       // D̃^{-1/2} Ã D̃^{-1/2}
    Tensor a_tilde;     // A + I
    Tensor degree_rows; // N×N_t, row i filled with D̃_ii
    std::size_t num_nodes = 0;
};

GraphInputs prepare_inputs(const graph::WsiGraph& g, std::size_t pooled_nodes);

struct BlockTrace {
    Var input, ln1, qkv, heads_concat, msa, resid, ln2, mlp_pre, mlp_act, mlp_out, output;
    std::vector<Var> q, k, v, attention;
};

struct ForwardTrace {
    std::unique_ptr<num::Tape> tape;
    Var s;          // N_g×N_t assignment
    Var pooled;     // N_t×hidden
    Var tokens;     // (N_t+1)×D_t before the first block
    std::vector<BlockTrace> blocks;
    Var cls_final;  // 1×D_t class-token row after the last block
    Var cls_norm;
    Var logits;     // 1×3
    Var cut_loss;
    Var ortho_loss;
    Tensor pooled_adjacency;

    /// Per block, per head attention values.
    std::vector<std::vector<Tensor>> attention_maps() const;
};

struct ForwardOptions {
    bool param_grads = false;
    /// Optional additive offsets on attention maps, indexed [block][head].
    std::vector<std::vector<Tensor>> attention_offsets;
};

/// H_{m+1} = ReLU(Â H_m W_m)
Var gcn_layer(Var h, Var a_hat, Var w);

struct PoolResult {
    Var pooled, s, cut_loss, ortho_loss;
    Tensor pooled_adjacency;
};

/// S = softmax_rows(H·W + b); X^pool = SᵀH; L_cut = −Tr(SᵀÃS)/Tr(SᵀD̃S);
/// L_ortho = ‖SᵀS/‖SᵀS‖_F − I/√N_t‖_F. `degree_rows` is N×N_t with row i = D̃_ii.
PoolResult mincut_pool_from_assignment(Var h, Var s, Var a_tilde, Var degree_rows);
PoolResult mincut_pool(Var h, Var w, Var b, Var a_tilde, Var degree_rows);

/// SᵀÃS with zero diagonal, then D^{-1/2}·D^{-1/2} normalized by its row sums.
Tensor pooled_adjacency(const Tensor& s, const Tensor& a_tilde);

struct MsaResult {
    Var qkv, heads_concat, out;
    std::vector<Var> q, k, v, attention;
};

/// Multi-head self-attention: per head A = softmax(q kᵀ/√D_h), SA = A v;
/// heads concatenated and projected. qkv columns are [q heads | k heads | v heads].
MsaResult msa(Var x, Var qkv_w, Var qkv_b, Var msa_w, Var msa_b, int heads,
              const std::vector<Tensor>* attention_offsets = nullptr);

/// Forward on an existing tape with explicitly bound parameters.
ForwardTrace forward_on(num::Tape& tape, const num::BoundParameters& p, const GtpConfig& config,
                        const GraphInputs& in, const ForwardOptions& options = {});
ForwardTrace forward(const GtpModel& model, const GraphInputs& in, const ForwardOptions& options = {});

/// cross-entropy + λ_cut·(L_cut + L_ortho)
struct LossTerms {
    Var total, ce;
};
LossTerms total_loss(const ForwardTrace& trace, std::size_t label, double lambda_cut);

struct Inference {
    Tensor probabilities; // length 3
    ForwardTrace trace;
};
Inference infer(const GtpModel& model, const graph::WsiGraph& g);

/// Step decay: lr0, ×0.1 after each milestone.
double step_lr(double lr0, int step, const std::vector<int>& milestones);

struct TrainConfig {
    int steps = 600;
    int batch = 8;
    double learning_rate = 1e-3;
    /// Empty → {30, 100} scaled by steps/150.
    std::vector<int> milestones;
    std::uint64_t seed = 1;

    std::vector<int> resolved_milestones() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& doc);

struct HistoryRow {
    int step = 0;
    double total = 0, ce = 0, cut = 0, ortho = 0, lr = 0;
};

struct TrainResult {
    GtpModel model;
    std::vector<HistoryRow> history;
};

/// Per-sample forward/backward with gradients summed in batch order and
/// averaged, then one Adam step. Graphs must carry labels in {0,1,2}.
TrainResult train(const std::vector<graph::WsiGraph>& graphs, const GtpConfig& config, const TrainConfig& train);
TrainResult train(const std::vector<const graph::WsiGraph*>& graphs, const GtpConfig& config, const TrainConfig& train);

std::string history_csv(const std::vector<HistoryRow>& history);

void save_model(const std::filesystem::path& dir, const GtpModel& model, const nlohmann::json& extra = {});
GtpModel load_model(const std::filesystem::path& dir);

} // namespace gtp::model
