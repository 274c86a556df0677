#include "gtp/model/gtp.hpp"

#include "gtp/common/checkpoint.hpp"
#include "gtp/common/errors.hpp"
#include "gtp/common/random.hpp"
#include "gtp/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace gtp::model {

using namespace gtp::num;

void GtpConfig::validate() const {
    if (feature_dim < 1 || hidden_dim < 1 || gc_layers < 1 || blocks < 1 || heads < 1 || transformer_dim < 1 ||
        mlp_size < 1 || pooled_nodes < 1) {
        throw std::invalid_argument("model sizes must be positive");
    }
    if (transformer_dim % heads != 0) {
        throw std::invalid_argument("transformer_dim " + std::to_string(transformer_dim) + " is not divisible by heads " +
                                    std::to_string(heads));
    }
    if (connectivity != 4 && connectivity != 8) throw std::invalid_argument("connectivity must be 4 or 8");
    if (lambda_cut < 0.0 || init_std <= 0.0) throw std::invalid_argument("lambda_cut >= 0 and init_std > 0 required");
}

nlohmann::json to_json(const GtpConfig& c) {
    return {{"feature_dim", c.feature_dim}, {"hidden_dim", c.hidden_dim},
            {"gc_layers", c.gc_layers},     {"blocks", c.blocks},
            {"heads", c.heads},             {"transformer_dim", c.transformer_dim},
            {"mlp_size", c.mlp_size},       {"pooled_nodes", c.pooled_nodes},
            {"connectivity", c.connectivity}, {"lambda_cut", c.lambda_cut},
            {"init_std", c.init_std},       {"seed", c.seed}};
}

GtpConfig gtp_config_from_json(const nlohmann::json& d) {
    GtpConfig c;
    c.feature_dim = d.value("feature_dim", c.feature_dim);
    c.hidden_dim = d.value("hidden_dim", c.hidden_dim);
    c.gc_layers = d.value("gc_layers", c.gc_layers);
    c.blocks = d.value("blocks", c.blocks);
    c.heads = d.value("heads", c.heads);
    c.transformer_dim = d.value("transformer_dim", c.transformer_dim);
    c.mlp_size = d.value("mlp_size", c.mlp_size);
    c.pooled_nodes = d.value("pooled_nodes", c.pooled_nodes);
    c.connectivity = d.value("connectivity", c.connectivity);
    c.lambda_cut = d.value("lambda_cut", c.lambda_cut);
    c.init_std = d.value("init_std", c.init_std);
    c.seed = d.value("seed", c.seed);
    c.validate();
    return c;
}

GtpModel GtpModel::initialize(const GtpConfig& c) {
    c.validate();
    GtpModel m;
    m.config = c;
    std::mt19937_64 rng(c.seed);
    auto dim = [](int v) { return static_cast<std::size_t>(v); };
    auto weight = [&](const std::string& name, std::size_t r, std::size_t k) {
        m.params.add(name, random_normal({r, k}, c.init_std, rng));
    };
    auto zeros = [&](const std::string& name, std::size_t n) { m.params.add(name, Tensor({n})); };
    auto ones = [&](const std::string& name, std::size_t n) { m.params.add(name, Tensor({n}, 1.0)); };

    const std::size_t hid = dim(c.hidden_dim), dt = dim(c.transformer_dim), nt = dim(c.pooled_nodes);
    for (int l = 1; l <= c.gc_layers; ++l) weight("gc" + std::to_string(l) + ".w", l == 1 ? dim(c.feature_dim) : hid, hid);
    weight("pool.w", hid, nt);
    zeros("pool.b", nt);
    if (hid != dt) {
        weight("proj.w", hid, dt);
        zeros("proj.b", dt);
    }
    weight("cls", 1, dt);
    for (int l = 1; l <= c.blocks; ++l) {
        const std::string b = "block" + std::to_string(l) + ".";
        ones(b + "ln1.g", dt);
        zeros(b + "ln1.b", dt);
        weight(b + "qkv.w", dt, 3 * dt);
        zeros(b + "qkv.b", 3 * dt);
        weight(b + "msa.w", dt, dt);
        zeros(b + "msa.b", dt);
        ones(b + "ln2.g", dt);
        zeros(b + "ln2.b", dt);
        weight(b + "mlp1.w", dt, dim(c.mlp_size));
        zeros(b + "mlp1.b", dim(c.mlp_size));
        weight(b + "mlp2.w", dim(c.mlp_size), dt);
        zeros(b + "mlp2.b", dt);
    }
    ones("norm.g", dt);
    zeros("norm.b", dt);
    weight("head.w", dt, kNumClasses);
    zeros("head.b", kNumClasses);
    return m;
}

GraphInputs prepare_inputs(const graph::WsiGraph& g, std::size_t pooled_nodes) {
    graph::validate(g);
    GraphInputs in;
    in.num_nodes = g.num_nodes();
    if (pooled_nodes > in.num_nodes) {
        throw DataError("graph " + (g.slide_id.empty() ? std::string("<unnamed>") : g.slide_id) + " has " +
                        std::to_string(in.num_nodes) + " nodes, fewer than pooled_nodes=" + std::to_string(pooled_nodes) +
                        " (min-cut pooling cannot pool up; lower pooled_nodes in the config)");
    }
    in.features = g.features;
    in.a_tilde = graph::self_looped_adjacency(g.edges, in.num_nodes);
    in.a_hat = graph::normalize_adjacency(g.edges, in.num_nodes);
    in.degree_rows = Tensor({in.num_nodes, pooled_nodes});
    for (std::size_t i = 0; i < in.num_nodes; ++i) {
        double d = 0.0;
        for (std::size_t j = 0; j < in.num_nodes; ++j) d += in.a_tilde(i, j);
        for (std::size_t k = 0; k < pooled_nodes; ++k) in.degree_rows(i, k) = d;
    }
    return in;
}

std::vector<std::vector<Tensor>> ForwardTrace::attention_maps() const {
    std::vector<std::vector<Tensor>> out;
    for (const BlockTrace& b : blocks) {
        std::vector<Tensor> heads;
        for (Var a : b.attention) heads.push_back(a.value());
        out.push_back(std::move(heads));
    }
    return out;
}

Var gcn_layer(Var h, Var a_hat, Var w) { return relu(matmul(matmul(a_hat, h), w)); }

Tensor pooled_adjacency(const Tensor& s, const Tensor& a_tilde) {
    Tensor a = num::matmul(s.transposed(), num::matmul(a_tilde, s));
    const std::size_t n = a.rows();
    for (std::size_t i = 0; i < n; ++i) a(i, i) = 0.0;
    std::vector<double> inv(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double d = 0.0;
        for (std::size_t j = 0; j < n; ++j) d += a(i, j);
        inv[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) a(i, j) *= inv[i] * inv[j];
    return a;
}

PoolResult mincut_pool_from_assignment(Var h, Var s, Var a_tilde, Var degree_rows) {
    const std::size_t nt = s.value().cols();
    if (nt > s.value().rows()) throw DataError("min-cut pooling: more clusters than nodes");
    PoolResult r;
    r.s = s;
    r.pooled = matmul_tn(s, h);
    Var num = sum_all(mul(s, matmul(a_tilde, s)));
    Var den = sum_all(mul(square(s), degree_rows));
    r.cut_loss = scale(divide_by_scalar(num, den), -1.0);
    Var ss = matmul_tn(s, s);
    Var ss_unit = divide_by_scalar(ss, sqrt(sum_all(square(ss))));
    Tensor target = Tensor::identity(nt);
    for (double& v : target.data()) v /= std::sqrt(static_cast<double>(nt));
    r.ortho_loss = sqrt(sum_all(square(sub(ss_unit, s.tape->constant(std::move(target))))));
    r.pooled_adjacency = pooled_adjacency(s.value(), a_tilde.value());
    return r;
}

PoolResult mincut_pool(Var h, Var w, Var b, Var a_tilde, Var degree_rows) {
    return mincut_pool_from_assignment(h, softmax_rows(add_bias(matmul(h, w), b)), a_tilde, degree_rows);
}

MsaResult msa(Var x, Var qkv_w, Var qkv_b, Var msa_w, Var msa_b, int heads, const std::vector<Tensor>* offsets) {
    const std::size_t dt = x.value().cols();
    if (heads < 1 || dt % static_cast<std::size_t>(heads) != 0) {
        throw DimensionError("msa: width " + std::to_string(dt) + " is not divisible by " + std::to_string(heads) + " heads");
    }
    const std::size_t dh = dt / static_cast<std::size_t>(heads);
    MsaResult r;
    r.qkv = add_bias(matmul(x, qkv_w), qkv_b);
    std::vector<Var> outs;
    for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
        Var q = slice_cols(r.qkv, h * dh, (h + 1) * dh);
        Var k = slice_cols(r.qkv, dt + h * dh, dt + (h + 1) * dh);
        Var v = slice_cols(r.qkv, 2 * dt + h * dh, 2 * dt + (h + 1) * dh);
        Var a = softmax_rows(scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dh))));
        if (offsets) a = add(a, x.tape->constant(offsets->at(h)));
        r.q.push_back(q);
        r.k.push_back(k);
        r.v.push_back(v);
        r.attention.push_back(a);
        outs.push_back(matmul(a, v));
    }
    r.heads_concat = outs.size() == 1 ? outs.front() : concat_cols(outs);
    r.out = add_bias(matmul(r.heads_concat, msa_w), msa_b);
    return r;
}

namespace {

BlockTrace transformer_block(const BoundParameters& p, const GtpConfig& c, int l, Var t,
                             const std::vector<Tensor>* offsets) {
    const std::string b = "block" + std::to_string(l) + ".";
    BlockTrace bt;
    bt.input = t;
    bt.ln1 = layernorm(t, p[b + "ln1.g"], p[b + "ln1.b"]);
    MsaResult m = msa(bt.ln1, p[b + "qkv.w"], p[b + "qkv.b"], p[b + "msa.w"], p[b + "msa.b"], c.heads, offsets);
    bt.qkv = m.qkv;
    bt.q = std::move(m.q);
    bt.k = std::move(m.k);
    bt.v = std::move(m.v);
    bt.attention = std::move(m.attention);
    bt.heads_concat = m.heads_concat;
    bt.msa = m.out;
    bt.resid = add(t, bt.msa);
    bt.ln2 = layernorm(bt.resid, p[b + "ln2.g"], p[b + "ln2.b"]);
    bt.mlp_pre = add_bias(matmul(bt.ln2, p[b + "mlp1.w"]), p[b + "mlp1.b"]);
    bt.mlp_act = relu(bt.mlp_pre);
    bt.mlp_out = add_bias(matmul(bt.mlp_act, p[b + "mlp2.w"]), p[b + "mlp2.b"]);
    bt.output = add(bt.resid, bt.mlp_out);
    return bt;
}

} // namespace

ForwardTrace forward_on(Tape& tape, const BoundParameters& p, const GtpConfig& c, const GraphInputs& in,
                        const ForwardOptions& options) {
    if (in.features.cols() != static_cast<std::size_t>(c.feature_dim)) {
        throw DataError("graph feature_dim " + std::to_string(in.features.cols()) + " does not match model feature_dim " +
                        std::to_string(c.feature_dim));
    }
    if (in.degree_rows.cols() != static_cast<std::size_t>(c.pooled_nodes)) {
        throw std::invalid_argument("graph inputs were prepared for a different pooled_nodes");
    }
    if (!options.attention_offsets.empty() && options.attention_offsets.size() != static_cast<std::size_t>(c.blocks)) {
        throw std::invalid_argument("attention offsets need one entry per block");
    }
    ForwardTrace tr;
    Var h = tape.constant(in.features);
    Var a_hat = tape.constant(in.a_hat);
    for (int m = 1; m <= c.gc_layers; ++m) h = gcn_layer(h, a_hat, p["gc" + std::to_string(m) + ".w"]);

    PoolResult pool = mincut_pool(h, p["pool.w"], p["pool.b"], tape.constant(in.a_tilde), tape.constant(in.degree_rows));
    tr.s = pool.s;
    tr.pooled = pool.pooled;
    tr.cut_loss = pool.cut_loss;
    tr.ortho_loss = pool.ortho_loss;
    tr.pooled_adjacency = std::move(pool.pooled_adjacency);

    Var x = pool.pooled;
    if (c.hidden_dim != c.transformer_dim) x = add_bias(matmul(x, p["proj.w"]), p["proj.b"]);
    Var t = concat_rows({p["cls"], x});
    tr.tokens = t;
    for (int l = 1; l <= c.blocks; ++l) {
        const std::vector<Tensor>* off = options.attention_offsets.empty() ? nullptr : &options.attention_offsets[l - 1];
        tr.blocks.push_back(transformer_block(p, c, l, t, off));
        t = tr.blocks.back().output;
    }
    tr.cls_final = slice_rows(t, 0, 1);
    tr.cls_norm = layernorm(tr.cls_final, p["norm.g"], p["norm.b"]);
    tr.logits = add_bias(matmul(tr.cls_norm, p["head.w"]), p["head.b"]);
    return tr;
}

ForwardTrace forward(const GtpModel& model, const GraphInputs& in, const ForwardOptions& options) {
    auto tape = std::make_unique<Tape>();
    BoundParameters p(*tape, model.params, options.param_grads);
    ForwardTrace tr = forward_on(*tape, p, model.config, in, options);
    tr.tape = std::move(tape);
    return tr;
}

LossTerms total_loss(const ForwardTrace& trace, std::size_t label, double lambda_cut) {
    if (label >= kNumClasses) throw DataError("label outside {0,1,2}");
    LossTerms t;
    t.ce = cross_entropy(trace.logits, label);
    t.total = add(t.ce, scale(add(trace.cut_loss, trace.ortho_loss), lambda_cut));
    return t;
}

Inference infer(const GtpModel& model, const graph::WsiGraph& g) {
    Inference out{Tensor({kNumClasses}), forward(model, prepare_inputs(g, static_cast<std::size_t>(model.config.pooled_nodes)))};
    const Tensor& z = out.trace.logits.value();
    const double mx = *std::max_element(z.data().begin(), z.data().end());
    double sum = 0.0;
    for (std::size_t j = 0; j < kNumClasses; ++j) sum += out.probabilities[j] = std::exp(z[j] - mx);
    for (std::size_t j = 0; j < kNumClasses; ++j) out.probabilities[j] /= sum;
    return out;
}

double step_lr(double lr0, int step, const std::vector<int>& milestones) {
    double lr = lr0;
    for (int m : milestones)
        if (step >= m) lr *= 0.1;
    return lr;
}

std::vector<int> TrainConfig::resolved_milestones() const {
    if (!milestones.empty()) return milestones;
    return {static_cast<int>(std::lround(30.0 * steps / 150.0)), static_cast<int>(std::lround(100.0 * steps / 150.0))};
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"steps", c.steps},
            {"batch", c.batch},
            {"learning_rate", c.learning_rate},
            {"milestones", c.resolved_milestones()},
            {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& d) {
    TrainConfig c;
    c.steps = d.value("steps", c.steps);
    c.batch = d.value("batch", c.batch);
    c.learning_rate = d.value("learning_rate", c.learning_rate);
    c.milestones = d.value("milestones", c.milestones);
    c.seed = d.value("seed", c.seed);
    if (c.steps < 0 || c.batch < 1 || !(c.learning_rate > 0.0)) {
        throw std::invalid_argument("train: steps >= 0, batch >= 1, learning_rate > 0 required");
    }
    return c;
}

TrainResult train(const std::vector<graph::WsiGraph>& graphs, const GtpConfig& config, const TrainConfig& tc) {
    std::vector<const graph::WsiGraph*> ptrs;
    for (const auto& g : graphs) ptrs.push_back(&g);
    return train(ptrs, config, tc);
}

TrainResult train(const std::vector<const graph::WsiGraph*>& graphs, const GtpConfig& config, const TrainConfig& tc) {
    if (graphs.empty()) throw DataError("empty training set");
    std::vector<GraphInputs> inputs;
    std::vector<std::size_t> labels;
    for (const auto* g : graphs) {
        if (!g->label || *g->label < 0 || *g->label >= static_cast<int>(kNumClasses)) {
            throw DataError("training graph " + g->slide_id + " has no label in {0,1,2}");
        }
        labels.push_back(static_cast<std::size_t>(*g->label));
        inputs.push_back(prepare_inputs(*g, static_cast<std::size_t>(config.pooled_nodes)));
    }
    TrainResult result{GtpModel::initialize(config), {}};
    Adam adam(result.model.params);
    const std::vector<int> milestones = tc.resolved_milestones();
    const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(tc.batch), graphs.size());

    std::mt19937_64 rng(derive_seed(tc.seed, 11));
    std::vector<std::size_t> order(graphs.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;

    for (int step = 0; step < tc.steps; ++step) {
        if (cursor + batch > order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        std::vector<Tensor> grads;
        HistoryRow row;
        row.step = step;
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t idx = order[cursor++];
            Tape tape;
            BoundParameters p(tape, result.model.params);
            ForwardTrace tr = forward_on(tape, p, config, inputs[idx]);
            LossTerms loss = total_loss(tr, labels[idx], config.lambda_cut);
            tape.backward(loss.total);
            std::vector<Tensor> g = p.gradients();
            if (grads.empty()) {
                grads = std::move(g);
            } else {
                for (std::size_t i = 0; i < grads.size(); ++i)
                    for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += g[i][j];
            }
            row.total += loss.total.value().item();
            row.ce += loss.ce.value().item();
            row.cut += tr.cut_loss.value().item();
            row.ortho += tr.ortho_loss.value().item();
        }
        const double inv = 1.0 / static_cast<double>(batch);
        for (Tensor& g : grads)
            for (double& v : g.data()) v *= inv;
        row.total *= inv;
        row.ce *= inv;
        row.cut *= inv;
        row.ortho *= inv;
        row.lr = step_lr(tc.learning_rate, step, milestones);
        adam.step(result.model.params, grads, row.lr);
        result.history.push_back(row);
    }
    return result;
}

std::string history_csv(const std::vector<HistoryRow>& history) {
    std::ostringstream out;
    out.precision(17);
    out << "step,total_loss,ce_loss,cut_loss,ortho_loss,lr\n";
    for (const auto& r : history)
        out << r.step << ',' << r.total << ',' << r.ce << ',' << r.cut << ',' << r.ortho << ',' << r.lr << '\n';
    return out.str();
}

void save_model(const std::filesystem::path& dir, const GtpModel& model, const nlohmann::json& extra) {
    nlohmann::json m{{"kind", "gtp"}, {"config", to_json(model.config)}};
    if (extra.is_object())
        for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
    save_checkpoint(dir, m, model.params);
}

GtpModel load_model(const std::filesystem::path& dir) {
    Checkpoint ck = load_checkpoint(dir);
    if (ck.manifest.value("kind", std::string{}) != "gtp") throw DataError(dir.string() + " is not a GTP model checkpoint");
    GtpModel m;
    try {
        m.config = gtp_config_from_json(ck.manifest.at("config"));
    } catch (const std::exception& e) {
        throw DataError(dir.string() + ": bad model config: " + e.what());
    }
    require_same_layout(GtpModel::initialize(m.config).params, ck.params, dir.string());
    m.params = std::move(ck.params);
    return m;
}

} // namespace gtp::model
