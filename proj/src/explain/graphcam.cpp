#include "gtp/explain/graphcam.hpp"

#include "gtp/common/binary_io.hpp"
#include "gtp/common/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gtp::explain {

using num::Tape;
using num::Var;

double safe_divide(double a, double b) { return b == 0.0 ? 0.0 : a / (b + 1e-9); }

namespace {

Tensor mm_nt(const Tensor& a, const Tensor& b) {
    Tensor c({a.rows(), b.rows()});
    num::gemm_nt(a.data().data(), b.data().data(), c.data().data(), a.rows(), a.cols(), b.rows());
    return c;
}

Tensor mm_tn(const Tensor& a, const Tensor& b) {
    Tensor c({a.cols(), b.cols()});
    num::gemm_tn(a.data().data(), b.data().data(), c.data().data(), a.cols(), a.rows(), b.cols());
    return c;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    num::require_same_shape(a, b, "hadamard");
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b[i];
    return c;
}

Tensor divide(const Tensor& r, const Tensor& z) {
    num::require_same_shape(r, z, "safe_divide");
    Tensor s(r.shape());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = safe_divide(r[i], z[i]);
    return s;
}

double total(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v;
    return s;
}

Tensor scaled(Tensor t, double f) {
    for (double& v : t.data()) v *= f;
    return t;
}

Tensor plus(Tensor a, const Tensor& b) {
    num::require_same_shape(a, b, "plus");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}

// Residual z = a + b.
std::pair<Tensor, Tensor> add_relprop(const Tensor& r, const Tensor& a, const Tensor& b) {
    const Tensor s = divide(r, plus(a, b));
    Tensor ra = hadamard(a, s), rb = hadamard(b, s);
    const double sa = total(ra), sb = total(rb), rs = total(r);
    const double fa = safe_divide(std::abs(sa), std::abs(sa) + std::abs(sb)) * rs;
    const double fb = safe_divide(std::abs(sb), std::abs(sa) + std::abs(sb)) * rs;
    return {scaled(std::move(ra), safe_divide(fa, sa)), scaled(std::move(rb), safe_divide(fb, sb))};
}

// x fanned out to two branches carrying r1, r2.
Tensor clone_relprop(const Tensor& x, const Tensor& r1, const Tensor& r2) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * (safe_divide(r1[i], x[i]) + safe_divide(r2[i], x[i]));
    return out;
}

// z = a·b
std::pair<Tensor, Tensor> matmul_relprop(const Tensor& r, const Tensor& a, const Tensor& b) {
    const Tensor s = divide(r, num::matmul(a, b));
    return {hadamard(a, mm_nt(s, b)), hadamard(b, mm_tn(a, s))};
}

// z = a·bᵀ
std::pair<Tensor, Tensor> matmul_nt_relprop(const Tensor& r, const Tensor& a, const Tensor& b) {
    const Tensor s = divide(r, mm_nt(a, b));
    return {hadamard(a, num::matmul(s, b)), hadamard(b, mm_tn(s, a))};
}

Tensor cols(const Tensor& t, std::size_t begin, std::size_t end) {
    Tensor out({t.rows(), end - begin});
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = t(i, j);
    return out;
}

void put_cols(Tensor& dst, const Tensor& src, std::size_t begin) {
    for (std::size_t i = 0; i < src.rows(); ++i)
        for (std::size_t j = 0; j < src.cols(); ++j) dst(i, begin + j) = src(i, j);
}

} // namespace

Tensor linear_relprop(const Tensor& relevance, const Tensor& x, const Tensor& w) {
    num::require_rank2(x, "linear_relprop");
    num::require_rank2(w, "linear_relprop");
    if (x.cols() != w.rows() || relevance.rows() != x.rows() || relevance.cols() != w.cols()) {
        throw num::DimensionError("linear_relprop: shape mismatch");
    }
    Tensor px = x, nx = x, pw = w, nw = w;
    for (double& v : px.data()) v = std::max(v, 0.0);
    for (double& v : nx.data()) v = std::min(v, 0.0);
    for (double& v : pw.data()) v = std::max(v, 0.0);
    for (double& v : nw.data()) v = std::min(v, 0.0);
    const Tensor s = divide(relevance, plus(num::matmul(px, pw), num::matmul(nx, nw)));
    return plus(hadamard(px, mm_nt(s, pw)), hadamard(nx, mm_nt(s, nw)));
}

std::vector<BlockRelevance> attention_relevance(const model::ForwardTrace& trace, const num::ParameterSet& params,
                                               std::size_t target_class) {
    auto weight = [&](const std::string& name) -> const Tensor& { return params.at(name); };
    if (target_class >= model::kNumClasses) throw std::out_of_range("target class must be 0, 1 or 2");
    if (!trace.tape || trace.blocks.empty()) throw std::invalid_argument("trace has no tape or no transformer blocks");
    Tape& tape = *trace.tape;
    if (tape.consumed()) throw std::invalid_argument("trace tape was already used for a backward pass");
    if (!tape.requires_grad(trace.blocks.front().attention.front())) {
        throw std::invalid_argument("trace was recorded without gradients");
    }
    const std::size_t L = trace.blocks.size();
    std::vector<BlockRelevance> out(L);

    Tensor seed({1, model::kNumClasses});
    seed[target_class] = 1.0;
    tape.backward(trace.logits, seed);
    for (std::size_t l = 0; l < L; ++l)
        for (Var a : trace.blocks[l].attention) out[l].grad.push_back(tape.grad(a));

    // Relevance: head linear, final layernorm (identity), class-token select.
    Tensor r_cls = linear_relprop(seed, trace.cls_norm.value(), weight("head.w"));
    const Tensor& last = trace.blocks.back().output.value();
    Tensor r(last.shape());
    for (std::size_t j = 0; j < last.cols(); ++j) r(0, j) = last(0, j) * safe_divide(r_cls(0, j), last(0, j));

    for (std::size_t l = L; l-- > 0;) {
        const model::BlockTrace& b = trace.blocks[l];
        const std::string p = "block" + std::to_string(l + 1) + ".";
        const std::size_t heads = b.attention.size();

        auto [r_resid, r_mlp] = add_relprop(r, b.resid.value(), b.mlp_out.value());
        r_mlp = linear_relprop(r_mlp, b.mlp_act.value(), weight(p + "mlp2.w"));
        r_mlp = linear_relprop(r_mlp, b.ln2.value(), weight(p + "mlp1.w"));
        r = clone_relprop(b.resid.value(), r_resid, r_mlp);

        auto [r_in, r_msa] = add_relprop(r, b.input.value(), b.msa.value());
        r_msa = linear_relprop(r_msa, b.heads_concat.value(), weight(p + "msa.w"));
        const std::size_t dt = r_msa.cols(), dh = dt / heads;
        Tensor r_qkv({r_msa.rows(), 3 * dt});
        out[l].relevance.resize(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            auto [r_a, r_v] = matmul_relprop(cols(r_msa, h * dh, (h + 1) * dh), b.attention[h].value(), b.v[h].value());
            r_a = scaled(std::move(r_a), 0.5);
            r_v = scaled(std::move(r_v), 0.5);
            out[l].relevance[h] = r_a;
            auto [r_q, r_k] = matmul_nt_relprop(r_a, b.q[h].value(), b.k[h].value());
            put_cols(r_qkv, scaled(std::move(r_q), 0.5), h * dh);
            put_cols(r_qkv, scaled(std::move(r_k), 0.5), dt + h * dh);
            put_cols(r_qkv, r_v, 2 * dt + h * dh);
        }
        Tensor r_ln1 = linear_relprop(r_qkv, b.ln1.value(), weight(p + "qkv.w"));
        r = clone_relprop(b.input.value(), r_in, r_ln1);
    }
    return out;
}

TransformerRelevance transformer_relevance(const std::vector<BlockRelevance>& blocks, bool clamp_positive) {
    if (blocks.empty()) throw std::invalid_argument("transformer_relevance needs at least one block");
    TransformerRelevance out;
    for (const BlockRelevance& b : blocks) {
        if (b.grad.empty() || b.grad.size() != b.relevance.size()) {
            throw std::invalid_argument("every block needs one gradient and one relevance per head");
        }
        const std::size_t n = b.grad.front().rows();
        Tensor a_bar({n, n});
        for (std::size_t h = 0; h < b.grad.size(); ++h) {
            Tensor prod = hadamard(b.grad[h], b.relevance[h]);
            if (clamp_positive)
                for (double& v : prod.data()) v = std::max(v, 0.0);
            a_bar = plus(std::move(a_bar), prod);
        }
        a_bar = plus(scaled(std::move(a_bar), 1.0 / static_cast<double>(b.grad.size())), Tensor::identity(n));
        out.c_t = out.c_t.empty() ? a_bar : num::matmul(out.c_t, a_bar);
        out.a_bar.push_back(std::move(a_bar));
    }
    return out;
}

Tensor reverse_pool(const Tensor& c_t, const Tensor& s) {
    num::require_rank2(c_t, "reverse_pool");
    num::require_rank2(s, "reverse_pool");
    if (c_t.rows() != c_t.cols() || c_t.rows() != s.cols() + 1) {
        throw num::DimensionError("reverse_pool: C_t must be (N_t+1)×(N_t+1) for an N×N_t assignment");
    }
    Tensor c_g({s.rows()});
    for (std::size_t i = 0; i < s.rows(); ++i) {
        double v = 0.0;
        for (std::size_t k = 0; k < s.cols(); ++k) v += s(i, k) * c_t(0, k + 1);
        c_g[i] = v;
    }
    return c_g;
}

RelevanceMap graphcam(const model::GtpModel& m, const graph::WsiGraph& g, std::size_t target_class,
                      const GraphCamOptions& options) {
    if (target_class >= model::kNumClasses) throw std::out_of_range("target class must be 0, 1 or 2");
    model::ForwardOptions fo;
    fo.param_grads = true;
    model::ForwardTrace tr =
        model::forward(m, model::prepare_inputs(g, static_cast<std::size_t>(m.config.pooled_nodes)), fo);
    RelevanceMap out;
    out.target_class = target_class;
    const Tensor& z = tr.logits.value();
    const double mx = *std::max_element(z.data().begin(), z.data().end());
    out.probabilities = Tensor({model::kNumClasses});
    double sum = 0.0;
    for (std::size_t j = 0; j < model::kNumClasses; ++j) sum += out.probabilities[j] = std::exp(z[j] - mx);
    for (std::size_t j = 0; j < model::kNumClasses; ++j) out.probabilities[j] /= sum;

    out.blocks = attention_relevance(tr, m.params, target_class);
    TransformerRelevance t = transformer_relevance(out.blocks, options.clamp_positive);
    out.c_t = std::move(t.c_t);
    out.a_bar = std::move(t.a_bar);
    out.c_g = reverse_pool(out.c_t, tr.s.value());
    return out;
}

double Heatmap::at_pixel(int x, int y) const {
    if (x < 0 || y < 0 || stride <= 0) return 0.0;
    const int c = x / stride, r = y / stride;
    if (r >= grid_rows || c >= grid_cols) return 0.0;
    // Pixels past the last patch's far edge are untiled.
    if (y >= r * stride + patch_size || x >= c * stride + patch_size) return 0.0;
    return grid(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
}

Image Heatmap::to_gray() const {
    Image img(grid_cols, grid_rows, 1);
    for (std::size_t i = 0; i < grid.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * grid[i]));
    return img;
}

Image Heatmap::to_color() const {
    Image img(slide_width, slide_height, 3);
    for (int y = 0; y < slide_height; ++y)
        for (int x = 0; x < slide_width; ++x) {
            const double v = at_pixel(x, y);
            auto ch = [v](double centre) { return std::clamp(1.5 - std::abs(4.0 * v - centre), 0.0, 1.0); };
            std::uint8_t* px = img.at(x, y);
            px[0] = static_cast<std::uint8_t>(std::lround(255.0 * ch(3.0)));
            px[1] = static_cast<std::uint8_t>(std::lround(255.0 * ch(2.0)));
            px[2] = static_cast<std::uint8_t>(std::lround(255.0 * ch(1.0)));
        }
    return img;
}

Heatmap reconstruct_heatmap(const Tensor& c_g, const std::vector<synth::GridCoord>& coords, int grid_rows, int grid_cols,
                            int slide_height, int slide_width, int patch_size, int stride) {
    if (c_g.size() != coords.size()) {
        throw num::DimensionError("reconstruct_heatmap: " + std::to_string(c_g.size()) + " relevances for " +
                                  std::to_string(coords.size()) + " nodes");
    }
    if (grid_rows < 0 || grid_cols < 0 || patch_size <= 0) throw std::invalid_argument("bad heatmap geometry");
    Heatmap h;
    h.grid_rows = grid_rows;
    h.grid_cols = grid_cols;
    h.grid = Tensor({static_cast<std::size_t>(grid_rows), static_cast<std::size_t>(grid_cols)});
    h.slide_height = slide_height;
    h.slide_width = slide_width;
    h.patch_size = patch_size;
    h.stride = stride > 0 ? stride : patch_size;
    double mx = 0.0;
    for (double v : c_g.data()) mx = std::max(mx, v);
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const auto [r, c] = coords[i];
        if (r < 0 || c < 0 || r >= grid_rows || c >= grid_cols) {
            throw DataError("node " + std::to_string(i) + " at (" + std::to_string(r) + "," + std::to_string(c) +
                            ") lies outside the " + std::to_string(grid_rows) + "x" + std::to_string(grid_cols) + " grid");
        }
        h.grid(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = mx > 0.0 ? std::max(c_g[i], 0.0) / mx : 0.0;
    }
    return h;
}

std::vector<double> default_thresholds() {
    std::vector<double> t;
    for (int i = 1; i <= 9; ++i) t.push_back(i / 10.0);
    return t;
}

IouReport binarize_and_iou(const Heatmap& heatmap, const Image& truth_mask, const std::vector<double>& thresholds) {
    if (truth_mask.channels != 1 || truth_mask.width != heatmap.slide_width || truth_mask.height != heatmap.slide_height) {
        throw DataError("truth mask must be one-channel " + std::to_string(heatmap.slide_width) + "x" +
                        std::to_string(heatmap.slide_height));
    }
    IouReport rep;
    rep.thresholds = thresholds;
    for (double t : thresholds) {
        std::size_t inter = 0, uni = 0;
        for (int y = 0; y < truth_mask.height; ++y)
            for (int x = 0; x < truth_mask.width; ++x) {
                const bool p = heatmap.at_pixel(x, y) >= t, q = *truth_mask.at(x, y) != 0;
                inter += p && q;
                uni += p || q;
            }
        const double iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
        if (rep.iou.empty() || iou > rep.max_iou) {
            rep.max_iou = iou;
            rep.argmax_threshold = t;
        }
        rep.iou.push_back(iou);
    }
    return rep;
}

void write_heatmap(const std::filesystem::path& dir, const std::string& stem, const Heatmap& heatmap,
                   const nlohmann::json& sidecar) {
    std::filesystem::create_directories(dir);
    write_pgm(dir / (stem + ".pgm"), heatmap.to_gray());
    write_png(dir / (stem + ".png"), heatmap.to_color());
    write_json(dir / (stem + ".json"), sidecar);
}

} // namespace gtp::explain
