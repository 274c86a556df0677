#include "gtp/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gtp::num {
namespace {

Tape& tape_of(Var a) {
    if (!a.tape) throw std::logic_error("Var is not bound to a tape");
    return *a.tape;
}

void require_same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw std::logic_error("op mixes vars from different tapes");
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

// Rows/cols of a tensor viewed as [rows × last-axis].
std::size_t last_dim(const Tensor& t) { return t.shape().empty() ? 1 : t.shape().back(); }

} // namespace

Var matmul(Var a, Var b) {
    require_same_tape(a, b);
    Tape& tape = tape_of(a);
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    Tensor out = num::matmul(av, bv);
    return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
        const Tensor& A = t.value(a);
        const Tensor& B = t.value(b);
        const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_buffer(a.id);
            gemm_nt(g.data().data(), B.data().data(), ga.data().data(), m, n, k);
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_buffer(b.id);
            gemm_tn(A.data().data(), g.data().data(), gb.data().data(), k, m, n);
        }
    });
}

Var matmul_nt(Var a, Var b) {
    require_same_tape(a, b);
    Tape& tape = tape_of(a);
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    require_matrix(av, "matmul_nt");
    require_matrix(bv, "matmul_nt");
    if (av.cols() != bv.cols()) {
        throw DimensionError("matmul_nt: inner dimensions differ, " + shape_string(av.shape()) + " · " +
                             shape_string(bv.shape()) + "ᵀ");
    }
    const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
    Tensor out({m, n});
    gemm_nt(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
    return tape.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g, const Tensor&) {
        const Tensor& A = t.value(a);
        const Tensor& B = t.value(b);
        if (t.requires_grad(a)) gemm_nn(g.data().data(), B.data().data(), t.grad_buffer(a.id).data().data(), m, n, k);
        if (t.requires_grad(b)) gemm_tn(g.data().data(), A.data().data(), t.grad_buffer(b.id).data().data(), n, m, k);
    });
}

Var matmul_tn(Var a, Var b) {
    require_same_tape(a, b);
    Tape& tape = tape_of(a);
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    require_matrix(av, "matmul_tn");
    require_matrix(bv, "matmul_tn");
    if (av.rows() != bv.rows()) {
        throw DimensionError("matmul_tn: inner dimensions differ, " + shape_string(av.shape()) + "ᵀ · " +
                             shape_string(bv.shape()));
    }
    const std::size_t k = av.rows(), m = av.cols(), n = bv.cols();
    Tensor out({m, n});
    gemm_tn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
    return tape.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g, const Tensor&) {
        const Tensor& A = t.value(a);
        const Tensor& B = t.value(b);
        if (t.requires_grad(a)) gemm_nt(B.data().data(), g.data().data(), t.grad_buffer(a.id).data().data(), k, n, m);
        if (t.requires_grad(b)) gemm_nn(A.data().data(), g.data().data(), t.grad_buffer(b.id).data().data(), k, m, n);
    });
}

Var transpose(Var a) {
    Tape& tape = tape_of(a);
    const Tensor& av = tape.value(a);
    require_matrix(av, "transpose");
    return tape.record(av.transposed(), {a}, [a](Tape& t, const Tensor& g, const Tensor&) {
        t.accumulate(a.id, g.transposed());
    });
}

namespace {

template <typename Fwd>
Var elementwise_binary(Var a, Var b, const char* name, Fwd fwd, Tape::BackwardFn bwd) {
    require_same_tape(a, b);
    Tape& tape = tape_of(a);
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    require_same_shape(av, bv, name);
    Tensor out(av.shape());
    auto o = out.data();
    auto x = av.data();
    auto y = bv.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(x[i], y[i]);
    return tape.record(std::move(out), {a, b}, std::move(bwd));
}

} // namespace

Var add(Var a, Var b) {
    return elementwise_binary(a, b, "add", [](double x, double y) { return x + y; },
                              [a, b](Tape& t, const Tensor& g, const Tensor&) {
                                  t.accumulate(a.id, g);
                                  t.accumulate(b.id, g);
                              });
}

Var sub(Var a, Var b) {
    return elementwise_binary(a, b, "sub", [](double x, double y) { return x - y; },
                              [a, b](Tape& t, const Tensor& g, const Tensor&) {
                                  t.accumulate(a.id, g);
                                  if (t.requires_grad(b)) {
                                      auto gb = t.grad_buffer(b.id).data();
                                      auto gg = g.data();
                                      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gg[i];
                                  }
                              });
}

Var mul(Var a, Var b) {
    return elementwise_binary(a, b, "mul", [](double x, double y) { return x * y; },
                              [a, b](Tape& t, const Tensor& g, const Tensor&) {
                                  auto gg = g.data();
                                  auto av = t.value(a).data();
                                  auto bv = t.value(b).data();
                                  if (t.requires_grad(a)) {
                                      auto ga = t.grad_buffer(a.id).data();
                                      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gg[i] * bv[i];
                                  }
                                  if (t.requires_grad(b)) {
                                      auto gb = t.grad_buffer(b.id).data();
                                      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gg[i] * av[i];
                                  }
                              });
}

Var div(Var a, Var b) {
    return elementwise_binary(a, b, "div", [](double x, double y) { return x / y; },
                              [a, b](Tape& t, const Tensor& g, const Tensor&) {
                                  auto gg = g.data();
                                  auto av = t.value(a).data();
                                  auto bv = t.value(b).data();
                                  if (t.requires_grad(a)) {
                                      auto ga = t.grad_buffer(a.id).data();
                                      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gg[i] / bv[i];
                                  }
                                  if (t.requires_grad(b)) {
                                      auto gb = t.grad_buffer(b.id).data();
                                      for (std::size_t i = 0; i < gb.size(); ++i)
                                          gb[i] -= gg[i] * av[i] / (bv[i] * bv[i]);
                                  }
                              });
}

Var add_bias(Var x, Var bias) {
    require_same_tape(x, bias);
    Tape& tape = tape_of(x);
    const Tensor& xv = tape.value(x);
    const Tensor& bv = tape.value(bias);
    require_matrix(xv, "add_bias");
    const std::size_t m = xv.rows(), n = xv.cols();
    if (bv.size() != n) {
        throw DimensionError("add_bias: bias " + shape_string(bv.shape()) + " does not match " +
                             shape_string(xv.shape()));
    }
    Tensor out = xv;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out(i, j) += bv[j];
    return tape.record(std::move(out), {x, bias}, [x, bias, m, n](Tape& t, const Tensor& g, const Tensor&) {
        t.accumulate(x.id, g);
        if (t.requires_grad(bias)) {
            auto gb = t.grad_buffer(bias.id).data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
    });
}

Var scale(Var x, double factor) {
    Tape& tape = tape_of(x);
    Tensor out = tape.value(x);
    for (double& v : out.data()) v *= factor;
    return tape.record(std::move(out), {x}, [x, factor](Tape& t, const Tensor& g, const Tensor&) {
        if (!t.requires_grad(x)) return;
        auto gx = t.grad_buffer(x.id).data();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * g[i];
    });
}

Var divide_by_scalar(Var x, Var s) {
    require_same_tape(x, s);
    Tape& tape = tape_of(x);
    const double sv = tape.value(s).item();
    Tensor out = tape.value(x);
    for (double& v : out.data()) v /= sv;
    return tape.record(std::move(out), {x, s}, [x, s](Tape& t, const Tensor& g, const Tensor&) {
        const double sv = t.value(s).item();
        auto xv = t.value(x).data();
        if (t.requires_grad(x)) {
            auto gx = t.grad_buffer(x.id).data();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] / sv;
        }
        if (t.requires_grad(s)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < xv.size(); ++i) acc += g[i] * xv[i];
            t.grad_buffer(s.id)[0] -= acc / (sv * sv);
        }
    });
}

Var relu(Var x) {
    Tape& tape = tape_of(x);
    Tensor out = tape.value(x);
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return tape.record(std::move(out), {x}, [x](Tape& t, const Tensor& g, const Tensor&) {
        if (!t.requires_grad(x)) return;
        auto xv = t.value(x).data();
        auto gx = t.grad_buffer(x.id).data();
        // Subgradient at 0 is 0.
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (xv[i] > 0.0) gx[i] += g[i];
    });
}

Var sqrt(Var x) {
    Tape& tape = tape_of(x);
    Tensor out = tape.value(x);
    for (double& v : out.data()) {
        if (v < 0.0) throw NumericError("sqrt of negative value");
        v = std::sqrt(v);
    }
    return tape.record(std::move(out), {x}, [x](Tape& t, const Tensor& g, const Tensor& out) {
        if (!t.requires_grad(x)) return;
        auto yv = out.data();
        auto gx = t.grad_buffer(x.id).data();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] / (2.0 * yv[i]);
    });
}

Var square(Var x) { return mul(x, x); }

Var softmax_rows(Var x) {
    Tape& tape = tape_of(x);
    const Tensor& xv = tape.value(x);
    const std::size_t n = last_dim(xv);
    const std::size_t m = xv.size() / std::max<std::size_t>(n, 1);
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = xv.data().data() + i * n;
        double* o = out.data().data() + i * n;
        const double mx = *std::max_element(row, row + n);
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            o[j] = std::exp(row[j] - mx);
            sum += o[j];
        }
        for (std::size_t j = 0; j < n; ++j) o[j] /= sum;
    }
    return tape.record(std::move(out), {x}, [x, m, n](Tape& t, const Tensor& g, const Tensor& yv) {
        if (!t.requires_grad(x)) return;
        Tensor& gx = t.grad_buffer(x.id);
        for (std::size_t i = 0; i < m; ++i) {
            const double* yr = yv.data().data() + i * n;
            const double* gr = g.data().data() + i * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
            double* gxr = gx.data().data() + i * n;
            for (std::size_t j = 0; j < n; ++j) gxr[j] += yr[j] * (gr[j] - dot);
        }
    });
}

Var log_softmax_rows(Var x, const std::vector<bool>& mask) {
    Tape& tape = tape_of(x);
    const Tensor& xv = tape.value(x);
    const std::size_t n = last_dim(xv);
    const std::size_t m = xv.size() / std::max<std::size_t>(n, 1);
    if (!mask.empty() && mask.size() != xv.size()) {
        throw DimensionError("log_softmax_rows: mask length does not match " + shape_string(xv.shape()));
    }
    auto in = [&mask](std::size_t idx) { return mask.empty() || mask[idx]; };
    Tensor out(xv.shape());
    Tensor probs(xv.shape());
    for (std::size_t i = 0; i < m; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < n; ++j)
            if (in(i * n + j)) mx = std::max(mx, xv[i * n + j]);
        if (!std::isfinite(mx)) throw DimensionError("log_softmax_rows: row with no unmasked entries");
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            if (in(i * n + j)) sum += std::exp(xv[i * n + j] - mx);
        const double lse = mx + std::log(sum);
        for (std::size_t j = 0; j < n; ++j) {
            if (!in(i * n + j)) continue;
            out[i * n + j] = xv[i * n + j] - lse;
            probs[i * n + j] = std::exp(out[i * n + j]);
        }
    }
    return tape.record(std::move(out), {x}, [x, m, n, mask, probs = std::move(probs)](Tape& t, const Tensor& g, const Tensor&) {
        if (!t.requires_grad(x)) return;
        auto in = [&mask](std::size_t idx) { return mask.empty() || mask[idx]; };
        Tensor& gx = t.grad_buffer(x.id);
        for (std::size_t i = 0; i < m; ++i) {
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                if (in(i * n + j)) total += g[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
                if (in(i * n + j)) gx[i * n + j] += g[i * n + j] - probs[i * n + j] * total;
        }
    });
}

Var layernorm(Var x, Var gain, Var bias, double eps) {
    require_same_tape(x, gain);
    require_same_tape(x, bias);
    Tape& tape = tape_of(x);
    const Tensor& xv = tape.value(x);
    const std::size_t d = last_dim(xv);
    if (d == 0) throw DimensionError("layernorm: empty last axis");
    if (tape.value(gain).size() != d || tape.value(bias).size() != d) {
        throw DimensionError("layernorm: gain/bias do not match last axis of " + shape_string(xv.shape()));
    }
    const std::size_t m = xv.size() / d;
    Tensor xhat(xv.shape());
    std::vector<double> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* r = xv.data().data() + i * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += r[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (r[j] - mean) * (r[j] - mean);
        var /= static_cast<double>(d);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) xhat[i * d + j] = (r[j] - mean) * inv_std[i];
    }
    const Tensor& gv = tape.value(gain);
    const Tensor& bv = tape.value(bias);
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = gv[j] * xhat[i * d + j] + bv[j];

    return tape.record(std::move(out), {x, gain, bias},
                       [x, gain, bias, m, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                           Tape& t, const Tensor& g, const Tensor&) {
                           const Tensor& gv = t.value(gain);
                           if (t.requires_grad(gain)) {
                               auto gg = t.grad_buffer(gain.id).data();
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
                           }
                           if (t.requires_grad(bias)) {
                               auto gb = t.grad_buffer(bias.id).data();
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
                           }
                           if (!t.requires_grad(x)) return;
                           auto gx = t.grad_buffer(x.id).data();
                           std::vector<double> dxhat(d);
                           for (std::size_t i = 0; i < m; ++i) {
                               double mean_dx = 0.0, mean_dx_xhat = 0.0;
                               for (std::size_t j = 0; j < d; ++j) {
                                   dxhat[j] = g[i * d + j] * gv[j];
                                   mean_dx += dxhat[j];
                                   mean_dx_xhat += dxhat[j] * xhat[i * d + j];
                               }
                               mean_dx /= static_cast<double>(d);
                               mean_dx_xhat /= static_cast<double>(d);
                               for (std::size_t j = 0; j < d; ++j)
                                   gx[i * d + j] += inv_std[i] * (dxhat[j] - mean_dx - xhat[i * d + j] * mean_dx_xhat);
                           }
                       });
}

Var normalize_rows(Var x) {
    Tape& tape = tape_of(x);
    const Tensor& xv = tape.value(x);
    require_matrix(xv, "normalize_rows");
    const std::size_t m = xv.rows(), n = xv.cols();
    Tensor out(xv.shape());
    std::vector<double> norms(m);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += xv(i, j) * xv(i, j);
        norms[i] = std::sqrt(s);
        if (norms[i] == 0.0) throw NumericError("normalize_rows: row " + std::to_string(i) + " has zero norm");
        for (std::size_t j = 0; j < n; ++j) out(i, j) = xv(i, j) / norms[i];
    }
    return tape.record(std::move(out), {x}, [x, m, n, norms = std::move(norms)](Tape& t, const Tensor& g, const Tensor& yv) {
        if (!t.requires_grad(x)) return;
        Tensor& gx = t.grad_buffer(x.id);
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += yv(i, j) * g(i, j);
            for (std::size_t j = 0; j < n; ++j) gx(i, j) += (g(i, j) - yv(i, j) * dot) / norms[i];
        }
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    Tape& tape = tape_of(parts.front());
    const std::size_t n = tape.value(parts.front()).cols();
    std::size_t total = 0;
    for (Var p : parts) {
        require_same_tape(parts.front(), p);
        if (tape.value(p).cols() != n) {
            throw DimensionError("concat_rows: column mismatch " + shape_string(tape.value(parts.front()).shape()) +
                                 " vs " + shape_string(tape.value(p).shape()));
        }
        total += tape.value(p).rows();
    }
    Tensor out({total, n});
    std::size_t offset = 0;
    for (Var p : parts) {
        const Tensor& v = tape.value(p);
        std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset * n));
        offset += v.rows();
    }
    return tape.record(std::move(out), parts, [parts, n](Tape& t, const Tensor& g, const Tensor&) {
        std::size_t offset = 0;
        for (Var p : parts) {
            const std::size_t r = t.value(p).rows();
            if (t.requires_grad(p)) {
                auto gp = t.grad_buffer(p.id).data();
                for (std::size_t i = 0; i < r * n; ++i) gp[i] += g[offset * n + i];
            }
            offset += r;
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    Tape& tape = tape_of(parts.front());
    const std::size_t m = tape.value(parts.front()).rows();
    std::size_t total = 0;
    for (Var p : parts) {
        require_same_tape(parts.front(), p);
        if (tape.value(p).rows() != m) {
            throw DimensionError("concat_cols: row mismatch " + shape_string(tape.value(parts.front()).shape()) +
                                 " vs " + shape_string(tape.value(p).shape()));
        }
        total += tape.value(p).cols();
    }
    Tensor out({m, total});
    std::size_t offset = 0;
    for (Var p : parts) {
        const Tensor& v = tape.value(p);
        const std::size_t c = v.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) out(i, offset + j) = v[i * c + j];
        offset += c;
    }
    return tape.record(std::move(out), parts, [parts, m, total](Tape& t, const Tensor& g, const Tensor&) {
        std::size_t offset = 0;
        for (Var p : parts) {
            const std::size_t c = t.value(p).cols();
            if (t.requires_grad(p)) {
                auto gp = t.grad_buffer(p.id).data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += g[i * total + offset + j];
            }
            offset += c;
        }
    });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
    Tape& tape = tape_of(x);
    const Tensor& xv = tape.value(x);
    require_matrix(xv, "slice_rows");
    if (begin > end || end > xv.rows()) {
        throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of bounds for " + shape_string(xv.shape()));
    }
    const std::size_t n = xv.cols();
    Tensor out({end - begin, n});
    std::copy(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
              xv.data().begin() + static_cast<std::ptrdiff_t>(end * n), out.data().begin());
    return tape.record(std::move(out), {x}, [x, begin, end, n](Tape& t, const Tensor& g, const Tensor&) {
        if (!t.requires_grad(x)) return;
        auto gx = t.grad_buffer(x.id).data();
        for (std::size_t i = 0; i < (end - begin) * n; ++i) gx[begin * n + i] += g[i];
    });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
    Tape& tape = tape_of(x);
    const Tensor& xv = tape.value(x);
    require_matrix(xv, "slice_cols");
    if (begin > end || end > xv.cols()) {
        throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of bounds for " + shape_string(xv.shape()));
    }
    const std::size_t m = xv.rows(), n = xv.cols(), w = end - begin;
    Tensor out({m, w});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out(i, j) = xv(i, begin + j);
    return tape.record(std::move(out), {x}, [x, begin, m, n, w](Tape& t, const Tensor& g, const Tensor&) {
        if (!t.requires_grad(x)) return;
        auto gx = t.grad_buffer(x.id).data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) gx[i * n + begin + j] += g[i * w + j];
    });
}

Var reshape(Var x, Shape shape) {
    Tape& tape = tape_of(x);
    Tensor out = tape.value(x).reshaped(std::move(shape));
    return tape.record(std::move(out), {x}, [x](Tape& t, const Tensor& g, const Tensor&) {
        if (!t.requires_grad(x)) return;
        auto gx = t.grad_buffer(x.id).data();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    });
}

Var mean_over_axis(Var x, std::size_t axis) {
    Tape& tape = tape_of(x);
    const Tensor& xv = tape.value(x);
    require_matrix(xv, "mean_over_axis");
    const std::size_t m = xv.rows(), n = xv.cols();
    if (axis > 1) throw DimensionError("mean_over_axis: axis must be 0 or 1");
    if ((axis == 0 && m == 0) || (axis == 1 && n == 0)) throw DimensionError("mean_over_axis: empty axis");
    Tensor out = axis == 0 ? Tensor({1, n}) : Tensor({m, 1});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += xv(i, j);
    const double denom = static_cast<double>(axis == 0 ? m : n);
    for (double& v : out.data()) v /= denom;
    return tape.record(std::move(out), {x}, [x, axis, m, n, denom](Tape& t, const Tensor& g, const Tensor&) {
        if (!t.requires_grad(x)) return;
        Tensor& gx = t.grad_buffer(x.id);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gx(i, j) += g[axis == 0 ? j : i] / denom;
    });
}

Var sum_all(Var x) {
    Tape& tape = tape_of(x);
    double s = 0.0;
    for (double v : tape.value(x).data()) s += v;
    return tape.record(Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g, const Tensor&) {
        if (!t.requires_grad(x)) return;
        const double gv = g[0];
        for (double& v : t.grad_buffer(x.id).data()) v += gv;
    });
}

Var mean_all(Var x) {
    Tape& tape = tape_of(x);
    const std::size_t count = tape.value(x).size();
    if (count == 0) throw DimensionError("mean_all: empty tensor");
    return scale(sum_all(x), 1.0 / static_cast<double>(count));
}

Var pick(Var x, const std::vector<std::size_t>& index) {
    Tape& tape = tape_of(x);
    const Tensor& xv = tape.value(x);
    const std::size_t m = xv.rows(), n = xv.cols();
    if (index.size() != m) throw DimensionError("pick: index count does not match rows of " + shape_string(xv.shape()));
    Tensor out({m});
    for (std::size_t i = 0; i < m; ++i) {
        if (index[i] >= n) throw DimensionError("pick: column index out of range");
        out[i] = xv[i * n + index[i]];
    }
    return tape.record(std::move(out), {x}, [x, index, n](Tape& t, const Tensor& g, const Tensor&) {
        if (!t.requires_grad(x)) return;
        auto gx = t.grad_buffer(x.id).data();
        for (std::size_t i = 0; i < index.size(); ++i) gx[i * n + index[i]] += g[i];
    });
}

Var cross_entropy(Var logits, std::size_t label) {
    Tape& tape = tape_of(logits);
    const Tensor& lv = tape.value(logits);
    const std::size_t n = lv.size();
    if (label >= n) throw DimensionError("cross_entropy: label " + std::to_string(label) + " out of range");
    const double mx = *std::max_element(lv.data().begin(), lv.data().end());
    double sum = 0.0;
    for (double v : lv.data()) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    Tensor probs(lv.shape());
    for (std::size_t j = 0; j < n; ++j) probs[j] = std::exp(lv[j] - lse);
    return tape.record(Tensor::scalar(lse - lv[label]), {logits},
                       [logits, label, probs = std::move(probs)](Tape& t, const Tensor& g, const Tensor&) {
                           if (!t.requires_grad(logits)) return;
                           auto gl = t.grad_buffer(logits.id).data();
                           for (std::size_t j = 0; j < gl.size(); ++j)
                               gl[j] += g[0] * (probs[j] - (j == label ? 1.0 : 0.0));
                       });
}

namespace {

struct ConvGeometry {
    std::size_t batch, in_ch, height, width, out_ch, kernel, stride, pad, out_h, out_w;
    std::size_t col_rows() const { return in_ch * kernel * kernel; }
    std::size_t col_cols() const { return out_h * out_w; }
};

void im2col(const double* img, const ConvGeometry& g, double* col) {
    for (std::size_t c = 0; c < g.in_ch; ++c)
        for (std::size_t ky = 0; ky < g.kernel; ++ky)
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const std::size_t row = (c * g.kernel + ky) * g.kernel + kx;
                double* dst = col + row * g.col_cols();
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                            ix < static_cast<std::ptrdiff_t>(g.width);
                        dst[oy * g.out_w + ox] =
                            inside ? img[(c * g.height + static_cast<std::size_t>(iy)) * g.width + static_cast<std::size_t>(ix)]
                                   : 0.0;
                    }
                }
            }
}

void col2im(const double* col, const ConvGeometry& g, double* img) {
    for (std::size_t c = 0; c < g.in_ch; ++c)
        for (std::size_t ky = 0; ky < g.kernel; ++ky)
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const std::size_t row = (c * g.kernel + ky) * g.kernel + kx;
                const double* src = col + row * g.col_cols();
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                        img[(c * g.height + static_cast<std::size_t>(iy)) * g.width + static_cast<std::size_t>(ix)] +=
                            src[oy * g.out_w + ox];
                    }
                }
            }
}

} // namespace

Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad) {
    require_same_tape(x, weight);
    require_same_tape(x, bias);
    Tape& tape = tape_of(x);
    const Tensor& xv = tape.value(x);
    const Tensor& wv = tape.value(weight);
    if (xv.rank() != 4 || wv.rank() != 4 || wv.shape()[2] != wv.shape()[3] || wv.shape()[1] != xv.shape()[1]) {
        throw DimensionError("conv2d: incompatible input " + shape_string(xv.shape()) + " and weight " +
                             shape_string(wv.shape()));
    }
    if (stride == 0) throw DimensionError("conv2d: stride must be positive");
    ConvGeometry g{};
    g.batch = xv.shape()[0];
    g.in_ch = xv.shape()[1];
    g.height = xv.shape()[2];
    g.width = xv.shape()[3];
    g.out_ch = wv.shape()[0];
    g.kernel = wv.shape()[2];
    g.stride = stride;
    g.pad = pad;
    if (g.height + 2 * pad < g.kernel || g.width + 2 * pad < g.kernel) {
        throw DimensionError("conv2d: kernel larger than padded input " + shape_string(xv.shape()));
    }
    g.out_h = (g.height + 2 * pad - g.kernel) / stride + 1;
    g.out_w = (g.width + 2 * pad - g.kernel) / stride + 1;
    if (tape.value(bias).size() != g.out_ch) throw DimensionError("conv2d: bias size does not match output channels");

    const std::size_t in_size = g.in_ch * g.height * g.width;
    const std::size_t out_size = g.out_ch * g.col_cols();
    Tensor out({g.batch, g.out_ch, g.out_h, g.out_w});
    std::vector<double> col(g.col_rows() * g.col_cols());
    const Tensor& bv = tape.value(bias);
    for (std::size_t b = 0; b < g.batch; ++b) {
        im2col(xv.data().data() + b * in_size, g, col.data());
        double* o = out.data().data() + b * out_size;
        for (std::size_t oc = 0; oc < g.out_ch; ++oc)
            std::fill(o + oc * g.col_cols(), o + (oc + 1) * g.col_cols(), bv[oc]);
        gemm_nn(wv.data().data(), col.data(), o, g.out_ch, g.col_rows(), g.col_cols());
    }
    return tape.record(std::move(out), {x, weight, bias}, [x, weight, bias, g, in_size, out_size](Tape& t, const Tensor& grad, const Tensor&) {
        const Tensor& xv = t.value(x);
        const Tensor& wv = t.value(weight);
        std::vector<double> col(g.col_rows() * g.col_cols());
        std::vector<double> gcol(g.col_rows() * g.col_cols());
        const bool need_x = t.requires_grad(x);
        const bool need_w = t.requires_grad(weight);
        for (std::size_t b = 0; b < g.batch; ++b) {
            const double* gb = grad.data().data() + b * out_size;
            if (t.requires_grad(bias)) {
                auto gbias = t.grad_buffer(bias.id).data();
                for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
                    double s = 0.0;
                    for (std::size_t p = 0; p < g.col_cols(); ++p) s += gb[oc * g.col_cols() + p];
                    gbias[oc] += s;
                }
            }
            if (need_w) {
                im2col(xv.data().data() + b * in_size, g, col.data());
                gemm_nt(gb, col.data(), t.grad_buffer(weight.id).data().data(), g.out_ch, g.col_cols(), g.col_rows());
            }
            if (need_x) {
                std::fill(gcol.begin(), gcol.end(), 0.0);
                gemm_tn(wv.data().data(), gb, gcol.data(), g.col_rows(), g.out_ch, g.col_cols());
                col2im(gcol.data(), g, t.grad_buffer(x.id).data().data() + b * in_size);
            }
        }
    });
}

Var global_avg_pool(Var x) {
    Tape& tape = tape_of(x);
    const Tensor& xv = tape.value(x);
    if (xv.rank() != 4) throw DimensionError("global_avg_pool: expected [B,C,H,W], got " + shape_string(xv.shape()));
    const std::size_t b = xv.shape()[0], c = xv.shape()[1], hw = xv.shape()[2] * xv.shape()[3];
    if (hw == 0) throw DimensionError("global_avg_pool: empty spatial extent");
    Tensor out({b, c});
    for (std::size_t i = 0; i < b * c; ++i) {
        double s = 0.0;
        for (std::size_t p = 0; p < hw; ++p) s += xv[i * hw + p];
        out[i] = s / static_cast<double>(hw);
    }
    return tape.record(std::move(out), {x}, [x, b, c, hw](Tape& t, const Tensor& g, const Tensor&) {
        if (!t.requires_grad(x)) return;
        auto gx = t.grad_buffer(x.id).data();
        for (std::size_t i = 0; i < b * c; ++i) {
            const double v = g[i] / static_cast<double>(hw);
            for (std::size_t p = 0; p < hw; ++p) gx[i * hw + p] += v;
        }
    });
}

} // namespace gtp::num
