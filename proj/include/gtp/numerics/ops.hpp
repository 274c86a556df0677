#pragma once

#include "gtp/numerics/tape.hpp"

#include <cstddef>
#include <vector>

// Differentiable operations on tape values. Every op validates shapes,
// records its backward rule and rejects non-finite results.
namespace gtp::num {

inline constexpr double kLayerNormEps = 1e-5;

Var matmul(Var a, Var b);
/// a · bᵀ
Var matmul_nt(Var a, Var b);
/// aᵀ · b
Var matmul_tn(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
/// x[m×n] + bias[n] broadcast over rows.
Var add_bias(Var x, Var bias);
Var scale(Var x, double factor);
/// x / s for a single-element s.
Var divide_by_scalar(Var x, Var s);

Var relu(Var x);
Var sqrt(Var x);
Var square(Var x);

Var softmax_rows(Var x);
/// Row-wise log-softmax; entries with mask==false are excluded from the
/// normalizer and produce 0 in the output. Empty mask means all included.
Var log_softmax_rows(Var x, const std::vector<bool>& mask = {});
/// Normalizes the last axis to zero mean / unit variance, then applies gain and bias.
Var layernorm(Var x, Var gain, Var bias, double eps = kLayerNormEps);
/// Divides every row by its L2 norm; a zero row is an error.
Var normalize_rows(Var x);

Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(Var x, std::size_t begin, std::size_t end);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var reshape(Var x, Shape shape);

/// axis 0 → [1×n], axis 1 → [m×1]
Var mean_over_axis(Var x, std::size_t axis);
Var sum_all(Var x);
Var mean_all(Var x);
/// out[i] = x[i, index[i]]
Var pick(Var x, const std::vector<std::size_t>& index);

/// Cross-entropy of one row of logits against a class index.
Var cross_entropy(Var logits, std::size_t label);

/// x: [B, C, H, W], weight: [O, C, k, k], bias: [O] → [B, O, H', W'].
Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad);
/// [B, C, H, W] → [B, C]
Var global_avg_pool(Var x);

} // namespace gtp::num
