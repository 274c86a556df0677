#pragma once

#include "gtp/numerics/tensor.hpp"

#include <cmath>
#include <vector>

namespace gtp::testing {

// Literal evaluation of the contrastive loss: explicit loops over every
// ordered positive pair and every k != i in the denominator.
inline double brute_force_nt_xent(const num::Tensor& z, double tau) {
    const std::size_t n = z.rows(), d = z.cols();
    auto sim = [&](std::size_t a, std::size_t b) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t t = 0; t < d; ++t) {
            dot += z(a, t) * z(b, t);
            na += z(a, t) * z(a, t);
            nb += z(b, t) * z(b, t);
        }
        return dot / (std::sqrt(na) * std::sqrt(nb));
    };
    double total = 0.0;
    for (std::size_t m = 0; m < n / 2; ++m) {
        for (auto [i, j] : {std::pair{2 * m, 2 * m + 1}, std::pair{2 * m + 1, 2 * m}}) {
            double denom = 0.0;
            for (std::size_t k = 0; k < n; ++k)
                if (k != i) denom += std::exp(sim(i, k) / tau);
            total += -std::log(std::exp(sim(i, j) / tau) / denom);
        }
    }
    return total / static_cast<double>(n);
}

// P(score+ > score−) + ½ P(=) by counting every positive/negative pair.
inline double pair_count_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double num = 0.0, pos = 0.0, neg = 0.0;
    for (int v : y) (v ? pos : neg) += 1.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    return num / (pos * neg);
}

struct DelongOracle {
    double auc_a, auc_b, z;
};

// Structural components V10/V01 by explicit double loops.
inline DelongOracle delong_loops(const std::vector<double>& a, const std::vector<double>& b, const std::vector<int>& y) {
    std::vector<double> pa, pb, na, nb;
    for (std::size_t i = 0; i < y.size(); ++i) {
        (y[i] ? pa : na).push_back(a[i]);
        (y[i] ? pb : nb).push_back(b[i]);
    }
    const double m = static_cast<double>(pa.size()), n = static_cast<double>(na.size());
    auto psi = [](double x, double t) { return x > t ? 1.0 : (x == t ? 0.5 : 0.0); };
    std::vector<double> v10a(pa.size()), v10b(pa.size()), v01a(na.size()), v01b(na.size());
    double aa = 0, ab = 0;
    for (std::size_t i = 0; i < pa.size(); ++i)
        for (std::size_t j = 0; j < na.size(); ++j) {
            v10a[i] += psi(pa[i], na[j]) / n;
            v10b[i] += psi(pb[i], nb[j]) / n;
            v01a[j] += psi(pa[i], na[j]) / m;
            v01b[j] += psi(pb[i], nb[j]) / m;
            aa += psi(pa[i], na[j]);
            ab += psi(pb[i], nb[j]);
        }
    aa /= m * n;
    ab /= m * n;
    auto s = [](const std::vector<double>& x, double mx, const std::vector<double>& u, double mu) {
        double c = 0;
        for (std::size_t i = 0; i < x.size(); ++i) c += (x[i] - mx) * (u[i] - mu);
        return c / (static_cast<double>(x.size()) - 1.0);
    };
    const double s10 = s(v10a, aa, v10a, aa) + s(v10b, ab, v10b, ab) - 2 * s(v10a, aa, v10b, ab);
    const double s01 = s(v01a, aa, v01a, aa) + s(v01b, ab, v01b, ab) - 2 * s(v01a, aa, v01b, ab);
    return {aa, ab, (aa - ab) / std::sqrt(s10 / m + s01 / n)};
}

} // namespace gtp::testing
