#include "gtp/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace gtp::num {
namespace {

double evaluate(const ScalarFunction& f, const std::vector<Tensor>& leaves) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(leaves.size());
    for (const Tensor& t : leaves) vars.push_back(tape.constant(t));
    return f(tape, vars).value().item();
}

} // namespace

GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Tensor>& leaves, double h, double tol) {
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Var> vars;
        for (const Tensor& t : leaves) vars.push_back(tape.leaf(t));
        Var out = f(tape, vars);
        tape.backward(out);
        for (Var v : vars) analytic.push_back(tape.grad(v));
    }

    GradCheckReport report;
    std::vector<Tensor> probe = leaves;
    for (std::size_t l = 0; l < leaves.size(); ++l) {
        Tensor numeric(leaves[l].shape());
        for (std::size_t i = 0; i < leaves[l].size(); ++i) {
            const double x0 = leaves[l][i];
            probe[l][i] = x0 + h;
            const double up = evaluate(f, probe);
            probe[l][i] = x0 - h;
            const double down = evaluate(f, probe);
            probe[l][i] = x0;
            numeric[i] = (up - down) / (2.0 * h);
        }
        double diff = 0.0;
        for (std::size_t i = 0; i < numeric.size(); ++i) diff = std::max(diff, std::abs(numeric[i] - analytic[l][i]));
        const double scale = std::max(max_abs(numeric), max_abs(analytic[l]));
        report.leaf_errors.push_back(scale > 0.0 ? diff / scale : diff);
    }
    report.max_relative_error =
        report.leaf_errors.empty() ? 0.0 : *std::max_element(report.leaf_errors.begin(), report.leaf_errors.end());
    report.passed = report.max_relative_error < tol;
    return report;
}

} // namespace gtp::num
