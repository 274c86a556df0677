#include "gtp/numerics/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gtp::num {

void ParameterSet::add(std::string name, Tensor value) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
}

bool ParameterSet::contains(const std::string& name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::size_t ParameterSet::index_of(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw std::out_of_range("unknown parameter: " + name);
    return static_cast<std::size_t>(it - names_.begin());
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const Tensor& t : values_) n += t.size();
    return n;
}

BoundParameters::BoundParameters(Tape& tape, const ParameterSet& params, bool requires_grad)
    : tape_(&tape), params_(&params) {
    vars_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) vars_.push_back(tape.leaf(params.value(i), requires_grad));
}

BoundParameters::BoundParameters(const ParameterSet& params, std::vector<Var> vars)
    : tape_(vars.empty() ? nullptr : vars.front().tape), params_(&params), vars_(std::move(vars)) {
    if (vars_.size() != params.size()) throw std::invalid_argument("BoundParameters: one value per parameter required");
    for (std::size_t i = 0; i < vars_.size(); ++i) {
        if (vars_[i].tape != tape_ || vars_[i].value().shape() != params.value(i).shape()) {
            throw DimensionError("BoundParameters: value for " + params.name(i) + " has the wrong tape or shape");
        }
    }
}

std::vector<Tensor> BoundParameters::gradients() const {
    std::vector<Tensor> out;
    out.reserve(vars_.size());
    for (Var v : vars_) out.push_back(tape_->grad(v));
    return out;
}

Tensor random_normal(Shape shape, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = dist(rng);
    return t;
}

Adam::Adam(const ParameterSet& params, Options options) : options_(options) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_.emplace_back(params.value(i).shape());
        v_.emplace_back(params.value(i).shape());
    }
}

void Adam::step(ParameterSet& params, const std::vector<Tensor>& grads, double lr) {
    if (grads.size() != params.size() || m_.size() != params.size()) {
        throw std::invalid_argument("Adam::step: gradient count does not match parameter count");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params.value(i).data();
        auto g = grads[i].data();
        auto m = m_[i].data();
        auto v = v_[i].data();
        if (g.size() != p.size()) throw DimensionError("Adam::step: gradient shape mismatch for " + params.name(i));
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g[j];
            v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g[j] * g[j];
            p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + options_.eps);
        }
    }
}

} // namespace gtp::num
