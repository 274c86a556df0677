#pragma once

#include "gtp/numerics/tape.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace gtp::num {

/// Ordered, named collection of learnable tensors. Insertion order is the
/// serialization and optimizer order.
class ParameterSet {
public:
    void add(std::string name, Tensor value);
    bool contains(const std::string& name) const;
    std::size_t index_of(const std::string& name) const;

    Tensor& at(const std::string& name) { return values_[index_of(name)]; }
    const Tensor& at(const std::string& name) const { return values_[index_of(name)]; }

    std::size_t size() const noexcept { return values_.size(); }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    Tensor& value(std::size_t i) { return values_.at(i); }
    const Tensor& value(std::size_t i) const { return values_.at(i); }
    std::size_t scalar_count() const;

    friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
};

/// A ParameterSet placed on a tape as leaves.
class BoundParameters {
public:
    BoundParameters(Tape& tape, const ParameterSet& params, bool requires_grad = true);
    /// Binds existing tape values, one per parameter in order.
    BoundParameters(const ParameterSet& params, std::vector<Var> vars);

    Var operator[](const std::string& name) const { return vars_[params_->index_of(name)]; }
    Var at(std::size_t i) const { return vars_.at(i); }
    /// Gradients in parameter order, zero-filled where unreachable.
    std::vector<Tensor> gradients() const;

private:
    Tape* tape_;
    const ParameterSet* params_;
    std::vector<Var> vars_;
};

Tensor random_normal(Shape shape, double stddev, std::mt19937_64& rng);

/// Adam with bias correction.
class Adam {
public:
    struct Options {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    explicit Adam(const ParameterSet& params) : Adam(params, Options{}) {}
    Adam(const ParameterSet& params, Options options);

    void step(ParameterSet& params, const std::vector<Tensor>& grads, double lr);
    std::uint64_t steps_taken() const noexcept { return t_; }

private:
    Options options_;
    std::vector<Tensor> m_, v_;
    std::uint64_t t_ = 0;
};

} // namespace gtp::num
