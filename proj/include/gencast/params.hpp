#pragma once

#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "gencast/diff/tape.hpp"

namespace gencast {

using diff::Shape;
using diff::Tape;
using diff::Tensor;
using diff::Var;

struct Parameter {
    std::string name;
    Tensor value;
    bool trainable = true;
};

/// Ordered, named collection of model tensors.
class ParameterSet {
public:
    Tensor& add(const std::string& name, Tensor value, bool trainable = true);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    /// Position in items(), or npos.
    std::size_t index_of(const std::string& name) const;
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
    const Tensor& value(const std::string& name) const;
    Tensor& value(const std::string& name);
    const Parameter& get(const std::string& name) const;
    Parameter& get(const std::string& name);

    std::vector<Parameter>& items() { return items_; }
    const std::vector<Parameter>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }
    /// Total scalar count over trainable tensors.
    std::size_t trainable_count() const;

private:
    std::vector<Parameter> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

/// A ParameterSet placed on a tape: trainable tensors become leaves with
/// requires_grad, the rest become constants.
class BoundParameters {
public:
    BoundParameters(Tape& tape, const ParameterSet& params);

    Var operator()(const std::string& name) const;
    /// Optional parameter: an invalid Var when absent.
    Var maybe(const std::string& name) const;
    Tape& tape() const { return *tape_; }
    const ParameterSet& params() const { return *params_; }

    /// Gradients after Tape::backward, aligned with params().items(); zeros
    /// for tensors that did not participate or are frozen.
    std::vector<Tensor> gradients() const;

private:
    Tape* tape_;
    const ParameterSet* params_;
    std::vector<Var> vars_;
};

}  // namespace gencast
