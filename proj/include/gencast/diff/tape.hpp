#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gencast/diff/tensor.hpp"

namespace gencast::diff {

class Tape;

/// Handle to a value recorded on a Tape (the DiffValue of the design notes).
/// Cheap to copy; valid only while its Tape is alive.
class Var {
public:
    Var() = default;

    bool valid() const noexcept { return tape_ != nullptr; }
    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t size() const { return value().size(); }
    bool requires_grad() const;
    /// Populated by Tape::backward for every participating value with requires_grad.
    const std::optional<Tensor>& grad() const;

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Adjoint storage for one reverse pass. Buffers are allocated lazily; at()
/// returns nullptr for values that do not need an adjoint in this pass.
class AdjointBuffer {
public:
    double* at(std::size_t id);

private:
    friend class Tape;
    std::vector<std::vector<double>> adj_;
    std::vector<char> wanted_;
    const Tape* tape_ = nullptr;
};

using BackwardFn = std::function<void(std::span<const double> out_adjoint, AdjointBuffer& adj)>;

/// Define-by-run record of primitive operations. Each forward pass builds a
/// fresh tape; reverse passes replay it in reverse record order and may be
/// repeated with different seeds.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = delete;
    Tape& operator=(Tape&&) = delete;

    Var leaf(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Records a primitive. `backward` is dropped when no input requires grad.
    Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward, const char* op);

    std::size_t size() const noexcept { return nodes_.size(); }
    bool contains(const Var& v) const noexcept { return v.tape() == this && v.id() < nodes_.size(); }
    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    const char* op_name(std::size_t id) const { return nodes_[id].op; }
    const std::optional<Tensor>& grad(std::size_t id) const { return nodes_[id].grad; }

    /// Full reverse pass from a scalar; stores grad on every participating
    /// requires_grad value.
    void backward(const Var& output);

    /// Vector-Jacobian product: seed^T * d(output)/d(wrt[i]).
    std::vector<Tensor> vjp(const Var& output, const Tensor& seed, std::span<const Var> wrt) const;

private:
    struct Node {
        Tensor value;
        bool requires_grad = false;
        const char* op = "leaf";
        BackwardFn backward;
        std::optional<Tensor> grad;
    };

    void run_reverse(std::size_t output_id, const Tensor& seed, AdjointBuffer& adj) const;

    std::vector<Node> nodes_;
};

/// d(output)/d(wrt[i]) for a scalar output.
std::vector<Tensor> grad(const Var& output, std::span<const Var> wrt);
std::vector<Tensor> grad(const Var& output, std::initializer_list<Var> wrt);

/// seed^T * d(outputs)/d(wrt[i]); seed must have the shape of outputs.
std::vector<Tensor> seeded_grad(const Var& outputs, const Tensor& seed, std::span<const Var> wrt);
std::vector<Tensor> seeded_grad(const Var& outputs, const Tensor& seed, std::initializer_list<Var> wrt);

/// A scalar-valued computation of one input, re-recorded on a fresh tape per call.
using ScalarFn = std::function<Var(Tape&, Var)>;

/// Worst elementwise relative error between reverse-mode and central
/// differences, with denominator max(|analytic|, |numeric|, 1e-12).
/// Throws NonFiniteValue if the function or a difference is NaN/Inf.
double check_gradients(const ScalarFn& fn, const Tensor& point, double eps = 1e-6);

}  // namespace gencast::diff
