#include "gencast/diff/tape.hpp"

#include <algorithm>
#include <cmath>

#include "gencast/error.hpp"

namespace gencast::diff {

const Tensor& Var::value() const {
    if (!tape_) throw DetachedInput("value() on an unbound Var");
    return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

const std::optional<Tensor>& Var::grad() const {
    if (!tape_) throw DetachedInput("grad() on an unbound Var");
    return tape_->grad(id_);
}

double* AdjointBuffer::at(std::size_t id) {
    if (!wanted_[id]) return nullptr;
    auto& buf = adj_[id];
    if (buf.empty()) buf.assign(tape_->value(id).size(), 0.0);
    return buf.data();
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward, const char* op) {
    bool needs = false;
    for (const Var& in : inputs) {
        if (!contains(in)) throw DetachedInput(std::string("operand of '") + op + "' is not on this tape");
        needs = needs || nodes_[in.id()].requires_grad;
    }
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs;
    n.op = op;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

void Tape::run_reverse(std::size_t output_id, const Tensor& seed, AdjointBuffer& adj) const {
    double* out = adj.at(output_id);
    if (!out) return;
    std::copy(seed.data().begin(), seed.data().end(), out);
    for (std::size_t k = output_id + 1; k-- > 0;) {
        const Node& n = nodes_[k];
        if (!n.backward || !adj.wanted_[k] || adj.adj_[k].empty()) continue;
        // Closures only touch other entries of adj_, so this reference stays valid.
        const std::vector<double>& g = adj.adj_[k];
        n.backward(std::span<const double>(g.data(), g.size()), adj);
    }
}

void Tape::backward(const Var& output) {
    if (!contains(output)) throw DetachedInput("backward output is not on this tape");
    const Tensor& out = nodes_[output.id()].value;
    if (out.size() != 1) throw NonScalarOutput("backward requires a scalar output, got " + to_string(out.shape()));

    AdjointBuffer adj;
    adj.tape_ = this;
    adj.adj_.resize(nodes_.size());
    adj.wanted_.assign(nodes_.size(), 0);
    for (std::size_t k = 0; k <= output.id(); ++k) adj.wanted_[k] = nodes_[k].requires_grad ? 1 : 0;

    run_reverse(output.id(), Tensor(out.shape(), 1.0), adj);
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
        if (!adj.adj_[k].empty()) {
            nodes_[k].grad = Tensor(nodes_[k].value.shape(), std::move(adj.adj_[k]));
        } else {
            nodes_[k].grad.reset();
        }
    }
}

std::vector<Tensor> Tape::vjp(const Var& output, const Tensor& seed, std::span<const Var> wrt) const {
    if (!contains(output)) throw DetachedInput("vjp output is not on this tape");
    const Tensor& out = nodes_[output.id()].value;
    if (seed.shape() != out.shape()) {
        throw ShapeMismatch("seed shape " + to_string(seed.shape()) + " != output shape " + to_string(out.shape()));
    }
    for (const Var& w : wrt) {
        if (!contains(w) || !nodes_[w.id()].requires_grad) {
            throw DetachedInput("gradient requested for a value that is not a differentiable member of this tape");
        }
    }

    std::size_t lowest = output.id();
    for (const Var& w : wrt) lowest = std::min(lowest, w.id());

    AdjointBuffer adj;
    adj.tape_ = this;
    adj.adj_.resize(nodes_.size());
    adj.wanted_.assign(nodes_.size(), 0);
    // Values recorded before the earliest wrt entry cannot lie between it and the output.
    for (std::size_t k = lowest; k <= output.id(); ++k) adj.wanted_[k] = nodes_[k].requires_grad ? 1 : 0;

    run_reverse(output.id(), seed, adj);

    std::vector<Tensor> result;
    result.reserve(wrt.size());
    for (const Var& w : wrt) {
        const auto& buf = adj.adj_[w.id()];
        if (buf.empty()) {
            result.emplace_back(nodes_[w.id()].value.shape(), 0.0);
        } else {
            result.emplace_back(nodes_[w.id()].value.shape(), buf);
        }
    }
    return result;
}

std::vector<Tensor> grad(const Var& output, std::span<const Var> wrt) {
    if (!output.valid()) throw DetachedInput("grad of an unbound Var");
    if (output.size() != 1) throw NonScalarOutput("grad requires a scalar output, got " + to_string(output.shape()));
    return output.tape()->vjp(output, Tensor(output.shape(), 1.0), wrt);
}

std::vector<Tensor> grad(const Var& output, std::initializer_list<Var> wrt) {
    return grad(output, std::span<const Var>(wrt.begin(), wrt.size()));
}

std::vector<Tensor> seeded_grad(const Var& outputs, const Tensor& seed, std::span<const Var> wrt) {
    if (!outputs.valid()) throw DetachedInput("seeded_grad of an unbound Var");
    return outputs.tape()->vjp(outputs, seed, wrt);
}

std::vector<Tensor> seeded_grad(const Var& outputs, const Tensor& seed, std::initializer_list<Var> wrt) {
    return seeded_grad(outputs, seed, std::span<const Var>(wrt.begin(), wrt.size()));
}

double check_gradients(const ScalarFn& fn, const Tensor& point, double eps) {
    Tensor analytic;
    {
        Tape tape;
        Var x = tape.leaf(point, true);
        Var y = fn(tape, x);
        if (y.size() != 1) throw NonScalarOutput("check_gradients requires a scalar function");
        if (!std::isfinite(y.value()[0])) throw NonFiniteValue("function value is not finite at the check point");
        analytic = grad(y, {x})[0];
    }
    auto eval = [&](const Tensor& p) {
        Tape tape;
        Var x = tape.leaf(p, false);
        double v = fn(tape, x).value()[0];
        if (!std::isfinite(v)) throw NonFiniteValue("function value is not finite near the check point");
        return v;
    };

    double worst = 0.0;
    Tensor probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double x0 = point[i];
        probe[i] = x0 + eps;
        const double fp = eval(probe);
        probe[i] = x0 - eps;
        const double fm = eval(probe);
        probe[i] = x0;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = analytic[i];
        if (!std::isfinite(numeric) || !std::isfinite(a)) throw NonFiniteValue("non-finite gradient component");
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
        worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    return worst;
}

}  // namespace gencast::diff
